"""Builds the optional compiled sweep kernel.

The package works without it: twistdiff.kernels falls back to a pure
numpy implementation when the extension is missing.
"""
import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "twistdiff.kernels._sweep",
                ["src/twistdiff/kernels/_sweep.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
