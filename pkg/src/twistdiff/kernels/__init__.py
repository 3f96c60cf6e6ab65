"""Relaxation kernels with a compiled fast path and a pure numpy fallback.

The scalar sweep (the hot loop of every solve) uses the Cython extension
_sweep when it was built; set TWISTDIFF_PURE=1 to force the numpy path.
Matrix-valued sweeps and energy sums are numpy in both modes.
"""
import os

from .plan import SweepPlan
from .pure import edge_energy, gs_residual, sweep_matrix
from .pure import sweep_scalar as _sweep_scalar_pure

IMPLEMENTATION = "pure"
if not os.environ.get("TWISTDIFF_PURE"):
    try:
        from . import _sweep as _ext

        IMPLEMENTATION = "cython"
    except ImportError:
        _ext = None
else:
    _ext = None


def sweep_scalar(vals, sigma, omega, plan):
    if _ext is not None:
        return _ext.sweep_scalar(vals, sigma, omega, plan.nodes,
                                 plan.color_ptr, plan.ptr, plan.he_nbr,
                                 plan.he_w, plan.he_edge, plan.he_sign,
                                 plan.wsum)
    return _sweep_scalar_pure(vals, sigma, omega, plan)


__all__ = [
    "IMPLEMENTATION",
    "SweepPlan",
    "edge_energy",
    "gs_residual",
    "sweep_matrix",
    "sweep_scalar",
]
