"""Harmonic Hermitian metrics with prescribed pole singularities on flat
bundles over punctured surfaces, and extraction/verification of the
meromorphic one-forms with twisted coefficients that they carry."""

__version__ = "0.1.0"

from .errors import (
    AdmissibilityError,
    ConfigError,
    EnergyIncreaseError,
    NonConvergenceError,
    SingularMatrixError,
    VerificationError,
)

__all__ = [
    "AdmissibilityError",
    "ConfigError",
    "EnergyIncreaseError",
    "NonConvergenceError",
    "SingularMatrixError",
    "VerificationError",
    "__version__",
]
