"""Exception taxonomy; CLI exit codes hang off these."""


class TwistdiffError(Exception):
    """Base class for all package errors."""


class ConfigError(TwistdiffError):
    """Invalid or inconsistent run configuration (exit code 2)."""


class SingularMatrixError(TwistdiffError):
    """A matrix required to be invertible is numerically singular."""


class NotPositiveDefiniteError(TwistdiffError):
    """A matrix required to be positive definite is not."""


class AdmissibilityError(TwistdiffError):
    """A metric field violates the admissibility conditions."""


class NonConvergenceError(TwistdiffError):
    """An iterative solve did not reach its tolerance (exit code 3)."""


class EnergyIncreaseError(TwistdiffError):
    """The recorded modified energy increased across an accepted step.

    This indicates an inconsistency between the minimized and the
    recorded discrete energy and is treated as a hard error.
    """


class VerificationError(TwistdiffError):
    """Post-solve verification failed (exit code 4)."""
