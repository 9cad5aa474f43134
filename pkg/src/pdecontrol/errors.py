"""Exception types shared across the package.

Numeric failures (non-finite values, factorization breakdown, divergence)
are distinguished from artifact/configuration problems so the CLI can map
them to distinct exit codes.
"""


class PdeControlError(Exception):
    """Base class for all package errors."""


class NonFiniteError(PdeControlError):
    """An input or intermediate value is NaN or infinite."""


class FactorizationFailure(PdeControlError):
    """A symmetric factorization failed; the system is numerically singular."""


class NoConvergence(PdeControlError):
    """An iterative routine did not reach its tolerance."""


class StepTooLarge(PdeControlError):
    """Gradient-descent step size violates the stability bound h < 1/lambda_max."""


class MissingDerivative(PdeControlError):
    """An evaluation bundle lacks a derivative the operator needs."""


class CacheMismatch(PdeControlError):
    """A cache or checkpoint does not match the requested architecture/operator."""


class ConfigError(PdeControlError):
    """Run configuration is missing, malformed, or fails schema validation."""


class MissingArtifact(PdeControlError):
    """An upstream artifact required by a command does not exist."""


class ChecksumMismatch(CacheMismatch):
    """An artifact's embedded arch hash disagrees with the active config."""
