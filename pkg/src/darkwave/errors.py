"""Exception taxonomy shared by all darkwave modules."""


class DarkwaveError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DarkwaveError, ValueError):
    """Array shapes or sizes violate an operation's contract."""


class ParameterError(DarkwaveError, ValueError):
    """A scalar argument is outside its valid range."""


class FormatError(DarkwaveError):
    """A file on disk is not a valid darkwave artifact."""


class ConfigError(DarkwaveError):
    """A run configuration is inconsistent or references missing artifacts."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class CacheError(DarkwaveError):
    """A required latent-cache entry is missing."""


class FreezeViolationError(DarkwaveError):
    """Frozen backbone parameters changed. Always a hard failure."""


class TrainingError(DarkwaveError):
    """Training diverged or failed to reach its convergence gate."""
