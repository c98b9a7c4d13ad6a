"""Exception types shared across the package."""


class ReachGuardError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ReachGuardError):
    """Shapes, dimensions or config values do not fit together."""


class NumericalError(ReachGuardError):
    """A non-finite value appeared where finite numbers are required."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class UsageError(ReachGuardError):
    """An API was called in a state or with arguments it does not support."""


class DataError(ReachGuardError):
    """Input data (batches, buffers, files) is malformed."""


class EnvError(ReachGuardError):
    """An environment could not be constructed or reset."""


class CheckpointError(ReachGuardError):
    """A checkpoint file is unreadable, corrupted or incompatible."""


class ConvergenceError(ReachGuardError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual
