"""Exception types shared across the package."""


class RelvoxError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(RelvoxError, ValueError):
    """A tensor has the wrong rank, axis length, or channel count."""


class NonFiniteError(ShapeError):
    """A public operation produced NaN or Inf values."""


class ConfigError(RelvoxError, ValueError):
    """A model or run configuration is invalid."""


class ConsistencyError(RelvoxError, ValueError):
    """An activation cache does not match the network it is used with."""


class FormatError(RelvoxError, ValueError):
    """A binary file is corrupt or truncated.

    `offset` is the byte position at which decoding failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingDiverged(RelvoxError, RuntimeError):
    """Training hit a non-finite loss.  Carries the last epoch that completed."""

    def __init__(self, message, last_good_epoch, log):
        super().__init__(message)
        self.last_good_epoch = last_good_epoch
        self.log = log
