"""Exception hierarchy shared across the package."""


class MegaFSError(Exception):
    """Base class for all package errors."""


class DimensionError(MegaFSError, ValueError):
    """A tensor or code matrix has the wrong shape."""


class ValidationError(MegaFSError, ValueError):
    """A value violates a domain invariant (non-finite entry, out of range)."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class NumericError(MegaFSError, ArithmeticError):
    """A computation produced a non-finite or otherwise unusable value."""


class CapabilityError(MegaFSError):
    """A component was asked to do something it was not built for."""


class CheckpointError(MegaFSError):
    """A checkpoint directory is inconsistent with its manifest."""


class ConfigurationError(MegaFSError, ValueError):
    """A configuration is incomplete or invalid."""


class ImageIOError(MegaFSError, OSError):
    """An image could not be read or written in the supported format."""
