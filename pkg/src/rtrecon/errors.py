"""Exception hierarchy shared by every module."""


class ReconError(Exception):
    """Base class for all domain failures raised by the package."""


class ConfigError(ReconError, ValueError):
    pass


class ShapeError(ReconError, ValueError):
    pass


class DomainError(ReconError, ValueError):
    """Non-finite data, empty ranges and similar numeric domain violations."""


class UsageError(ReconError, RuntimeError):
    pass


class FormatError(ReconError, ValueError):
    """Malformed tensor record or manifest.

    ``offset`` is the byte (or line) position where decoding failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset
