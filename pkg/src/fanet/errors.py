"""Exception hierarchy shared by all fanet modules.

The CLI maps these onto its exit-code contract: validation-type errors
exit 1, runtime/numerical errors exit 2.
"""


class FanetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(FanetError, ValueError):
    """A tensor shape does not satisfy an operation's contract."""


class ConfigError(FanetError, ValueError):
    """A configuration object violates its invariants."""


class ValidationError(FanetError, ValueError):
    """User-supplied input (flags, files, labels) failed validation."""


class ParseError(FanetError, ValueError):
    """A binary or text payload could not be decoded."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(FanetError, RuntimeError):
    """A computation produced non-finite values or diverged."""
