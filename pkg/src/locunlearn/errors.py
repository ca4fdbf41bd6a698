"""Exception types shared across the package."""


class LocUnlearnError(Exception):
    """Base class for all package errors."""


class ConfigError(LocUnlearnError, ValueError):
    """Invalid configuration or argument combination."""


class DimensionError(LocUnlearnError, ValueError):
    """Input shape does not match what a layer expects."""


class NumericOverflowError(LocUnlearnError, ArithmeticError):
    """Non-finite values appeared in activations or loss."""


class ValidationError(LocUnlearnError, ValueError):
    """Data failed a content check (label range, finiteness, ...)."""


class ParseError(LocUnlearnError, ValueError):
    """A data file could not be parsed.

    ``offset`` is the byte offset in the file where parsing failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class MissingArtifactError(LocUnlearnError, FileNotFoundError):
    """An expected checkpoint or manifest is not on disk."""
