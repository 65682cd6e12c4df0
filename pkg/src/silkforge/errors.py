"""Exception hierarchy shared across the package.

Two broad branches matter for the CLI exit-code mapping: data/validation
problems (exit 2) and numeric failures (exit 3). Everything derives from
SilkforgeError so callers can catch package errors in one clause.
"""


class SilkforgeError(Exception):
    """Base class for all package errors."""


class DataError(SilkforgeError):
    """Input data, format, or state problems (CLI exit code 2)."""


class NumericFailure(SilkforgeError):
    """Numeric breakdowns during training or inference (CLI exit code 3)."""


class ValidationError(DataError):
    """A value violates a domain invariant (bad residue, bad range, ...)."""


class FormatError(DataError):
    """A file or byte stream does not match its declared format."""


class TooShortError(DataError):
    """A sequence is too short for the requested operation."""


class StateError(DataError):
    """Operation applied to an object in the wrong state."""


class ConfigError(DataError):
    """Inconsistent or invalid configuration."""


class NetworkError(DataError):
    """Remote fetch failed; carries the HTTP status when one was received."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class EmptyInputError(DataError):
    """An operation that needs at least one element got none."""


class DecodeError(DataError):
    """Token ids cannot be decoded back to domain values."""


class LengthError(DataError):
    """Length constraint violated (context overflow, unequal lengths)."""


class IntegrityError(DataError):
    """A persisted artifact is corrupt or inconsistent with its header."""


class PromptError(DataError):
    """Sampling was asked to start from an empty prompt."""


class GraphError(NumericFailure):
    """Backward pass requested on a detached or grad-free graph."""


class EmptyMaskError(NumericFailure):
    """A loss was requested with no active positions in the mask."""


class NumericError(NumericFailure):
    """Non-finite values encountered where finite ones are required."""


class GenerationError(NumericFailure):
    """Sequence generation produced no usable residues."""
