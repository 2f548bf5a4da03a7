"""Exception types shared across the package."""


class DellError(Exception):
    """Base class for all package-specific errors."""


class ParseError(DellError):
    """Raised when a structured text file cannot be read at all."""


class ValidationError(DellError):
    """Raised when parsed content violates a schema invariant.

    The message names the violated invariant so callers can surface it
    directly.
    """


class SchemaVersionError(ParseError):
    """Raised when a file carries an unsupported schema version."""


class InsufficientDataError(DellError):
    """Raised when an operation is given fewer samples/classes than it needs."""


class ShapeError(DellError):
    """Raised on malformed array inputs (wrong rank, size, or dtype)."""


class ActionRangeError(DellError):
    """Raised when a policy emits an action outside the game's action set."""


class DivergenceError(DellError):
    """Raised when a training procedure produces non-finite parameters."""


class HalfPrecisionOverflowError(DellError):
    """Raised when policy weights exceed the float16 representable range."""


class CheckpointError(DellError):
    """Raised when a binary checkpoint is missing, truncated, or corrupt."""
