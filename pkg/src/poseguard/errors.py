"""Exception hierarchy shared across the package.

The three mid-level classes map onto CLI exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class PoseGuardError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PoseGuardError):
    """Invalid or inconsistent configuration (bad flags, mismatched settings)."""


class ShapeError(ConfigError):
    """An array or sequence has the wrong shape or length."""


class DataError(PoseGuardError):
    """Problem with input data files or in-memory data values."""


class ParseError(DataError):
    """A record or file could not be parsed; message carries file context."""


class SchemaError(DataError):
    """A record parsed but violates the expected schema."""


class MissingJointError(DataError):
    """A joint required for a computation is absent or non-finite."""


class DimensionError(DataError):
    """Frame dimensions are zero, negative, or otherwise unusable."""


class WeightError(DataError):
    """A per-joint confidence weight is negative or non-finite."""


class DegenerateLabelsError(DataError):
    """Labels contain a single class; the requested metric is undefined."""


class NumericError(PoseGuardError):
    """A numeric computation produced unusable values."""


class NonFiniteLossError(NumericError):
    """A loss term evaluated to NaN or infinity."""
