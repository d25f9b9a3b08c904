"""Skeleton-pose trajectory forecasting and frame-level anomaly scoring."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DegenerateLabelsError,
    DimensionError,
    MissingJointError,
    NonFiniteLossError,
    NumericError,
    ParseError,
    PoseGuardError,
    SchemaError,
    ShapeError,
    WeightError,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DegenerateLabelsError",
    "DimensionError",
    "MissingJointError",
    "NonFiniteLossError",
    "NumericError",
    "ParseError",
    "PoseGuardError",
    "SchemaError",
    "ShapeError",
    "WeightError",
    "__version__",
]
