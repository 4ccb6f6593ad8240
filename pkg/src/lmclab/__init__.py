"""Desk-scale laboratory for weight merging and mode-connectivity-guided
continued fine-tuning on synthetic two-task benchmarks."""

from .errors import (
    CompatibilityError,
    ConfigError,
    DomainError,
    FormatError,
    LabError,
    StageError,
    TrainingDivergedError,
)
from .params import ParamVector, interpolate

__version__ = "0.1.0"

__all__ = [
    "CompatibilityError",
    "ConfigError",
    "DomainError",
    "FormatError",
    "LabError",
    "ParamVector",
    "StageError",
    "TrainingDivergedError",
    "interpolate",
]
