"""Single-opinion-score calibration by perceptual-constancy-constrained alternating optimization."""

from .engine import CalibrationResult, EpochReport, calibrate
from .metrics import MetricsReport, evaluate, krocc, mse, plcc, srcc
from .types import (
    CalibrationConfig,
    FeatureTable,
    LabelVector,
    NumericError,
    ValidationError,
    denormalize_labels,
    normalize_labels,
    seeded_rng,
)

__version__ = "0.1.0"
