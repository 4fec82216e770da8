"""Defensive distillation for random-forest botnet detectors on netflow data."""

from .distillation import DistilledDetector, UndistilledDetector, build_detector, generate_probability_labels
from .forest import ForestModel, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DistilledDetector",
    "ForestModel",
    "TrainConfig",
    "UndistilledDetector",
    "build_detector",
    "generate_probability_labels",
    "train",
]
