"""Backbone export utility: truncates EfficientNet-B4 at a feature block
and serializes the graph plus metadata for the anomaly detector."""

from .errors import ExportError, ExportValidationFailure, WeightsUnavailable
from .export import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    INPUT_SIZE,
    VALID_TAPS,
    ExportManifest,
    build_trunk,
    export_backbone,
)

__version__ = "0.1.0"

__all__ = [
    "ExportError",
    "ExportManifest",
    "ExportValidationFailure",
    "IMAGENET_MEAN",
    "IMAGENET_STD",
    "INPUT_SIZE",
    "VALID_TAPS",
    "WeightsUnavailable",
    "build_trunk",
    "export_backbone",
    "__version__",
]
