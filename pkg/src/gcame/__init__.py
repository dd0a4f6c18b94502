"""G-CAME: Gaussian-kernel class-activation saliency maps for object detectors."""

from .backend import backend_name
from .saliency import (
    SaliencyResult,
    combine_saliency,
    compute_alpha,
    compute_sigma,
    explain,
    explain_detection,
    gaussian_mask,
    locate_center,
    partition_feature_maps,
)
from .toy_detector import Detection, Detector, DetectorConfig, LevelSpec, build_blob_detector

__version__ = "0.1.0"

__all__ = [
    "backend_name",
    "SaliencyResult",
    "combine_saliency",
    "compute_alpha",
    "compute_sigma",
    "explain",
    "explain_detection",
    "gaussian_mask",
    "locate_center",
    "partition_feature_maps",
    "Detection",
    "Detector",
    "DetectorConfig",
    "LevelSpec",
    "build_blob_detector",
    "__version__",
]
