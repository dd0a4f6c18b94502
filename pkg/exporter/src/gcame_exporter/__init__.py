"""Capture exporter: hook a torch detector, record activations/gradients."""

from .export import ExportResult, ExportSpec, export_capture
from .models import MODEL_REGISTRY, MiniOneStage, MiniTwoStage, build_model, load_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ExportResult",
    "ExportSpec",
    "export_capture",
    "MODEL_REGISTRY",
    "MiniOneStage",
    "MiniTwoStage",
    "build_model",
    "load_checkpoint",
    "__version__",
]
