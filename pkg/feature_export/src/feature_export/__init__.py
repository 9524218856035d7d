"""Bridge from photographs to arrangement-scene JSONL: crop each object
out of its image by a pixel box, encode the crop as a 512-dimensional
feature vector, and emit one scene line per image in the ingestion
format the arrangement-model package reads."""

from .encoder import ENCODERS, FEATURE_DIM, descriptor512, get_encoder
from .export import ExportError, ExportReport, export
from .specfile import CropSpec, SceneSpec, SpecFileError, load_crop_specs

__version__ = "0.1.0"

__all__ = [
    "ENCODERS",
    "FEATURE_DIM",
    "CropSpec",
    "ExportError",
    "ExportReport",
    "SceneSpec",
    "SpecFileError",
    "descriptor512",
    "export",
    "get_encoder",
    "load_crop_specs",
    "__version__",
]
