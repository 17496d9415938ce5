"""Image-to-container extractor feeding the instancematch pipeline."""

from .backends import ClassicalBackend, TorchBackend, make_backend
from .errors import ExtractorError, ModelLoadError, NoProposals
from .extraction import ExtractionJob, extract, extract_queries, extract_templates

__all__ = [
    "ClassicalBackend",
    "ExtractionJob",
    "ExtractorError",
    "ModelLoadError",
    "NoProposals",
    "TorchBackend",
    "extract",
    "extract_queries",
    "extract_templates",
    "make_backend",
]

__version__ = "0.1.0"
