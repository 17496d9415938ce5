class ExtractorError(Exception):
    """Base class for extractor failures."""


class ModelLoadError(ExtractorError):
    """A pretrained backbone could not be loaded (weights missing, import
    failure, or incompatible install)."""


class NoProposals(ExtractorError):
    """An image yielded zero proposals above the confidence threshold."""


class ContainerWriteError(ExtractorError):
    """A record cannot be encoded in the container format."""
