"""Exception taxonomy shared by all instancematch modules."""


class InstanceMatchError(Exception):
    """Base class for every error raised by this package."""


class DimMismatch(InstanceMatchError):
    """Operands have incompatible dimensions or shapes."""


class NonFiniteError(InstanceMatchError):
    """An array that must be finite contains NaN or Inf."""


class EmptyForeground(InstanceMatchError):
    """A patch grid has no foreground patch, so pooling is undefined.

    ``index`` identifies the offending (instance, view) pair when the grid
    came from a template collection, else None.
    """

    def __init__(self, message: str, index: tuple | None = None):
        super().__init__(message)
        self.index = index


class ZeroVector(InstanceMatchError):
    """A vector with (near-)zero norm reached a cosine computation.

    ``index`` locates the vector in its containing batch when available.
    """

    def __init__(self, message: str, index: tuple | None = None):
        super().__init__(message)
        self.index = index


class DegenerateBatch(InstanceMatchError):
    """A contrastive batch cannot form valid anchor/positive/negative sets."""


class InvalidBox(InstanceMatchError):
    """A bounding box violates x_min < x_max, y_min < y_max, or finiteness."""


class EmptyUnion(InstanceMatchError):
    """Mask IoU was requested for two empty masks."""


class ConfigError(InstanceMatchError):
    """A config file or manifest is malformed or out of range."""


class RecordError(InstanceMatchError):
    """A proposal/ground-truth record line cannot be parsed."""


class ContainerError(InstanceMatchError):
    """Base class for tensor-container format errors."""


class BadMagic(ContainerError):
    """The file does not start with the expected magic or version."""


class TruncatedFile(ContainerError):
    """The file ends before the declared contents are complete."""


class DuplicateName(ContainerError):
    """Two records in one container share a name."""


class UnknownDtype(ContainerError):
    """A record declares a dtype code this format does not define."""
