class MXError(Exception):
    """Base class for all errors raised by mxray."""


class DomainError(MXError, ValueError):
    """An argument lies outside the domain of an operation."""


class DegenerateError(DomainError):
    """Zero-area or zero-length geometric input."""


class ProjectionError(MXError):
    """A ray from a source does not reach the detector segment."""


class ConfigError(MXError, ValueError):
    """Invalid geometry, grid or pipeline configuration."""


class ShapeError(MXError, ValueError):
    """Tensor dimensions do not agree with the weights or grid."""


class InsufficientViewsError(MXError):
    pass


class InconsistentAnnotationError(MXError):
    pass


class GenerationError(MXError):
    pass
