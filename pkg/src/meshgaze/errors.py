"""Exception hierarchy shared by all meshgaze modules."""


class MeshGazeError(Exception):
    """Base class for all library errors."""


class ParseError(MeshGazeError):
    """A mesh or data file could not be parsed in its declared format."""


class DegenerateMesh(MeshGazeError):
    """Mesh has no usable geometry (zero faces or fewer than 3 vertices)."""


class InvalidCount(MeshGazeError):
    """A requested sample/neighbor count is outside the valid range."""


class IsolatedVertex(MeshGazeError):
    """A vertex has no graph neighbors and no Euclidean fallback exists."""


class LengthMismatch(MeshGazeError):
    """Two per-vertex arrays that must agree in length do not."""


class ZeroVariance(MeshGazeError):
    """A statistic that divides by a standard deviation got a constant input."""


class AllFixated(MeshGazeError):
    """ROC analysis needs at least one non-fixated vertex."""


class TooShort(MeshGazeError):
    """A scanpath has fewer than 2 fixations, so no saccade exists."""


class ShapeMismatch(MeshGazeError):
    """Pixel feature maps that must share a shape do not."""


class DimMismatch(MeshGazeError):
    """A feature matrix does not have the configured channel count."""


class NoCoverage(MeshGazeError):
    """No view contributed a feature to any vertex; aggregation is undefined."""


class NonFiniteLoss(MeshGazeError):
    """Training produced a NaN/inf loss and was aborted."""


class ConfigError(MeshGazeError):
    """A run configuration file contains unknown keys or bad values."""
