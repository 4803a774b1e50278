"""Exception hierarchy.

Every numerical failure derives from :class:`NumericalError` so callers (and
the command line) can separate numerical breakdowns from configuration
mistakes.
"""


class NumericalError(RuntimeError):
    """Base class for failures of a numerical procedure."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class CircumcenterOutsideTriangle(NumericalError):
    pass


class DegenerateImageTriangle(NumericalError):
    pass


class DegenerateTriangle(NumericalError):
    pass


class NonSPDCoefficient(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularOperator(NumericalError):
    pass


class DegenerateMetric(NumericalError):
    pass


class UnadaptedTriangle(NumericalError):
    pass


class UnadaptedMesh(NumericalError):
    def __init__(self, message, triangles=None):
        super().__init__(message)
        self.triangles = triangles


class PointLocationFailure(NumericalError):
    pass


class SingularUpscaledOperator(NumericalError):
    pass


class SegmentWalkFailure(NumericalError):
    pass


class EmptySubmesh(NumericalError):
    pass


class GridIncompatible(ValueError):
    pass


class DegenerateFit(ValueError):
    pass


class IOFailure(OSError):
    pass
