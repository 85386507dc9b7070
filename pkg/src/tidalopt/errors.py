"""Exception hierarchy shared across the package."""


class TidalOptError(Exception):
    """Base class for all package errors."""


class MeshError(TidalOptError):
    pass


class SiteOutsideDomain(MeshError):
    pass


class DegenerateSize(MeshError):
    pass


class IndexOutOfRange(TidalOptError, IndexError):
    pass


class ShapeMismatch(TidalOptError, ValueError):
    pass


class SingularMatrix(TidalOptError):
    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class SolverError(TidalOptError):
    """A forward or adjoint solve failed. ``step`` is set for time-dependent runs."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (time step {step})"
        super().__init__(message)
        self.step = step


class NewtonDiverged(SolverError):
    pass


class NotConverged(SolverError):
    pass


class EmptyTrajectory(TidalOptError):
    pass


class EvaluationFailed(TidalOptError):
    """Raised when the reduced functional cannot be evaluated at ``m``."""

    def __init__(self, message, m=None):
        super().__init__(message)
        self.m = m


class LineSearchFailed(TidalOptError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class QPInfeasible(TidalOptError):
    def __init__(self, message, constraint=None):
        super().__init__(message)
        self.constraint = constraint


class ConfigError(TidalOptError):
    pass
