"""Custom exceptions for tresca-shape."""


class TrescaShapeError(Exception):
    """Base exception for all tresca-shape errors."""

    pass


class MeshValidationError(TrescaShapeError):
    """Raised when a mesh or mesh file violates the topology rules."""

    pass


class GeometryError(TrescaShapeError):
    """Raised when boundary geometry cannot be evaluated."""

    pass


class MeshInversionError(GeometryError):
    """Raised when a deformation produces a non-positive triangle area."""

    def __init__(self, message: str, min_area: float):
        super().__init__(message)
        self.min_area = min_area


class AssemblyError(TrescaShapeError):
    """Raised when finite-element coefficients are not admissible."""

    pass


class ProblemDataError(TrescaShapeError):
    """Raised when problem data violates its sign requirements."""

    pass


class FieldMismatchError(TrescaShapeError):
    """Raised when a field is tied to another mesh or has the wrong size."""

    pass


class SolverError(TrescaShapeError):
    """Raised when an iterative solver does not converge."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class VISolverError(SolverError):
    """Raised when a variational-inequality solver fails."""

    pass


class AdmissibilityError(TrescaShapeError):
    """Raised when I + t grad V is not invertible on some element."""

    pass


class ConfigurationError(TrescaShapeError):
    """Raised when configuration is invalid."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key
