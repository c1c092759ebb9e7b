"""tresca-shape: P1 finite elements, shape gradients and volume-constrained
shape optimization for the scalar Tresca friction problem.
"""

from . import fem, mesh, shape_calc, vi_solve
from .config import OptimConfig, RunConfig, SolverSettings, parse_config
from .exceptions import (
    AdmissibilityError,
    AssemblyError,
    ConfigurationError,
    FieldMismatchError,
    GeometryError,
    MeshInversionError,
    MeshValidationError,
    ProblemDataError,
    SolverError,
    TrescaShapeError,
    VISolverError,
)
from .fem import ScalarField, VectorField
from .mesh import Mesh, generate_ellipse_mesh, load_mesh, save_mesh
from .models import ComparisonReport, OptimHistory, TrescaSolveReport
from .optimize import compare_boundaries, optimize
from .problem import ProblemData, builtin_problem_data
from .shape_calc import (
    classify_boundary,
    fd_shape_gradient,
    material_derivative,
    shape_gradient_density,
    shape_gradient_volume,
    solve_state,
)
from .vi_solve import solve_tresca_proximal, solve_tresca_switching

__all__ = [
    "fem",
    "mesh",
    "shape_calc",
    "vi_solve",
    "OptimConfig",
    "RunConfig",
    "SolverSettings",
    "parse_config",
    "AdmissibilityError",
    "AssemblyError",
    "ConfigurationError",
    "FieldMismatchError",
    "GeometryError",
    "MeshInversionError",
    "MeshValidationError",
    "ProblemDataError",
    "SolverError",
    "TrescaShapeError",
    "VISolverError",
    "ScalarField",
    "VectorField",
    "Mesh",
    "generate_ellipse_mesh",
    "load_mesh",
    "save_mesh",
    "ComparisonReport",
    "OptimHistory",
    "TrescaSolveReport",
    "compare_boundaries",
    "optimize",
    "ProblemData",
    "builtin_problem_data",
    "classify_boundary",
    "fd_shape_gradient",
    "material_derivative",
    "shape_gradient_density",
    "shape_gradient_volume",
    "solve_state",
    "solve_tresca_proximal",
    "solve_tresca_switching",
]


try:
    from ._version import __version__
except ImportError:
    __version__ = "0.0.0+unknown"
