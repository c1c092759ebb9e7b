"""P1 finite elements: fields, assembly, SPD solves and flux recovery."""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
import scipy.sparse as sp
from numpy.typing import ArrayLike, NDArray
from scipy.sparse.linalg import LinearOperator, cg

from .config import SolverSettings
from .exceptions import (
    AssemblyError,
    FieldMismatchError,
    ProblemDataError,
    SolverError,
)
from .mesh import Mesh

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

_MASS_REFERENCE = (np.ones((3, 3)) + np.eye(3)) / 12.0


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal P1 coefficients tied to one mesh."""

    mesh: Mesh
    values: FloatArray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.mesh.n_vertices,):
            raise FieldMismatchError(
                f"Scalar field needs {self.mesh.n_vertices} values, "
                f"got shape {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def boundary_values(self) -> FloatArray:
        return self.values[self.mesh.boundary_nodes]

    def _other(self, other: "ScalarField | float") -> FloatArray | float:
        if isinstance(other, ScalarField):
            if other.mesh is not self.mesh:
                raise FieldMismatchError("Fields live on different meshes")
            return other.values
        return float(other)

    def __add__(self, other: "ScalarField | float") -> "ScalarField":
        return ScalarField(self.mesh, self.values + self._other(other))

    def __sub__(self, other: "ScalarField | float") -> "ScalarField":
        return ScalarField(self.mesh, self.values - self._other(other))

    def __mul__(self, other: float) -> "ScalarField":
        return ScalarField(self.mesh, self.values * float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "ScalarField":
        return ScalarField(self.mesh, self.values / float(other))

    def __neg__(self) -> "ScalarField":
        return ScalarField(self.mesh, -self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Nodal P1 vector field, shape (nv, 2)."""

    mesh: Mesh
    values: FloatArray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.mesh.n_vertices, 2):
            raise FieldMismatchError(
                f"Vector field needs shape ({self.mesh.n_vertices}, 2), "
                f"got {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, mesh: Mesh) -> "VectorField":
        return cls(mesh, np.zeros((mesh.n_vertices, 2)))

    @property
    def boundary_values(self) -> FloatArray:
        return self.values[self.mesh.boundary_nodes]

    def __add__(self, other: "VectorField") -> "VectorField":
        if other.mesh is not self.mesh:
            raise FieldMismatchError("Fields live on different meshes")
        return VectorField(self.mesh, self.values + other.values)

    def __mul__(self, other: float) -> "VectorField":
        return VectorField(self.mesh, self.values * float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "VectorField":
        return VectorField(self.mesh, -self.values)


FieldLike = Union[ScalarField, ArrayLike]


def nodal_values(mesh: Mesh, field: FieldLike) -> FloatArray:
    """Values of a scalar field or a plain length-nv array."""
    if isinstance(field, ScalarField):
        if field.mesh is not mesh:
            raise FieldMismatchError("Scalar field is defined on another mesh")
        return field.values
    values = np.asarray(field, dtype=np.float64)
    if values.shape != (mesh.n_vertices,):
        raise FieldMismatchError(
            f"Expected {mesh.n_vertices} nodal values, got shape {values.shape}"
        )
    return values


def boundary_trace(mesh: Mesh, field: FieldLike) -> FloatArray:
    """Boundary-node values in boundary order.

    A :class:`ScalarField` is sampled at the boundary nodes; a plain array
    must already hold one value per boundary node.
    """
    if isinstance(field, ScalarField):
        return nodal_values(mesh, field)[mesh.boundary_nodes]
    values = np.asarray(field, dtype=np.float64)
    if values.shape != (mesh.n_boundary,):
        raise FieldMismatchError(
            f"Expected {mesh.n_boundary} boundary values, got shape {values.shape}"
        )
    return values


def _assemble(mesh: Mesh, blocks: FloatArray) -> sp.csr_matrix:
    tri = mesh.triangles
    shape = (mesh.n_triangles, 3, 3)
    rows = np.broadcast_to(tri[:, :, None], shape).ravel()
    cols = np.broadcast_to(tri[:, None, :], shape).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _element_coefficients(mesh: Mesh, coeff: ArrayLike) -> FloatArray:
    c = np.asarray(coeff, dtype=np.float64)
    if c.shape == (2, 2):
        c = np.broadcast_to(c, (mesh.n_triangles, 2, 2))
    if c.shape != (mesh.n_triangles, 2, 2):
        raise AssemblyError(
            f"Coefficient must be 2x2 or ({mesh.n_triangles}, 2, 2), got {c.shape}"
        )
    asym = np.abs(c - c.transpose(0, 2, 1)).max(axis=(1, 2))
    scale = 1.0 + np.abs(c).max(axis=(1, 2))
    bad = np.flatnonzero(asym > 1e-10 * scale)
    if bad.size:
        raise AssemblyError(f"Coefficient on element {bad[0]} is not symmetric")
    lowest = np.linalg.eigvalsh(0.5 * (c + c.transpose(0, 2, 1)))[:, 0]
    bad = np.flatnonzero(lowest < -1e-12)
    if bad.size:
        raise AssemblyError(
            f"Coefficient on element {bad[0]} is not positive definite "
            f"(eigenvalue {lowest[bad[0]]:.3e})"
        )
    return c


def stiffness_blocks(mesh: Mesh, coeff: ArrayLike | None = None) -> FloatArray:
    """Element stiffness matrices, shape (nt, 3, 3)."""
    grads = mesh.basis_gradients
    areas = mesh.element_areas
    if coeff is None:
        return areas[:, None, None] * np.einsum("eia,eja->eij", grads, grads)
    c = _element_coefficients(mesh, coeff)
    return areas[:, None, None] * np.einsum("eia,eab,ejb->eij", grads, c, grads)


def mass_blocks(mesh: Mesh, weight: ArrayLike | None = None) -> FloatArray:
    """Consistent element mass matrices, shape (nt, 3, 3)."""
    scale = mesh.element_areas
    if weight is not None:
        w = np.broadcast_to(
            np.asarray(weight, dtype=np.float64), (mesh.n_triangles,)
        )
        bad = np.flatnonzero(~(w > 0))
        if bad.size:
            raise AssemblyError(
                f"Mass weight on element {bad[0]} is not positive ({w[bad[0]]})"
            )
        scale = scale * w
    return scale[:, None, None] * _MASS_REFERENCE


def assemble_stiffness(
    mesh: Mesh, coeff: ArrayLike | None = None
) -> sp.csr_matrix:
    """Stiffness matrix K[i, j] = sum_T |T| (C_T grad phi_j) . grad phi_i.

    Parameters
    ----------
    mesh : Mesh
        The mesh.
    coeff : ArrayLike | None
        One symmetric positive semi-definite 2x2 matrix, or one per element.
        None means the identity.

    Raises
    ------
    AssemblyError
        If a coefficient is not symmetric or has an eigenvalue below -1e-12.
    """
    return _assemble(mesh, stiffness_blocks(mesh, coeff))


def assemble_mass(
    mesh: Mesh, weight: ArrayLike | None = None
) -> sp.csr_matrix:
    """Consistent P1 mass matrix, optionally weighted per element."""
    return _assemble(mesh, mass_blocks(mesh, weight))


@lru_cache(maxsize=64)
def h1_operator(mesh: Mesh) -> sp.csr_matrix:
    """K + M for the unit H1 form. Shared between callers; do not modify."""
    return (assemble_stiffness(mesh) + assemble_mass(mesh)).tocsr()


@lru_cache(maxsize=64)
def _unit_mass(mesh: Mesh) -> sp.csr_matrix:
    return assemble_mass(mesh)


def assemble_load(
    mesh: Mesh, f: FieldLike, mass: sp.csr_matrix | None = None
) -> FloatArray:
    """Load vector L = M f for the nodal interpolant of f."""
    values = nodal_values(mesh, f)
    matrix = _unit_mass(mesh) if mass is None else mass
    return np.asarray(matrix @ values)


def boundary_lumped_weights(mesh: Mesh, g: FieldLike) -> FloatArray:
    """Lumped friction coefficients c_b = g(b) w_b.

    The discrete friction functional everywhere in the package is
    sum_b c_b |v(b)|.

    Raises
    ------
    ProblemDataError
        If g is not strictly positive at some boundary node.
    """
    values = boundary_trace(mesh, g)
    bad = np.flatnonzero(~(values > 0))
    if bad.size:
        k = int(bad[0])
        raise ProblemDataError(
            f"Friction threshold must be > 0 on the boundary; "
            f"g = {values[k]:.3e} at boundary node {k} "
            f"(vertex {mesh.boundary_nodes[k]})"
        )
    return values * mesh.boundary_weights


def solve_spd(
    A: sp.spmatrix,
    rhs: ArrayLike,
    tol: float = 1e-12,
    maxit: int = 20000,
) -> FloatArray:
    """Solve an SPD system with Jacobi-preconditioned conjugate gradients.

    Raises
    ------
    SolverError
        If CG does not reach ``||Ax - rhs|| <= tol ||rhs||`` within
        ``maxit`` iterations; ``residual`` holds the relative residual.
    """
    b = np.asarray(rhs, dtype=np.float64)
    norm = float(np.linalg.norm(b))
    if norm == 0.0:
        return np.zeros_like(b)
    diag = np.asarray(A.diagonal(), dtype=np.float64)
    if np.any(diag <= 0):
        raise SolverError("Matrix has a non-positive diagonal entry")
    jacobi = LinearOperator(A.shape, matvec=lambda x: x / diag, dtype=np.float64)
    x, info = cg(A, b, rtol=tol, atol=0.0, maxiter=maxit, M=jacobi)
    if info != 0:
        residual = float(np.linalg.norm(A @ x - b)) / norm
        raise SolverError(
            f"CG did not converge in {maxit} iterations "
            f"(relative residual {residual:.3e}, tol {tol:.1e})",
            residual=residual,
        )
    return np.asarray(x)


def solve_with_fixed(
    A: sp.spmatrix,
    rhs: ArrayLike,
    fixed: ArrayLike,
    settings: SolverSettings | None = None,
) -> FloatArray:
    """Solve A x = rhs with x = 0 at the ``fixed`` indices.

    Equivalent to zeroing the fixed rows and columns and putting ones on
    the diagonal; the free block stays SPD.
    """
    settings = settings or SolverSettings()
    b = np.asarray(rhs, dtype=np.float64)
    free = np.ones(len(b), dtype=bool)
    free[np.asarray(fixed, dtype=np.int64)] = False
    x = np.zeros_like(b)
    if free.any():
        index = np.flatnonzero(free)
        block = sp.csr_matrix(A)[index][:, index]
        x[index] = solve_spd(block, b[index], settings.cg_tol, settings.cg_maxit)
    return x


def harmonic_extension(
    mesh: Mesh,
    boundary_values: ArrayLike,
    settings: SolverSettings | None = None,
) -> ScalarField:
    """Discrete harmonic function with the given boundary-node values."""
    settings = settings or SolverSettings()
    data = boundary_trace(mesh, boundary_values)
    bn = mesh.boundary_nodes
    values = np.zeros(mesh.n_vertices)
    values[bn] = data
    interior = mesh.interior_nodes
    if interior.size:
        K = assemble_stiffness(mesh)
        rhs = -(K[interior][:, bn] @ data)
        values[interior] = solve_spd(
            K[interior][:, interior], rhs, settings.cg_tol, settings.cg_maxit
        )
    return ScalarField(mesh, values)


def recover_boundary_flux(
    mesh: Mesh,
    u: FieldLike,
    f: FieldLike | None = None,
    operator: sp.spmatrix | None = None,
    load: ArrayLike | None = None,
    weights: ArrayLike | None = None,
) -> FloatArray:
    """Variationally consistent normal flux q_b = (A u - L)_b / w_b.

    ``operator`` defaults to the H1 form and ``load`` to M f, so that
    ``sum_b q_b w_b v_b = a(u, v) - (f, v)`` for every v spanned by the
    boundary basis functions.
    """
    values = nodal_values(mesh, u)
    A = h1_operator(mesh) if operator is None else operator
    if load is None:
        L = np.zeros(mesh.n_vertices) if f is None else assemble_load(mesh, f)
    else:
        L = np.asarray(load, dtype=np.float64)
    w = mesh.boundary_weights if weights is None else np.asarray(weights)
    residual = A @ values - L
    return np.asarray(residual[mesh.boundary_nodes] / w)


def gradient_p1(mesh: Mesh, u: FieldLike) -> FloatArray:
    """Constant gradient of u on each element, shape (nt, 2)."""
    values = nodal_values(mesh, u)
    return np.einsum("ei,eia->ea", values[mesh.triangles], mesh.basis_gradients)


def _element_to_nodes(mesh: Mesh, element_values: FloatArray) -> FloatArray:
    weights = mesh.element_areas
    total = np.zeros((mesh.n_vertices,) + element_values.shape[1:])
    mass = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(total, mesh.triangles[:, k], weights[:, None] * element_values)
        np.add.at(mass, mesh.triangles[:, k], weights)
    return total / mass[:, None]


def node_gradient(mesh: Mesh, u: FieldLike) -> VectorField:
    """Area-weighted average of the adjacent element gradients."""
    return VectorField(mesh, _element_to_nodes(mesh, gradient_p1(mesh, u)))


def vector_gradient(mesh: Mesh, V: VectorField | ArrayLike) -> FloatArray:
    """Element Jacobians dV_a/dx_b of a P1 vector field, shape (nt, 2, 2)."""
    if isinstance(V, VectorField):
        if V.mesh is not mesh:
            raise FieldMismatchError("Vector field is defined on another mesh")
        values = V.values
    else:
        values = np.asarray(V, dtype=np.float64)
    return np.einsum(
        "eia,eib->eab", values[mesh.triangles], mesh.basis_gradients
    )


def h1_inner(u: ScalarField, v: ScalarField) -> float:
    if u.mesh is not v.mesh:
        raise FieldMismatchError("Fields live on different meshes")
    return float(u.values @ (h1_operator(u.mesh) @ v.values))


def h1_norm(u: ScalarField) -> float:
    return float(np.sqrt(max(h1_inner(u, u), 0.0)))


def interpolate(
    fn: Callable[[FloatArray, FloatArray], ArrayLike], mesh: Mesh
) -> ScalarField:
    """Sample ``fn(x, y)`` at the vertices."""
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    values = np.asarray(fn(x, y), dtype=np.float64) * np.ones(mesh.n_vertices)
    return ScalarField(mesh, values)
