"""Shape calculus for the Tresca energy.

The energy of a shape is the minimum of the discrete Tresca energy on its
mesh. Moving the vertices with a nodal field V, the minimizer stays fixed to
first order, so the shape derivative is the partial t-derivative of the
discrete energy at fixed nodal values. The volume form below evaluates that
derivative exactly, element by element; the boundary forms are the
corresponding Hadamard expressions and converge to it under refinement.
"""

import logging
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Literal

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from .config import ProblemKind, SolverSettings
from .exceptions import (
    AdmissibilityError,
    GeometryError,
    MeshInversionError,
)
from .fem import (
    FieldLike,
    ScalarField,
    VectorField,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    boundary_lumped_weights,
    gradient_p1,
    h1_norm,
    h1_operator,
    harmonic_extension,
    mass_blocks,
    nodal_values,
    node_gradient,
    recover_boundary_flux,
    solve_with_fixed,
    vector_gradient,
)
from .mesh import BoundaryGeometry, Mesh, boundary_geometry, deform_mesh, vector_values
from .models import TrescaSolveReport
from .problem import ProblemData
from .vi_solve import (
    Constraint,
    TrescaSystem,
    proximal_solve,
    solve_constrained_vi,
    solve_dirichlet,
    solve_neumann,
    switching_solve,
)

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

TrescaMethod = Literal["switching", "proximal"]
GradientTrace = Literal["flux", "average"]


class BoundaryLabel(IntEnum):
    """Boundary sets of a Tresca solution."""

    N = 0
    D = 1
    S_MINUS = 2
    S_PLUS = 3


@dataclass(frozen=True)
class BoundaryClassification:
    """One label per boundary node plus the tolerances that produced it."""

    labels: NDArray[np.int64]
    eps_u: float
    eps_g: float

    def count(self, label: BoundaryLabel) -> int:
        return int(np.count_nonzero(self.labels == label))

    def counts(self) -> dict[str, int]:
        return {label.name: self.count(label) for label in BoundaryLabel}

    def constraints(self) -> NDArray[np.int64]:
        """Sign constraints of the material-derivative VI."""
        mapping = np.empty(len(BoundaryLabel), dtype=np.int64)
        mapping[BoundaryLabel.N] = Constraint.FREE
        mapping[BoundaryLabel.D] = Constraint.EQ0
        mapping[BoundaryLabel.S_MINUS] = Constraint.LE0
        mapping[BoundaryLabel.S_PLUS] = Constraint.GE0
        return mapping[self.labels]


@dataclass(frozen=True, eq=False)
class StateSolution:
    """A solved state on one mesh: Tresca, Dirichlet or Neumann."""

    mesh: Mesh
    problem: ProblemKind
    u: ScalarField
    energy: float
    flux: FloatArray
    report: TrescaSolveReport | None = None


@dataclass(frozen=True)
class PullbackCoefficients:
    """Coefficients transporting the problem on the moved mesh back.

    ``tangential`` is per boundary edge; ``nodal_tangential`` is its
    length-weighted average at the boundary nodes.
    """

    t: float
    matrix: FloatArray
    jacobian: FloatArray
    tangential: FloatArray
    nodal_tangential: FloatArray


@dataclass(frozen=True, eq=False)
class ShapeGradientDensity:
    """Boundary density D with J'(V) ~ sum_b w_b D_b V_b . n_b."""

    mesh: Mesh
    values: FloatArray
    geometry: BoundaryGeometry
    problem: ProblemKind = "tresca"
    extras: dict[str, FloatArray] = field(default_factory=dict)

    def directional(self, V: VectorField | ArrayLike) -> float:
        vb = vector_values(self.mesh, V)[self.mesh.boundary_nodes]
        normal_speed = np.einsum("ba,ba->b", vb, self.geometry.normal)
        return float(np.sum(self.geometry.weight * self.values * normal_speed))


def _f_nodal(mesh: Mesh, data: ProblemData) -> FloatArray:
    return data.f_at(mesh.vertices)


def _g_nodal(mesh: Mesh, data: ProblemData) -> FloatArray:
    return data.g_at(mesh.vertices)


def _g_boundary(mesh: Mesh, data: ProblemData) -> FloatArray:
    return data.g_at(mesh.vertices[mesh.boundary_nodes])


def _data_gradient(
    mesh: Mesh, data: ProblemData, which: Literal["f", "g"]
) -> FloatArray:
    closed = data.grad_f if which == "f" else data.grad_g
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    if closed is not None:
        values = np.asarray(closed(x, y), dtype=np.float64)
        return np.broadcast_to(values, (mesh.n_vertices, 2)).copy()
    logger.warning(
        f"No closed-form gradient of {which}; using node-averaged gradients "
        "(first-order accurate)"
    )
    nodal = _f_nodal(mesh, data) if which == "f" else _g_nodal(mesh, data)
    return node_gradient(mesh, nodal).values.copy()


def _scatter(mesh: Mesh, element_values: FloatArray) -> FloatArray:
    """Sum per-element nodal contributions (nt, 3) into a global vector."""
    return np.bincount(
        mesh.triangles.ravel(),
        weights=element_values.ravel(),
        minlength=mesh.n_vertices,
    )


def _edge_length_rates(mesh: Mesh, V: FloatArray) -> FloatArray:
    """d/dt of each boundary edge length when vertices move with V."""
    edges = mesh.boundary_edges
    return np.einsum(
        "ea,ea->e", mesh.edge_tangents, V[edges[:, 1]] - V[edges[:, 0]]
    )


def lumped_surface_divergence(mesh: Mesh, V: VectorField | ArrayLike) -> FloatArray:
    """w_b div_G V at each boundary node: the rate of change of w_b."""
    rates = _edge_length_rates(mesh, vector_values(mesh, V))
    return 0.5 * (rates + np.roll(rates, 1))


def _tangential_derivative(mesh: Mesh, values: FloatArray) -> FloatArray:
    ub = values[mesh.boundary_nodes]
    lengths = mesh.edge_lengths
    return (np.roll(ub, -1) - np.roll(ub, 1)) / (lengths + np.roll(lengths, 1))


def _gradient_trace_squared(
    mesh: Mesh, values: FloatArray, q: FloatArray, how: GradientTrace
) -> FloatArray:
    if how == "flux":
        return q**2 + _tangential_derivative(mesh, values) ** 2
    if how == "average":
        grad = node_gradient(mesh, values).values[mesh.boundary_nodes]
        return np.einsum("ba,ba->b", grad, grad)
    raise ValueError(f"Unknown gradient trace {how!r}; use 'flux' or 'average'")


def classify_boundary(
    mesh: Mesh,
    u: FieldLike,
    q: ArrayLike,
    g: ArrayLike,
    eps_u: float | None = None,
    eps_g: float | None = None,
) -> BoundaryClassification:
    """Label the boundary nodes N, D, S_MINUS or S_PLUS.

    ``q`` and ``g`` are per boundary node. N means |u| > eps_u; among the
    remaining nodes D means |q| < g - eps_g, S_MINUS q >= g - eps_g and
    S_PLUS q <= -g + eps_g. Tolerances default to 1e-6 of max|u| and of
    max g.
    """
    values = nodal_values(mesh, u)
    ub = values[mesh.boundary_nodes]
    qb = np.asarray(q, dtype=np.float64)
    gb = np.asarray(g, dtype=np.float64)
    if eps_u is None:
        eps_u = max(1e-6 * float(np.abs(values).max(initial=0.0)), 1e-14)
    if eps_g is None:
        eps_g = max(1e-6 * float(gb.max(initial=0.0)), 1e-14)

    labels = np.full(mesh.n_boundary, BoundaryLabel.D, dtype=np.int64)
    labels[qb >= gb - eps_g] = BoundaryLabel.S_MINUS
    labels[qb <= -gb + eps_g] = BoundaryLabel.S_PLUS
    labels[np.abs(ub) > eps_u] = BoundaryLabel.N
    return BoundaryClassification(labels=labels, eps_u=eps_u, eps_g=eps_g)


def tresca_energy(mesh: Mesh, u: FieldLike, data: ProblemData) -> float:
    """1/2 u^T (K+M) u + sum_b c_b |u(b)| - L^T u."""
    system = TrescaSystem.reference(
        mesh, _f_nodal(mesh, data), _g_boundary(mesh, data)
    )
    return system.energy(nodal_values(mesh, u))


def compliance_energy(mesh: Mesh, u: FieldLike) -> float:
    """-1/2 u^T (K+M) u, equal to the Tresca energy at the solution."""
    values = nodal_values(mesh, u)
    return float(-0.5 * values @ (h1_operator(mesh) @ values))


def dirichlet_energy(
    mesh: Mesh, data: ProblemData, settings: SolverSettings | None = None
) -> tuple[float, ScalarField]:
    """J_D = 1/2 ||w_D||^2 - (f, w_D) and the Dirichlet solution w_D."""
    f = _f_nodal(mesh, data)
    w = solve_dirichlet(mesh, f, settings)
    A = h1_operator(mesh)
    energy = 0.5 * w.values @ (A @ w.values) - assemble_load(mesh, f) @ w.values
    return float(energy), w


def neumann_energy(
    mesh: Mesh, data: ProblemData, settings: SolverSettings | None = None
) -> tuple[float, ScalarField]:
    """J_N with lumped boundary term and the Neumann solution for data -g."""
    f = _f_nodal(mesh, data)
    c = boundary_lumped_weights(mesh, _g_boundary(mesh, data))
    w = solve_neumann(mesh, f, -c / mesh.boundary_weights, settings)
    values = w.values
    energy = (
        0.5 * values @ (h1_operator(mesh) @ values)
        - assemble_load(mesh, f) @ values
        + c @ values[mesh.boundary_nodes]
    )
    return float(energy), w


def solve_state(
    mesh: Mesh,
    data: ProblemData,
    problem: ProblemKind = "tresca",
    settings: SolverSettings | None = None,
    method: TrescaMethod = "switching",
) -> StateSolution:
    """Solve the state problem selected by ``problem`` on ``mesh``."""
    f = _f_nodal(mesh, data)
    report = None
    if problem == "tresca":
        system = TrescaSystem.reference(mesh, f, _g_boundary(mesh, data))
        if method == "switching":
            values, report = switching_solve(system, settings=settings)
        else:
            values, report = proximal_solve(system, settings=settings)
        u = ScalarField(mesh, values)
        energy = report.energy
    elif problem == "dirichlet":
        energy, u = dirichlet_energy(mesh, data, settings)
    elif problem == "neumann":
        energy, u = neumann_energy(mesh, data, settings)
    else:
        raise ValueError(f"Unknown problem {problem!r}")
    flux = recover_boundary_flux(mesh, u, f)
    return StateSolution(mesh, problem, u, energy, flux, report)


def shape_gradient_functional(
    mesh: Mesh,
    u: FieldLike,
    data: ProblemData,
    problem: ProblemKind = "tresca",
) -> FloatArray:
    """Assembled shape gradient G, shape (nv, 2), with J'(V) = sum G * V.

    Element terms: 1/2 |grad u|^2 div V - grad u . (grad V grad u) for the
    stiffness part, 1/2 u^2 div V for the mass part and -u (grad f . V +
    f div V) for the load. The friction term adds (grad g . V) |u| w_b and
    g |u| times the rate of change of the lumped weights; it uses u instead
    of |u| for the Neumann problem and vanishes for the Dirichlet one.
    """
    values = nodal_values(mesh, u)
    tri = mesh.triangles
    grads = mesh.basis_gradients
    areas = mesh.element_areas
    du = gradient_p1(mesh, values)
    blocks = mass_blocks(mesh)
    uT = values[tri]
    fn = _f_nodal(mesh, data)
    fT = fn[tri]

    scalar = (
        0.5 * areas * np.einsum("ea,ea->e", du, du)
        + 0.5 * np.einsum("ei,eij,ej->e", uT, blocks, uT)
        - np.einsum("ei,eij,ej->e", uT, blocks, fT)
    )
    along = np.einsum("eka,ea->ek", grads, du)
    contrib = (
        scalar[:, None, None] * grads
        - (areas[:, None] * along)[:, :, None] * du[:, None, :]
    )
    G = np.zeros((mesh.n_vertices, 2))
    np.add.at(G, tri.ravel(), contrib.reshape(-1, 2))

    mass_u = assemble_mass(mesh) @ values
    G -= mass_u[:, None] * _data_gradient(mesh, data, "f")

    if problem != "dirichlet":
        bn = mesh.boundary_nodes
        ub = values[bn]
        trace = np.abs(ub) if problem == "tresca" else ub
        gb = _g_boundary(mesh, data)
        grad_g = _data_gradient(mesh, data, "g")[bn]
        G[bn] += (mesh.boundary_weights * trace)[:, None] * grad_g
        weighted = gb * trace
        edge_force = (
            0.5 * (weighted + np.roll(weighted, -1))[:, None] * mesh.edge_tangents
        )
        edges = mesh.boundary_edges
        np.add.at(G, edges[:, 1], edge_force)
        np.add.at(G, edges[:, 0], -edge_force)
    return G


def shape_gradient_volume(
    mesh: Mesh,
    u: FieldLike,
    data: ProblemData,
    V: VectorField | ArrayLike,
    problem: ProblemKind = "tresca",
) -> float:
    """Volume-form shape derivative J'(V); linear in V by construction."""
    G = shape_gradient_functional(mesh, u, data, problem)
    return float(np.sum(G * vector_values(mesh, V)))


def shape_gradient_boundary(
    mesh: Mesh,
    u: FieldLike,
    data: ProblemData,
    V: VectorField | ArrayLike,
    problem: ProblemKind = "tresca",
    gradient_trace: GradientTrace = "flux",
) -> float:
    """Boundary expression of J'(V) that needs no curvature.

    sum_b w_b [V.n (1/2 (|grad u|^2 + u^2) - f u) - q V.grad u
    - ((grad g / g) . V + div_G V) u q], with the lumped surface divergence.
    """
    values = nodal_values(mesh, u)
    Vb = vector_values(mesh, V)
    bn = mesh.boundary_nodes
    fn = _f_nodal(mesh, data)
    q = recover_boundary_flux(mesh, values, fn)
    ub, fb, vb = values[bn], fn[bn], Vb[bn]
    normal = mesh.boundary_normals
    tangent = np.column_stack((-normal[:, 1], normal[:, 0]))
    w = mesh.boundary_weights

    grad2 = _gradient_trace_squared(mesh, values, q, gradient_trace)
    grad_u = q[:, None] * normal + (
        _tangential_derivative(mesh, values)[:, None] * tangent
    )
    vn = np.einsum("ba,ba->b", vb, normal)
    total = np.sum(w * vn * (0.5 * (grad2 + ub**2) - fb * ub))
    total -= np.sum(w * q * np.einsum("ba,ba->b", vb, grad_u))
    if problem != "dirichlet":
        gb = _g_boundary(mesh, data)
        grad_g = _data_gradient(mesh, data, "g")[bn]
        rate = w * np.einsum("ba,ba->b", grad_g, vb) / gb
        rate += lumped_surface_divergence(mesh, Vb)
        total -= np.sum(rate * ub * q)
    return float(total)


def shape_gradient_density(
    mesh: Mesh,
    u: FieldLike,
    data: ProblemData,
    geometry: BoundaryGeometry | None = None,
    problem: ProblemKind = "tresca",
    gradient_trace: GradientTrace = "flux",
    settings: SolverSettings | None = None,
) -> ShapeGradientDensity:
    """Boundary density D of the shape gradient.

    For the Tresca problem

        D = 1/2 (|grad u|^2 + u^2) - f u + H g |u| - d_n(u q~)
            + g u grad(q~ / g) . n,

    with q~ the harmonic extension of the recovered flux; the last term is
    kept on N nodes only, where q / g is locally constant. The Dirichlet
    variant is -1/2 (|grad u|^2 + u^2) and the Neumann variant
    1/2 (|grad u|^2 + u^2) - f u + H g u + d_n(g u).

    Raises
    ------
    GeometryError
        If ``geometry`` carries no usable curvature.
    """
    if geometry is None:
        geometry = boundary_geometry(mesh)
    if geometry.curvature.shape != (mesh.n_boundary,) or not np.all(
        np.isfinite(geometry.curvature)
    ):
        raise GeometryError("Shape-gradient density needs finite curvature")

    values = nodal_values(mesh, u)
    bn = mesh.boundary_nodes
    fn = _f_nodal(mesh, data)
    q = recover_boundary_flux(mesh, values, fn)
    ub, fb = values[bn], fn[bn]
    grad2 = _gradient_trace_squared(mesh, values, q, gradient_trace)
    H = geometry.curvature
    extras: dict[str, FloatArray] = {"flux": q, "grad_sq": grad2}

    if problem == "dirichlet":
        density = -0.5 * (grad2 + ub**2)
        return ShapeGradientDensity(mesh, density, geometry, problem, extras)

    gb = _g_boundary(mesh, data)
    dg_n = np.einsum(
        "ba,ba->b", _data_gradient(mesh, data, "g")[bn], geometry.normal
    )
    base = 0.5 * (grad2 + ub**2) - fb * ub
    if problem == "neumann":
        density = base + H * gb * ub + ub * dg_n + gb * q
        return ShapeGradientDensity(mesh, density, geometry, problem, extras)

    extension = harmonic_extension(mesh, q, settings)
    dn_q = (assemble_stiffness(mesh) @ extension.values)[bn] / mesh.boundary_weights
    settings = settings or SolverSettings()
    labels = classify_boundary(
        mesh, values, q, gb, settings.eps_u, settings.eps_g
    ).labels
    slipping = labels == BoundaryLabel.N
    density = base + H * gb * np.abs(ub) - (q**2 + ub * dn_q)
    density += np.where(slipping, ub * dn_q - ub * q * dg_n / gb, 0.0)
    extras["dn_flux"] = dn_q
    return ShapeGradientDensity(mesh, density, geometry, problem, extras)


def pullback_coefficients(
    mesh: Mesh, V: VectorField | ArrayLike, t: float
) -> PullbackCoefficients:
    """A_t, J_t and J_Tt for the map x -> x + t V.

    Raises
    ------
    AdmissibilityError
        If det(I + t grad V) <= 0 on some element.
    """
    grad = vector_gradient(mesh, vector_values(mesh, V))
    F = np.eye(2)[None, :, :] + t * grad
    J = np.linalg.det(F)
    bad = np.flatnonzero(~(J > 0))
    if bad.size:
        raise AdmissibilityError(
            f"I + t grad V is not invertible on element {bad[0]} at t={t:g} "
            f"(det {J[bad[0]]:.3e})"
        )
    Finv = np.linalg.inv(F)
    matrix = J[:, None, None] * np.einsum("eab,ecb->eac", Finv, Finv)
    owner = mesh.edge_triangles
    rotated = np.einsum("eba,eb->ea", Finv[owner], mesh.edge_normals)
    tangential = J[owner] * np.linalg.norm(rotated, axis=1)
    lengths = mesh.edge_lengths
    prev = np.roll(lengths, 1)
    nodal = (lengths * tangential + prev * np.roll(tangential, 1)) / (
        lengths + prev
    )
    return PullbackCoefficients(t, matrix, J, tangential, nodal)


def perturbed_system(
    mesh: Mesh, data: ProblemData, V: VectorField | ArrayLike, t: float
) -> TrescaSystem:
    """Tresca system of the moved domain, written on the fixed mesh.

    Stiffness with A_t, mass weighted by J_t, load M_J f(x + t V), friction
    bound g(x + t V) and lumped weights J_Tt w_b. For P1 elements this is
    the same algebraic system as on ``deform_mesh(mesh, V, t)``.
    """
    Vv = vector_values(mesh, V)
    coeffs = pullback_coefficients(mesh, Vv, t)
    moved = mesh.vertices + t * Vv
    mass = assemble_mass(mesh, coeffs.jacobian)
    operator = (assemble_stiffness(mesh, coeffs.matrix) + mass).tocsr()
    load = mass @ data.f_at(moved)
    return TrescaSystem(
        mesh=mesh,
        operator=operator,
        load=np.asarray(load),
        weights=coeffs.nodal_tangential * mesh.boundary_weights,
        threshold=data.g_at(moved[mesh.boundary_nodes]),
    )


def _system_energy(
    system: TrescaSystem,
    problem: ProblemKind,
    settings: SolverSettings | None,
    method: TrescaMethod = "switching",
) -> tuple[FloatArray, float]:
    A, L = system.operator, system.load
    bn = system.mesh.boundary_nodes
    if problem == "tresca":
        solver = switching_solve if method == "switching" else proximal_solve
        values, report = solver(system, settings=settings)
        return values, report.energy
    if problem == "dirichlet":
        values = solve_with_fixed(A, L, bn, settings)
        return values, float(0.5 * values @ (A @ values) - L @ values)
    rhs = L.copy()
    rhs[bn] -= system.friction
    values = solve_with_fixed(A, rhs, [], settings)
    energy = 0.5 * values @ (A @ values) - L @ values + system.friction @ values[bn]
    return values, float(energy)


def solve_perturbed_tresca(
    mesh: Mesh,
    data: ProblemData,
    V: VectorField | ArrayLike,
    t: float,
    settings: SolverSettings | None = None,
    method: TrescaMethod = "switching",
) -> ScalarField:
    """Pulled-back Tresca solution u_t o (id + t V) on the fixed mesh."""
    system = perturbed_system(mesh, data, V, t)
    values, _ = _system_energy(system, "tresca", settings, method)
    return ScalarField(mesh, values)


def material_derivative(
    mesh: Mesh,
    u0: FieldLike,
    data: ProblemData,
    V: VectorField | ArrayLike,
    classification: BoundaryClassification,
    settings: SolverSettings | None = None,
) -> ScalarField:
    """Material derivative of the Tresca solution in direction V.

    Solves the sign-constrained VI whose right-hand side is

        l(v) = int (V . grad u) v - int (A' grad u - (u - f) V) . grad v
               + sum_b w_b [V.n (f - u) + ((grad g / g) . V + div_G V) q] v_b

    in its exact discrete form: the t-derivative of the pulled-back load
    minus that of the pulled-back operator applied to u0, plus the friction
    rate times q. D nodes are fixed, S_MINUS nodes may only decrease and
    S_PLUS nodes only increase.
    """
    values = nodal_values(mesh, u0)
    Vv = vector_values(mesh, V)
    tri = mesh.triangles
    grads = mesh.basis_gradients
    areas = mesh.element_areas
    grad_v = vector_gradient(mesh, Vv)
    div_v = np.trace(grad_v, axis1=1, axis2=2)
    a_prime = (
        div_v[:, None, None] * np.eye(2)[None]
        - grad_v
        - grad_v.transpose(0, 2, 1)
    )
    stiff_rate = areas[:, None, None] * np.einsum(
        "eia,eab,ejb->eij", grads, a_prime, grads
    )
    mass_rate = div_v[:, None, None] * mass_blocks(mesh)

    fn = _f_nodal(mesh, data)
    operator_rate = np.einsum("eij,ej->ei", stiff_rate + mass_rate, values[tri])
    load_rate = np.einsum("eij,ej->ei", mass_rate, fn[tri])
    f_along = np.einsum("va,va->v", _data_gradient(mesh, data, "f"), Vv)
    ell = _scatter(mesh, load_rate - operator_rate) + assemble_mass(mesh) @ f_along

    bn = mesh.boundary_nodes
    q = recover_boundary_flux(mesh, values, fn)
    gb = _g_boundary(mesh, data)
    grad_g = _data_gradient(mesh, data, "g")[bn]
    rate = mesh.boundary_weights * np.einsum("ba,ba->b", grad_g, Vv[bn]) / gb
    rate += lumped_surface_divergence(mesh, Vv)
    ell[bn] += rate * q

    return solve_constrained_vi(
        mesh, ell, classification.constraints(), settings=settings
    )


def shape_directional_derivative(
    u0: ScalarField, V: VectorField | ArrayLike, material: ScalarField
) -> ScalarField:
    """Eulerian derivative u' = material - grad u0 . V at the nodes."""
    mesh = u0.mesh
    Vv = vector_values(mesh, V)
    grad = node_gradient(mesh, u0).values
    return ScalarField(mesh, nodal_values(mesh, material) - np.sum(grad * Vv, axis=1))


def _deformed_energy(
    mesh: Mesh,
    data: ProblemData,
    V: FloatArray,
    t: float,
    problem: ProblemKind,
    method: Literal["deformed", "pullback"],
    settings: SolverSettings | None,
) -> float:
    if method == "deformed":
        return solve_state(deform_mesh(mesh, V, t), data, problem, settings).energy
    return _system_energy(perturbed_system(mesh, data, V, t), problem, settings)[1]


def _run_ladder(
    t_list: ArrayLike,
    work: Callable[[float], dict[str, float]],
    n_workers: int,
) -> list[dict[str, float]]:
    steps = [float(t) for t in np.atleast_1d(t_list)]
    if n_workers <= 1:
        return [work(t) for t in steps]
    rows = []
    with ThreadPoolExecutor(max_workers=n_workers) as executor:
        futures = {executor.submit(work, t): t for t in steps}
        for future in as_completed(futures):
            rows.append(future.result())
    return sorted(rows, key=lambda row: -row["t"])


def fd_shape_gradient(
    mesh: Mesh,
    data: ProblemData,
    V: VectorField | ArrayLike,
    t_list: ArrayLike,
    problem: ProblemKind = "tresca",
    method: Literal["deformed", "pullback"] = "deformed",
    n_workers: int = 1,
    settings: SolverSettings | None = None,
) -> pd.DataFrame:
    """Finite-difference ladder for the volume-form shape gradient.

    Returns columns ``t, fd, formula, gap, rel_gap, ok``. A step that
    inverts the mesh gives a row with ``ok`` False and NaN quotients.
    """
    Vv = vector_values(mesh, V)
    state = solve_state(mesh, data, problem, settings)
    formula = shape_gradient_volume(mesh, state.u, data, Vv, problem)
    scale = max(abs(formula), 1e-300)

    def work(t: float) -> dict[str, float]:
        try:
            energy = _deformed_energy(mesh, data, Vv, t, problem, method, settings)
        except (MeshInversionError, AdmissibilityError) as e:
            logger.warning(f"FD step t={t:g} skipped: {e}")
            return {"t": t, "fd": np.nan, "formula": formula, "gap": np.nan,
                    "rel_gap": np.nan, "ok": False}
        fd = (energy - state.energy) / t
        gap = abs(fd - formula)
        return {"t": t, "fd": fd, "formula": formula, "gap": gap,
                "rel_gap": gap / scale, "ok": True}

    rows = _run_ladder(t_list, work, n_workers)
    logger.info(f"FD shape-gradient ladder ({method}, {problem}): {len(rows)} steps")
    return pd.DataFrame(rows, columns=["t", "fd", "formula", "gap", "rel_gap", "ok"])


def fd_material_derivative(
    mesh: Mesh,
    data: ProblemData,
    V: VectorField | ArrayLike,
    t_list: ArrayLike,
    n_workers: int = 1,
    settings: SolverSettings | None = None,
) -> pd.DataFrame:
    """H1 gaps ||(u_t - u0)/t - material|| over a t-ladder (columns t, h1_gap)."""
    Vv = vector_values(mesh, V)
    state = solve_state(mesh, data, "tresca", settings)
    gb = _g_boundary(mesh, data)
    eps = settings or SolverSettings()
    classification = classify_boundary(
        mesh, state.u, state.flux, gb, eps.eps_u, eps.eps_g
    )
    material = material_derivative(mesh, state.u, data, Vv, classification, settings)

    def work(t: float) -> dict[str, float]:
        ut = solve_perturbed_tresca(mesh, data, Vv, t, settings)
        quotient = (ut - state.u) / t
        return {"t": t, "h1_gap": h1_norm(quotient - material)}

    rows = _run_ladder(t_list, work, n_workers)
    return pd.DataFrame(rows, columns=["t", "h1_gap"])


def reference_directions(mesh: Mesh) -> dict[str, VectorField]:
    """Smooth test fields: dilation, shear (y, 0) and a localized bump.

    The bump is a Gaussian of width 0.3 centered at the rightmost boundary
    vertex, pointing in +x.
    """
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    boundary = mesh.vertices[mesh.boundary_nodes]
    center = boundary[np.argmax(boundary[:, 0])]
    bump = np.exp(-((x - center[0]) ** 2 + (y - center[1]) ** 2) / (2 * 0.3**2))
    return {
        "dilation": VectorField(mesh, np.column_stack((x, y))),
        "shear": VectorField(mesh, np.column_stack((y, np.zeros_like(y)))),
        "bump": VectorField(mesh, np.column_stack((bump, np.zeros_like(bump)))),
    }


__all__ = [
    "BoundaryClassification",
    "BoundaryLabel",
    "PullbackCoefficients",
    "ShapeGradientDensity",
    "StateSolution",
    "classify_boundary",
    "compliance_energy",
    "dirichlet_energy",
    "fd_material_derivative",
    "fd_shape_gradient",
    "lumped_surface_divergence",
    "material_derivative",
    "neumann_energy",
    "pullback_coefficients",
    "perturbed_system",
    "reference_directions",
    "shape_directional_derivative",
    "shape_gradient_boundary",
    "shape_gradient_density",
    "shape_gradient_functional",
    "shape_gradient_volume",
    "solve_perturbed_tresca",
    "solve_state",
    "tresca_energy",
]
