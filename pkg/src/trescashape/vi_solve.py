"""Solvers for the discrete Dirichlet, Neumann and Tresca problems.

The Tresca problem minimizes

    E(v) = 1/2 v^T A v - L^T v + sum_b c_b |v(b)|

over nodal vectors, with A = K + M (or its pulled-back counterpart) and
lumped friction coefficients c_b. Two independent algorithms solve it: a
status-switching iteration and an accelerated proximal gradient method.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from numpy.typing import ArrayLike, NDArray

from .config import SolverSettings
from .exceptions import (
    AssemblyError,
    FieldMismatchError,
    ProblemDataError,
    SolverError,
    VISolverError,
)
from .fem import (
    FieldLike,
    ScalarField,
    VectorField,
    assemble_load,
    boundary_trace,
    h1_operator,
    nodal_values,
    recover_boundary_flux,
    solve_with_fixed,
)
from .mesh import Mesh
from .models import TrescaSolveReport

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

# Absolute slack on flux-versus-threshold comparisons.
SWITCH_EPS = 1e-10

PROXIMAL_MAXIT = 100_000

Monitor = Callable[[int, float], None]


class BoundaryStatus(IntEnum):
    """Friction state of a boundary node."""

    STICK = 0
    SLIP_PLUS = 1
    SLIP_MINUS = 2


class Constraint(IntEnum):
    """Sign constraint on a boundary node of a constrained VI."""

    FREE = 0
    EQ0 = 1
    LE0 = 2
    GE0 = 3


@dataclass(frozen=True, eq=False)
class TrescaSystem:
    """Algebraic Tresca problem on a fixed mesh.

    ``weights`` are the lumped boundary weights and ``threshold`` the
    friction bound g at the boundary nodes; the friction coefficients are
    their product.
    """

    mesh: Mesh
    operator: sp.csr_matrix
    load: FloatArray
    weights: FloatArray
    threshold: FloatArray

    def __post_init__(self) -> None:
        nv, nb = self.mesh.n_vertices, self.mesh.n_boundary
        if self.operator.shape != (nv, nv) or np.shape(self.load) != (nv,):
            raise FieldMismatchError(
                f"Operator and load must match the {nv} mesh vertices"
            )
        if np.shape(self.weights) != (nb,) or np.shape(self.threshold) != (nb,):
            raise FieldMismatchError(
                f"Weights and threshold need one value per boundary node ({nb})"
            )
        if not np.all(self.weights > 0):
            raise AssemblyError("Lumped boundary weights must be positive")
        if not np.all(self.threshold > 0):
            k = int(np.argmin(self.threshold))
            raise ProblemDataError(
                f"Friction threshold must be > 0; got {self.threshold[k]:.3e} "
                f"at boundary node {k}"
            )

    @classmethod
    def reference(cls, mesh: Mesh, f: FieldLike, g: FieldLike) -> "TrescaSystem":
        """The unperturbed system: H1 operator, load M f, lumped weights."""
        return cls(
            mesh=mesh,
            operator=h1_operator(mesh),
            load=assemble_load(mesh, f),
            weights=mesh.boundary_weights,
            threshold=boundary_trace(mesh, g),
        )

    @cached_property
    def friction(self) -> FloatArray:
        return np.asarray(self.threshold * self.weights)

    def energy(self, v: ArrayLike) -> float:
        x = np.asarray(v, dtype=np.float64)
        return float(
            0.5 * x @ (self.operator @ x)
            - self.load @ x
            + self.friction @ np.abs(x[self.mesh.boundary_nodes])
        )

    def flux(self, v: ArrayLike) -> FloatArray:
        return recover_boundary_flux(
            self.mesh, v, operator=self.operator, load=self.load,
            weights=self.weights,
        )


def _estimate_lipschitz(A: sp.spmatrix, iterations: int = 60) -> float:
    """Power-iteration estimate of ||A||_2, padded by 10%."""
    x = np.random.default_rng(0).standard_normal(A.shape[0])
    lam = 0.0
    for _ in range(iterations):
        y = A @ x
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return 1.0
        lam = float(x @ y) / float(x @ x)
        x = y / norm
    return 1.1 * max(lam, 1e-300)


def _accelerated_prox(
    A: sp.spmatrix,
    rhs: FloatArray,
    prox: Callable[[FloatArray, float], FloatArray],
    nonsmooth: Callable[[FloatArray], float],
    x0: FloatArray,
    tol: float,
    maxit: int,
    monitor: Monitor | None = None,
) -> tuple[FloatArray, int, float, float]:
    """FISTA with adaptive restart for 1/2 x^T A x - rhs^T x + psi(x).

    ``prox(z, step)`` is the proximal map of ``step * psi``; ``x0`` must be
    in the domain of psi. Momentum is reset whenever it points uphill, so
    the iteration never relies on comparing nearly equal energies. Returns
    (x, iterations, final step norm, final Lipschitz estimate).

    Raises
    ------
    VISolverError
        If the stopping test is not met within ``maxit`` iterations.
    """
    lip = _estimate_lipschitz(A)

    def step(y: FloatArray, Ay: FloatArray) -> tuple[FloatArray, FloatArray]:
        nonlocal lip
        grad = Ay - rhs
        while True:
            z = prox(y - grad / lip, 1.0 / lip)
            Az = A @ z
            d = z - y
            if d @ (Az - Ay) <= lip * (d @ d) * (1.0 + 1e-12):
                return z, Az
            lip *= 2.0

    x = np.array(x0, dtype=np.float64)
    Ax = A @ x
    y, Ay, t = x, Ax, 1.0
    gap = np.inf
    for it in range(1, maxit + 1):
        z, Az = step(y, Ay)
        if (y - z) @ (z - x) > 0:
            t = 1.0
            z, Az = step(x, Ax)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        moved = float(np.linalg.norm(z - x))
        y = z + beta * (z - x)
        Ay = Az + beta * (Az - Ax)
        x, Ax, t = z, Az, t_next
        if monitor is not None:
            monitor(it, float(0.5 * x @ Ax - rhs @ x + nonsmooth(x)))

        scale = 1.0 + float(np.linalg.norm(x))
        if moved <= tol * scale:
            w, _ = step(x, Ax)
            gap = float(np.linalg.norm(w - x))
            if gap <= tol * scale:
                return x, it, gap, lip
            y, Ay, t = x, Ax, 1.0

    raise VISolverError(
        f"Accelerated proximal gradient did not converge in {maxit} "
        f"iterations (last step norm {gap:.3e})",
        residual=gap,
    )


def complementarity_residual(
    system: TrescaSystem, u: ArrayLike, status: ArrayLike
) -> float:
    """Largest violation of the friction law implied by ``status``.

    Stick nodes contribute max(|(Au - L)_b| - c_b, 0); slip nodes the
    magnitude of a trace with the wrong sign.
    """
    values = np.asarray(u, dtype=np.float64)
    labels = np.asarray(status)
    bn = system.mesh.boundary_nodes
    r = (system.operator @ values - system.load)[bn]
    ub = values[bn]
    stick = np.where(
        labels == BoundaryStatus.STICK,
        np.maximum(np.abs(r) - system.friction, 0.0),
        0.0,
    )
    plus = np.where(labels == BoundaryStatus.SLIP_PLUS, np.maximum(-ub, 0.0), 0.0)
    minus = np.where(labels == BoundaryStatus.SLIP_MINUS, np.maximum(ub, 0.0), 0.0)
    return float(np.max(stick + plus + minus, initial=0.0))


def status_from_solution(
    system: TrescaSystem, u: ArrayLike
) -> NDArray[np.int64]:
    """Statuses read off a solution: the sign of the trace, STICK at zero."""
    ub = np.asarray(u, dtype=np.float64)[system.mesh.boundary_nodes]
    eps = 1e-12 * (1.0 + float(np.abs(ub).max(initial=0.0)))
    status = np.full(len(ub), BoundaryStatus.STICK, dtype=np.int64)
    status[ub > eps] = BoundaryStatus.SLIP_PLUS
    status[ub < -eps] = BoundaryStatus.SLIP_MINUS
    return status


def proximal_solve(
    system: TrescaSystem,
    tol: float | None = None,
    maxit: int | None = None,
    x0: ArrayLike | None = None,
    monitor: Monitor | None = None,
    settings: SolverSettings | None = None,
) -> tuple[FloatArray, TrescaSolveReport]:
    """Minimize the Tresca energy of ``system`` by restarted FISTA.

    The proximal map soft-thresholds the boundary entries with step times
    c_b and leaves interior entries at the gradient step.
    """
    settings = settings or SolverSettings()
    tol = settings.vi_tol if tol is None else tol
    maxit = PROXIMAL_MAXIT if maxit is None else maxit
    bn = system.mesh.boundary_nodes
    c = system.friction

    def prox(z: FloatArray, step: float) -> FloatArray:
        out = z.copy()
        zb = z[bn]
        out[bn] = np.sign(zb) * np.maximum(np.abs(zb) - step * c, 0.0)
        return out

    def nonsmooth(x: FloatArray) -> float:
        return float(c @ np.abs(x[bn]))

    start = (
        np.zeros(system.mesh.n_vertices)
        if x0 is None
        else np.asarray(x0, dtype=np.float64)
    )
    u, iterations, gap, lip = _accelerated_prox(
        system.operator, system.load, prox, nonsmooth, start, tol, maxit, monitor
    )
    status = status_from_solution(system, u)
    residual = complementarity_residual(system, u, status)
    logger.debug(
        f"Proximal Tresca solve: {iterations} iterations, step norm {gap:.2e}"
    )
    # A prox step of length gap bounds the flux defect by lip * gap.
    bound = max(tol, lip * gap) * (1.0 + float(np.linalg.norm(u)))
    report = TrescaSolveReport(
        iterations=iterations,
        status=status.tolist(),
        converged=residual <= bound,
        energy=system.energy(u),
        residual=residual,
        tol=bound,
        method="proximal",
    )
    return u, report


def switching_solve(
    system: TrescaSystem,
    init: ArrayLike | None = None,
    tol: float | None = None,
    maxit: int | None = None,
    settings: SolverSettings | None = None,
) -> tuple[FloatArray, TrescaSolveReport]:
    """Solve the Tresca system by switching boundary statuses.

    STICK nodes are held at zero and SLIP_PLUS / SLIP_MINUS nodes receive
    the lumped Neumann data -c_b / +c_b. Statuses are updated from the
    recovered flux at STICK nodes and the trace sign at slip nodes until
    nothing changes. A repeated status set, ``maxit`` or a final residual
    above ``tol`` hands over to :func:`proximal_solve`.

    Raises
    ------
    VISolverError
        If the proximal fallback fails as well.
    """
    settings = settings or SolverSettings()
    tol = settings.vi_tol if tol is None else tol
    maxit = settings.vi_maxit if maxit is None else maxit
    mesh = system.mesh
    bn = mesh.boundary_nodes
    c = system.friction
    g = system.threshold

    if init is None:
        status = np.full(mesh.n_boundary, BoundaryStatus.STICK, dtype=np.int64)
    else:
        status = np.asarray(init, dtype=np.int64).copy()
        if status.shape != (mesh.n_boundary,):
            raise FieldMismatchError(
                f"Initial status needs {mesh.n_boundary} entries, got {status.shape}"
            )

    seen: set[bytes] = set()
    reason = f"no stable status set after {maxit} iterations"
    for iteration in range(1, maxit + 1):
        key = status.tobytes()
        if key in seen:
            reason = f"status cycle detected at iteration {iteration}"
            break
        seen.add(key)

        rhs = system.load.copy()
        plus = status == BoundaryStatus.SLIP_PLUS
        minus = status == BoundaryStatus.SLIP_MINUS
        stick = status == BoundaryStatus.STICK
        rhs[bn[plus]] -= c[plus]
        rhs[bn[minus]] += c[minus]
        u = solve_with_fixed(system.operator, rhs, bn[stick], settings)

        q = system.flux(u)
        ub = u[bn]
        eps_u = 1e-12 * (1.0 + float(np.abs(u).max()))
        updated = status.copy()
        updated[stick & (q > g + SWITCH_EPS)] = BoundaryStatus.SLIP_MINUS
        updated[stick & (q < -g - SWITCH_EPS)] = BoundaryStatus.SLIP_PLUS
        updated[plus & (ub < -eps_u)] = BoundaryStatus.STICK
        updated[minus & (ub > eps_u)] = BoundaryStatus.STICK
        changed = int(np.count_nonzero(updated != status))
        logger.debug(f"Switching iteration {iteration}: {changed} status changes")

        if not changed:
            residual = complementarity_residual(system, u, status)
            if residual <= tol:
                return u, TrescaSolveReport(
                    iterations=iteration,
                    status=status.tolist(),
                    converged=True,
                    energy=system.energy(u),
                    residual=residual,
                    tol=tol,
                )
            reason = f"stable statuses leave residual {residual:.3e} > {tol:.1e}"
            break
        status = updated

    logger.warning(f"Switching solver falls back to proximal gradient: {reason}")
    try:
        u, report = proximal_solve(system, settings=settings)
    except VISolverError as e:
        raise VISolverError(
            f"Tresca solve failed: {reason}; proximal fallback: {e}",
            residual=e.residual,
        ) from e
    return u, report.model_copy(update={"fallback_used": True})


def solve_tresca_switching(
    mesh: Mesh,
    f: FieldLike,
    g: FieldLike,
    init: ArrayLike | None = None,
    tol: float | None = None,
    maxit: int | None = None,
    settings: SolverSettings | None = None,
) -> tuple[ScalarField, TrescaSolveReport]:
    """Tresca solution on ``mesh`` for source f and threshold g.

    See :func:`switching_solve` for the algorithm and fallback.
    """
    system = TrescaSystem.reference(mesh, f, g)
    u, report = switching_solve(system, init, tol, maxit, settings)
    return ScalarField(mesh, u), report


def solve_tresca_proximal(
    mesh: Mesh,
    f: FieldLike,
    g: FieldLike,
    tol: float | None = None,
    maxit: int | None = None,
    monitor: Monitor | None = None,
    settings: SolverSettings | None = None,
) -> ScalarField:
    """Tresca solution by accelerated proximal gradient.

    Raises
    ------
    VISolverError
        If ``maxit`` is exceeded; ``residual`` holds the last step norm.
    """
    system = TrescaSystem.reference(mesh, f, g)
    u, _ = proximal_solve(system, tol, maxit, monitor=monitor, settings=settings)
    return ScalarField(mesh, u)


def check_tresca_law(
    mesh: Mesh,
    u: FieldLike,
    f: FieldLike,
    g: FieldLike,
    tol: float | None = None,
) -> FloatArray:
    """Per-boundary-node residual max(|q|-g, 0) + |u q + g |u||.

    ``q`` is the recovered flux. ``tol`` only decides whether the worst
    node is reported in the log.
    """
    values = nodal_values(mesh, u)
    q = recover_boundary_flux(mesh, values, f)
    gb = boundary_trace(mesh, g)
    ub = values[mesh.boundary_nodes]
    residual = np.maximum(np.abs(q) - gb, 0.0) + np.abs(ub * q + gb * np.abs(ub))
    if tol is not None and residual.size and residual.max() > tol:
        k = int(np.argmax(residual))
        logger.info(
            f"Tresca law residual {residual[k]:.3e} at boundary node {k} "
            f"exceeds {tol:.1e}"
        )
    return np.asarray(residual)


def solve_dirichlet(
    mesh: Mesh, f: FieldLike, settings: SolverSettings | None = None
) -> ScalarField:
    """Solve -Lap u + u = f with u = 0 on the boundary."""
    load = assemble_load(mesh, f)
    u = solve_with_fixed(h1_operator(mesh), load, mesh.boundary_nodes, settings)
    if np.all(nodal_values(mesh, f) >= 0) and u.min() < -1e-10:
        logger.debug(f"Dirichlet solution dips to {u.min():.3e} for f >= 0")
    return ScalarField(mesh, u)


def solve_neumann(
    mesh: Mesh,
    f: FieldLike,
    gN: FieldLike,
    settings: SolverSettings | None = None,
) -> ScalarField:
    """Solve -Lap u + u = f with lumped Neumann data du/dn = gN."""
    settings = settings or SolverSettings()
    rhs = assemble_load(mesh, f)
    rhs[mesh.boundary_nodes] += boundary_trace(mesh, gN) * mesh.boundary_weights
    u = solve_with_fixed(h1_operator(mesh), rhs, [], settings)
    return ScalarField(mesh, u)


def _projector(
    mesh: Mesh, constraints: NDArray[np.int64]
) -> Callable[[FloatArray, float], FloatArray]:
    bn = mesh.boundary_nodes
    eq = bn[constraints == Constraint.EQ0]
    le = bn[constraints == Constraint.LE0]
    ge = bn[constraints == Constraint.GE0]

    def project(z: FloatArray, step: float = 0.0) -> FloatArray:
        out = z.copy()
        out[eq] = 0.0
        out[le] = np.minimum(out[le], 0.0)
        out[ge] = np.maximum(out[ge], 0.0)
        return out

    return project


def _constraint_array(mesh: Mesh, constraints: ArrayLike) -> NDArray[np.int64]:
    labels = np.asarray(constraints, dtype=np.int64)
    if labels.shape != (mesh.n_boundary,):
        raise FieldMismatchError(
            f"Need one constraint per boundary node ({mesh.n_boundary}), "
            f"got shape {labels.shape}"
        )
    return labels


def projected_gradient_vi(
    mesh: Mesh,
    rhs: ArrayLike,
    constraints: ArrayLike,
    operator: sp.spmatrix | None = None,
    x0: ArrayLike | None = None,
    tol: float = 1e-12,
    maxit: int = PROXIMAL_MAXIT,
) -> ScalarField:
    """Accelerated projected gradient for the sign-constrained VI."""
    labels = _constraint_array(mesh, constraints)
    A = h1_operator(mesh) if operator is None else operator
    b = np.asarray(rhs, dtype=np.float64)
    project = _projector(mesh, labels)
    start = project(
        np.zeros(mesh.n_vertices) if x0 is None else np.asarray(x0, dtype=float)
    )
    v, iterations, _, _ = _accelerated_prox(
        A, b, project, lambda x: 0.0, start, tol, maxit
    )
    logger.debug(f"Projected gradient VI: {iterations} iterations")
    return ScalarField(mesh, v)


def vi_kkt_residual(
    mesh: Mesh,
    A: sp.spmatrix,
    rhs: FloatArray,
    v: FloatArray,
    constraints: NDArray[np.int64],
) -> float:
    """Natural residual max |v - P(v - (A v - rhs))|."""
    project = _projector(mesh, constraints)
    return float(np.abs(v - project(v - (A @ v - rhs))).max(initial=0.0))


def solve_constrained_vi(
    mesh: Mesh,
    rhs: ArrayLike,
    constraints: ArrayLike,
    operator: sp.spmatrix | None = None,
    tol: float | None = None,
    maxit: int | None = None,
    settings: SolverSettings | None = None,
) -> ScalarField:
    """Minimize 1/2 v^T A v - rhs^T v under nodal sign constraints.

    A primal-dual active set: every inequality starts active (held at
    zero); an active node is released when its multiplier has the wrong
    sign and an inactive node is re-activated when it violates its bound.
    A repeated working set hands over to :func:`projected_gradient_vi`,
    which also refines any result failing the KKT check.

    Raises
    ------
    VISolverError
        If the working set does not settle within ``maxit`` iterations.
    """
    settings = settings or SolverSettings()
    tol = settings.vi_tol if tol is None else tol
    maxit = settings.vi_maxit if maxit is None else maxit
    labels = _constraint_array(mesh, constraints)
    A = h1_operator(mesh) if operator is None else operator
    b = np.asarray(rhs, dtype=np.float64)
    if b.shape != (mesh.n_vertices,):
        raise FieldMismatchError(
            f"Right-hand side needs {mesh.n_vertices} entries, got {b.shape}"
        )
    bn = mesh.boundary_nodes
    eq = bn[labels == Constraint.EQ0]
    le = bn[labels == Constraint.LE0]
    ge = bn[labels == Constraint.GE0]
    active_le = np.ones(len(le), dtype=bool)
    active_ge = np.ones(len(ge), dtype=bool)
    scale = float(np.abs(b).max(initial=0.0))

    seen: set[bytes] = set()
    for iteration in range(1, maxit + 1):
        key = active_le.tobytes() + b"|" + active_ge.tobytes()
        if key in seen:
            logger.warning(
                f"Active-set cycle at iteration {iteration}; "
                "using projected gradient"
            )
            return projected_gradient_vi(mesh, b, labels, A, tol=tol)
        seen.add(key)

        fixed = np.concatenate((eq, le[active_le], ge[active_ge]))
        v = solve_with_fixed(A, b, fixed, settings)
        grad = A @ v - b
        tau_g = 1e-12 * (1.0 + scale)
        tau_v = 1e-12 * (1.0 + float(np.abs(v).max(initial=0.0)))
        new_le = np.where(active_le, grad[le] <= tau_g, v[le] > tau_v)
        new_ge = np.where(active_ge, grad[ge] >= -tau_g, v[ge] < -tau_v)
        if np.array_equal(new_le, active_le) and np.array_equal(
            new_ge, active_ge
        ):
            break
        active_le, active_ge = new_le, new_ge
    else:
        raise VISolverError(
            f"Active set did not settle in {maxit} iterations"
        )

    kkt = vi_kkt_residual(mesh, A, b, v, labels)
    if kkt > tol * max(scale, 1e-300):
        logger.info(
            f"Active-set result has KKT residual {kkt:.3e}; refining"
        )
        return projected_gradient_vi(mesh, b, labels, A, x0=v, tol=tol)
    logger.debug(f"Active set settled after {iteration} iterations")
    return ScalarField(mesh, v)


def solve_vector_neumann(
    mesh: Mesh,
    rho: ArrayLike,
    settings: SolverSettings | None = None,
) -> VectorField:
    """Solve a(V_i, w) = sum_b rho_b n_i(b) w_b w(b) for each component."""
    settings = settings or SolverSettings()
    density = np.asarray(rho, dtype=np.float64)
    if density.shape != (mesh.n_boundary,):
        raise FieldMismatchError(
            f"rho needs {mesh.n_boundary} boundary values, got {density.shape}"
        )
    A = h1_operator(mesh)
    values = np.zeros((mesh.n_vertices, 2))
    scaled = density * mesh.boundary_weights
    for i in range(2):
        rhs = np.zeros(mesh.n_vertices)
        rhs[mesh.boundary_nodes] = scaled * mesh.boundary_normals[:, i]
        try:
            values[:, i] = solve_with_fixed(A, rhs, [], settings)
        except SolverError as e:
            raise SolverError(
                f"Vector Neumann solve failed for component {i}: {e}",
                residual=e.residual,
            ) from e
    return VectorField(mesh, values)
