"""Volume-constrained shape optimization by gradient descent and Uzawa."""

import logging
from collections.abc import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from .config import OptimConfig, SolverSettings
from .exceptions import MeshInversionError
from .fem import VectorField, h1_operator, solve_with_fixed
from .mesh import (
    CurvatureMethodName,
    Mesh,
    area,
    boundary_geometry,
    deform_mesh,
    quality,
    vector_values,
)
from .models import HistoryRow, OptimHistory
from .problem import ProblemData, builtin_problem_data
from .shape_calc import (
    ShapeGradientDensity,
    StateSolution,
    shape_gradient_density,
    shape_gradient_functional,
    solve_state,
)
from .vi_solve import solve_vector_neumann

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

MAX_TAU_HALVINGS = 10
MIN_ANGLE_WARNING = 10.0
ARMIJO = 1e-4
MERIT_SLACK = 1e-10

Gradient = ShapeGradientDensity | FloatArray
Snapshot = Callable[[int, Mesh, StateSolution, VectorField], None]


def augmented_derivative(
    mesh: Mesh, gradient: Gradient, p: float, V: VectorField | ArrayLike
) -> float:
    """Directional derivative of J + p (|Omega| - lambda) in direction V.

    With a boundary density this is sum_b w_b (D_b + p) V_b . n_b; with an
    assembled functional G it is G . V + p times the exact first variation
    of the polygon area.
    """
    values = vector_values(mesh, V)
    if isinstance(gradient, ShapeGradientDensity):
        vb = values[mesh.boundary_nodes]
        vn = np.einsum("ba,ba->b", vb, gradient.geometry.normal)
        return gradient.directional(values) + p * float(
            np.sum(gradient.geometry.weight * vn)
        )
    G = np.asarray(gradient, dtype=np.float64)
    area_rate = np.sum(mesh.boundary_normal_measure * values[mesh.boundary_nodes])
    return float(np.sum(G * values) + p * area_rate)


def descent_direction(
    mesh: Mesh,
    gradient: Gradient,
    p: float,
    settings: SolverSettings | None = None,
) -> VectorField:
    """H1 Riesz representative of minus the augmented derivative.

    The result V0 satisfies <V0, W>_H1 = -augmented_derivative(W) for all
    nodal W, so the derivative at V0 is -||V0||^2.
    """
    if isinstance(gradient, ShapeGradientDensity):
        return solve_vector_neumann(mesh, -(gradient.values + p), settings)
    rhs = -np.array(gradient, dtype=np.float64)
    if rhs.shape != (mesh.n_vertices, 2):
        raise ValueError(
            f"Shape gradient must have shape ({mesh.n_vertices}, 2), got {rhs.shape}"
        )
    rhs[mesh.boundary_nodes] -= p * mesh.boundary_normal_measure
    A = h1_operator(mesh)
    values = np.column_stack(
        [solve_with_fixed(A, rhs[:, i], [], settings) for i in range(2)]
    )
    return VectorField(mesh, values)


def uzawa_update(p: float, mu: float, area: float, lambda_target: float) -> float:
    """Multiplier ascent p + mu (area - lambda_target)."""
    return p + mu * (area - lambda_target)


def _merit(
    energy: float, area_now: float, p: float, penalty: float, lambda_target: float
) -> float:
    violation = area_now - lambda_target
    return energy + p * violation + 0.5 * penalty * violation**2


def _status_counts(state: StateSolution) -> tuple[int, int, int]:
    if state.report is not None:
        counts = state.report.status_counts
        return counts["stick"], counts["slip_plus"], counts["slip_minus"]
    ub = state.u.boundary_values
    eps = 1e-12 * (1.0 + float(np.abs(state.u.values).max()))
    plus = int(np.count_nonzero(ub > eps))
    minus = int(np.count_nonzero(ub < -eps))
    return len(ub) - plus - minus, plus, minus


def _gradient(
    state: StateSolution,
    data: ProblemData,
    config: OptimConfig,
    curvature_method: CurvatureMethodName,
    settings: SolverSettings | None,
) -> Gradient:
    mesh = state.mesh
    if config.gradient_form == "boundary":
        geometry = boundary_geometry(mesh, curvature_method)
        return shape_gradient_density(
            mesh, state.u, data, geometry, config.problem, settings=settings
        )
    return shape_gradient_functional(mesh, state.u, data, config.problem)


def optimize(
    mesh0: Mesh,
    config: OptimConfig,
    data: ProblemData | None = None,
    settings: SolverSettings | None = None,
    curvature_method: CurvatureMethodName = "osculating",
    snapshot: Snapshot | None = None,
    snapshot_every: int = 50,
) -> tuple[Mesh, OptimHistory]:
    """Run the Uzawa loop from ``mesh0``.

    Each outer iteration solves the state, builds the descent direction
    for the multiplier p + penalty (|Omega| - lambda), moves the mesh and
    updates the multiplier. tau is halved, up to ten times, while a
    triangle inverts or the merit J + p (|Omega| - lambda) + penalty/2
    (|Omega| - lambda)^2 fails the Armijo test at the current p. The
    state solved on the accepted mesh is reused by the next iteration.
    Every ``check_every`` iterations the energy is compared to its value
    ``check_every`` iterations earlier; a change below ``stop_tol`` ends
    the run.

    Returns
    -------
    tuple[Mesh, OptimHistory]
        The last accepted mesh and the per-iteration history, whose
        ``status`` is converged, max_outer, inversion or left_bbox.
    """
    data = data or builtin_problem_data(config.beta)
    lam = config.lambda_target
    mesh = mesh0
    p = config.p0
    history = OptimHistory()
    energies: list[float] = []
    warned_quality = False
    state: StateSolution | None = None
    logger.info(
        f"Optimizing {config.problem} (beta={config.beta:g}, "
        f"{config.gradient_form} gradient) for at most {config.max_outer} iterations"
    )

    for k in range(config.max_outer):
        if not data.contains(mesh):
            logger.error(f"Shape left the data box {data.bbox} at iteration {k}")
            history.status = "left_bbox"
            break
        if state is None:
            state = solve_state(mesh, data, config.problem, settings)
        energies.append(state.energy)
        if k > 0 and k % config.check_every == 0:
            change = abs(energies[k] - energies[k - config.check_every])
            if change < config.stop_tol:
                logger.info(f"Converged at iteration {k} (energy change {change:.2e})")
                history.status = "converged"
                break

        area_start = area(mesh)
        violation = area_start - lam
        p_used = p + config.penalty * violation
        merit = _merit(state.energy, area_start, p, config.penalty, lam)
        gradient = _gradient(state, data, config, curvature_method, settings)
        V = descent_direction(mesh, gradient, p_used, settings)
        slope = augmented_derivative(mesh, gradient, p_used, V)

        tau = config.tau
        step: tuple[float, Mesh, StateSolution, float] | None = None
        for _ in range(MAX_TAU_HALVINGS + 1):
            try:
                moved = deform_mesh(mesh, V, tau)
            except MeshInversionError as e:
                logger.warning(f"Iteration {k}: {e}; halving tau")
                tau *= 0.5
                continue
            trial = solve_state(moved, data, config.problem, settings)
            trial_merit = _merit(trial.energy, area(moved), p, config.penalty, lam)
            step = (tau, moved, trial, trial_merit)
            if trial_merit <= merit + ARMIJO * tau * slope + MERIT_SLACK:
                break
            logger.debug(
                f"Iteration {k}: merit {trial_merit:.10f} > {merit:.10f} "
                f"at tau={tau:g}, backtracking"
            )
            tau *= 0.5
        else:
            if step is not None:
                logger.warning(
                    f"Iteration {k}: no sufficient decrease after "
                    f"{MAX_TAU_HALVINGS} halvings; taking tau={step[0]:g}"
                )
        if step is None:
            logger.error(
                f"Iteration {k}: mesh still inverts after {MAX_TAU_HALVINGS} halvings"
            )
            history.status = "inversion"
            break
        tau, moved, trial, merit_end = step

        new_area = area(moved)
        p_new = uzawa_update(p, config.mu, new_area, lam)
        min_angle, _ = quality(moved)
        if min_angle < MIN_ANGLE_WARNING and not warned_quality:
            logger.warning(
                f"Minimum angle {min_angle:.1f} deg at iteration {k}; save the mesh, "
                "remesh it and restart with --mesh"
            )
            warned_quality = True
        stick, slip_plus, slip_minus = _status_counts(state)
        history.rows.append(
            HistoryRow(
                iter=k,
                J=state.energy,
                area=new_area,
                p=p_new,
                tau=tau,
                stick=stick,
                slip_plus=slip_plus,
                slip_minus=slip_minus,
                min_angle=min_angle,
                p_used=p_used,
                area_start=area_start,
                merit=merit,
                merit_end=merit_end,
            )
        )
        logger.debug(
            f"iter {k}: J={state.energy:.8f} area={new_area:.6f} p={p_new:.6f} tau={tau:g}"
        )
        if snapshot is not None and k % snapshot_every == 0:
            snapshot(k, mesh, state, V)
        mesh, p, state = moved, p_new, trial

    logger.info(f"Optimization finished: {history.status} after {len(history)} iterations")
    return mesh, history


def _point_segment_distances(
    points: FloatArray, starts: FloatArray, ends: FloatArray
) -> FloatArray:
    d = ends - starts
    length2 = np.einsum("...a,...a->...", d, d)
    s = np.einsum("...a,...a->...", points[:, None, :] - starts, d)
    s = np.clip(s / np.where(length2 > 0, length2, 1.0), 0.0, 1.0)
    nearest = starts + s[..., None] * d
    return np.linalg.norm(points[:, None, :] - nearest, axis=-1)


def _distances_to_polyline(
    points: FloatArray, polyline: FloatArray, k: int = 8
) -> FloatArray:
    n = len(polyline)
    k = min(k, n)
    _, index = cKDTree(polyline).query(points, k=k)
    index = np.asarray(index).reshape(len(points), k)
    # Segments i-1 -> i and i -> i+1 around each candidate vertex.
    first = np.concatenate(((index - 1) % n, index), axis=1)
    starts = polyline[first]
    ends = polyline[(first + 1) % n]
    return _point_segment_distances(points, starts, ends).min(axis=1)


def compare_boundaries(mesh_a: Mesh, mesh_b: Mesh) -> tuple[float, float]:
    """Symmetric Hausdorff and mean nearest-point distances between boundaries."""
    a = mesh_a.vertices[mesh_a.boundary_nodes]
    b = mesh_b.vertices[mesh_b.boundary_nodes]
    ab = _distances_to_polyline(a, b)
    ba = _distances_to_polyline(b, a)
    hausdorff = max(float(ab.max()), float(ba.max()))
    mean = 0.5 * (float(ab.mean()) + float(ba.mean()))
    return hausdorff, mean
