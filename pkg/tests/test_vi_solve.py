"""Tests for the Tresca, Dirichlet, Neumann and sign-constrained solvers."""

import numpy as np
import pytest
from pydantic import ValidationError

from trescashape.exceptions import (
    FieldMismatchError,
    ProblemDataError,
    VISolverError,
)
from trescashape.fem import assemble_load, h1_norm, h1_operator, solve_with_fixed
from trescashape.mesh import deform_mesh, generate_ellipse_mesh
from trescashape.models import TrescaSolveReport
from trescashape.problem import ProblemData, builtin_problem_data
from trescashape.vi_solve import (
    BoundaryStatus,
    Constraint,
    TrescaSystem,
    check_tresca_law,
    complementarity_residual,
    projected_gradient_vi,
    proximal_solve,
    solve_constrained_vi,
    solve_dirichlet,
    solve_neumann,
    solve_tresca_proximal,
    solve_tresca_switching,
    solve_vector_neumann,
    switching_solve,
    vi_kkt_residual,
)


def nodal_data(mesh, data):
    f = data.f_at(mesh.vertices)
    g = data.g_at(mesh.vertices[mesh.boundary_nodes])
    return f, g


class TestTrescaSolvers:
    """Switching and proximal solvers on the ellipse."""

    def test_switching_satisfies_friction_law(self, ellipse_mesh, mixed_data):
        f, g = nodal_data(ellipse_mesh, mixed_data)
        u, report = solve_tresca_switching(ellipse_mesh, f, g)
        assert report.converged
        assert check_tresca_law(ellipse_mesh, u, f, g).max() <= 1e-7

    def test_mixed_regime_has_stick_and_slip(self, ellipse_mesh, mixed_data):
        f, g = nodal_data(ellipse_mesh, mixed_data)
        _, report = solve_tresca_switching(ellipse_mesh, f, g)
        counts = report.status_counts
        assert counts["stick"] > 0
        assert counts["slip_plus"] > 0
        assert counts["slip_minus"] == 0

    def test_proximal_satisfies_friction_law(self, ellipse_mesh, mixed_data):
        f, g = nodal_data(ellipse_mesh, mixed_data)
        u = solve_tresca_proximal(ellipse_mesh, f, g, tol=1e-13)
        assert check_tresca_law(ellipse_mesh, u, f, g).max() <= 1e-6

    def test_solvers_agree(self, ellipse_mesh, mixed_data):
        f, g = nodal_data(ellipse_mesh, mixed_data)
        u_switch, report = solve_tresca_switching(ellipse_mesh, f, g)
        u_prox = solve_tresca_proximal(ellipse_mesh, f, g, tol=1e-13)
        assert np.abs(u_switch.values - u_prox.values).max() <= 1e-5
        system = TrescaSystem.reference(ellipse_mesh, f, g)
        assert system.energy(u_prox.values) == pytest.approx(
            report.energy, rel=1e-9
        )

    def test_energy_not_above_perturbations(self, ellipse_mesh, mixed_data):
        f, g = nodal_data(ellipse_mesh, mixed_data)
        system = TrescaSystem.reference(ellipse_mesh, f, g)
        u, report = switching_solve(system)
        rng = np.random.default_rng(7)
        for _ in range(5):
            v = u + 1e-3 * rng.standard_normal(u.shape)
            assert system.energy(v) >= report.energy

    def test_zero_source_gives_zero(self, disk_mesh):
        f = np.zeros(disk_mesh.n_vertices)
        g = np.full(disk_mesh.n_boundary, 0.3)
        u, report = solve_tresca_switching(disk_mesh, f, g)
        assert not u.values.any()
        assert report.energy == 0.0
        assert report.status_counts["stick"] == disk_mesh.n_boundary

    def test_large_threshold_is_dirichlet(self, ellipse_mesh, stick_data):
        f, g = nodal_data(ellipse_mesh, stick_data)
        u, report = solve_tresca_switching(ellipse_mesh, f, g)
        dirichlet = solve_dirichlet(ellipse_mesh, f)
        np.testing.assert_allclose(u.values, dirichlet.values, atol=1e-9)
        assert set(report.status) == {BoundaryStatus.STICK}

    def test_small_threshold_is_neumann(self, ellipse_mesh, slip_data):
        f, g = nodal_data(ellipse_mesh, slip_data)
        u, report = solve_tresca_switching(ellipse_mesh, f, g)
        neumann = solve_neumann(ellipse_mesh, f, -g)
        np.testing.assert_allclose(u.values, neumann.values, atol=1e-9)
        assert set(report.status) == {BoundaryStatus.SLIP_PLUS}

    def test_iteration_limit_falls_back(self, ellipse_mesh):
        f = np.full(ellipse_mesh.n_vertices, 1.25)
        g = np.full(ellipse_mesh.n_boundary, 0.1)
        system = TrescaSystem.reference(ellipse_mesh, f, g)
        u, report = switching_solve(system, maxit=1)
        assert report.fallback_used
        assert report.method == "proximal"
        assert check_tresca_law(ellipse_mesh, u, f, g).max() <= 1e-6

    def test_warm_start_from_solution(self, ellipse_mesh, mixed_data):
        f, g = nodal_data(ellipse_mesh, mixed_data)
        _, first = solve_tresca_switching(ellipse_mesh, f, g)
        _, second = solve_tresca_switching(ellipse_mesh, f, g, init=first.status)
        assert second.iterations == 1
        assert second.status == first.status

    def test_bad_initial_status(self, disk_mesh):
        f = np.ones(disk_mesh.n_vertices)
        g = np.ones(disk_mesh.n_boundary)
        with pytest.raises(FieldMismatchError, match="Initial status"):
            solve_tresca_switching(disk_mesh, f, g, init=[0, 1])

    def test_non_positive_threshold(self, disk_mesh):
        f = np.ones(disk_mesh.n_vertices)
        g = np.zeros(disk_mesh.n_boundary)
        with pytest.raises(ProblemDataError):
            solve_tresca_switching(disk_mesh, f, g)

    def test_proximal_iteration_limit(self, ellipse_mesh, mixed_data):
        f, g = nodal_data(ellipse_mesh, mixed_data)
        with pytest.raises(VISolverError, match="did not converge"):
            solve_tresca_proximal(ellipse_mesh, f, g, tol=1e-13, maxit=2)

    def test_proximal_monitor(self, disk_mesh):
        f = np.ones(disk_mesh.n_vertices)
        g = np.full(disk_mesh.n_boundary, 0.2)
        seen: list[tuple[int, float]] = []
        system = TrescaSystem.reference(disk_mesh, f, g)
        _, report = proximal_solve(
            system, monitor=lambda it, e: seen.append((it, e))
        )
        assert [it for it, _ in seen] == list(range(1, report.iterations + 1))
        assert seen[-1][1] == pytest.approx(report.energy, rel=1e-12)


class TestResiduals:
    def test_complementarity_flags_wrong_sign(self, disk_mesh):
        f = np.ones(disk_mesh.n_vertices)
        g = np.ones(disk_mesh.n_boundary)
        system = TrescaSystem.reference(disk_mesh, f, g)
        u = np.zeros(disk_mesh.n_vertices)
        u[disk_mesh.boundary_nodes[0]] = -0.5
        status = np.full(disk_mesh.n_boundary, BoundaryStatus.SLIP_PLUS)
        assert complementarity_residual(system, u, status) == pytest.approx(0.5)

    def test_report_rejects_inconsistent_convergence(self):
        with pytest.raises(ValidationError, match="above tol"):
            TrescaSolveReport(
                iterations=1,
                status=[0],
                converged=True,
                energy=0.0,
                residual=1.0,
                tol=1e-10,
            )


class TestConstrainedVI:
    """Sign-constrained quadratic problems with a positive load."""

    @pytest.fixture
    def load(self, disk_mesh):
        return assemble_load(disk_mesh, np.ones(disk_mesh.n_vertices))

    def test_free_is_linear_solve(self, disk_mesh, load):
        free = np.full(disk_mesh.n_boundary, Constraint.FREE)
        v = solve_constrained_vi(disk_mesh, load, free)
        expected = solve_with_fixed(h1_operator(disk_mesh), load, [])
        np.testing.assert_allclose(v.values, expected, atol=1e-9)

    def test_all_fixed_is_dirichlet(self, disk_mesh, load):
        fixed = np.full(disk_mesh.n_boundary, Constraint.EQ0)
        v = solve_constrained_vi(disk_mesh, load, fixed)
        dirichlet = solve_dirichlet(disk_mesh, np.ones(disk_mesh.n_vertices))
        np.testing.assert_allclose(v.values, dirichlet.values, atol=1e-9)

    def test_upper_bound_is_active(self, disk_mesh, load):
        """The load pushes upward, so v <= 0 pins the boundary at zero."""
        le = np.full(disk_mesh.n_boundary, Constraint.LE0)
        v = solve_constrained_vi(disk_mesh, load, le)
        assert np.abs(v.boundary_values).max() <= 1e-12
        A = h1_operator(disk_mesh)
        assert vi_kkt_residual(disk_mesh, A, load, v.values, le) <= 1e-9

    def test_lower_bound_is_inactive(self, disk_mesh, load):
        ge = np.full(disk_mesh.n_boundary, Constraint.GE0)
        v = solve_constrained_vi(disk_mesh, load, ge)
        expected = solve_with_fixed(h1_operator(disk_mesh), load, [])
        np.testing.assert_allclose(v.values, expected, atol=1e-9)
        assert v.boundary_values.min() > 0

    def test_mixed_constraints_match_projected_gradient(self, disk_mesh):
        x, y = disk_mesh.vertices.T
        rhs = assemble_load(disk_mesh, np.sin(3 * x) + y)
        labels = np.arange(disk_mesh.n_boundary) % 4
        v = solve_constrained_vi(disk_mesh, rhs, labels)
        w = projected_gradient_vi(disk_mesh, rhs, labels, tol=1e-13)
        np.testing.assert_allclose(v.values, w.values, atol=1e-7)
        bv = v.boundary_values
        assert np.all(bv[labels == Constraint.EQ0] == 0)
        assert np.all(bv[labels == Constraint.LE0] <= 1e-12)
        assert np.all(bv[labels == Constraint.GE0] >= -1e-12)

    def test_constraint_length(self, disk_mesh, load):
        with pytest.raises(FieldMismatchError, match="one constraint"):
            solve_constrained_vi(disk_mesh, load, [Constraint.FREE])


class TestVectorNeumann:
    def test_energy_identity(self, ellipse_mesh):
        rho = np.cos(np.arange(ellipse_mesh.n_boundary))
        V = solve_vector_neumann(ellipse_mesh, rho)
        A = h1_operator(ellipse_mesh)
        energy = sum(V.values[:, i] @ (A @ V.values[:, i]) for i in range(2))
        vb = V.boundary_values
        normal_speed = np.einsum("ba,ba->b", vb, ellipse_mesh.boundary_normals)
        work = np.sum(rho * ellipse_mesh.boundary_weights * normal_speed)
        assert energy == pytest.approx(work, rel=1e-9)

    def test_wrong_density_length(self, disk_mesh):
        with pytest.raises(FieldMismatchError, match="rho"):
            solve_vector_neumann(disk_mesh, np.ones(3))


def random_case(seed):
    """A jittered small ellipse with smooth random data and g > 0."""
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.8, 1.5), rng.uniform(0.6, 1.2)
    n_rings = int(rng.integers(3, 7))
    mesh = generate_ellipse_mesh(a, b, int(rng.integers(16, 41)), n_rings)
    jitter = np.zeros((mesh.n_vertices, 2))
    inner = mesh.interior_nodes
    jitter[inner] = rng.uniform(-1.0, 1.0, (len(inner), 2))
    mesh = deform_mesh(mesh, jitter, 0.03 * min(a, b) / n_rings)

    c = rng.uniform(-0.3, 0.3, 3)
    f0, g0, g1 = rng.uniform(0.5, 1.5), rng.uniform(0.05, 0.5), rng.uniform(0.0, 1.0)
    data = ProblemData(
        f=lambda x, y: f0 + c[0] * x + c[1] * y + c[2] * np.sin(x) * np.cos(y),
        g=lambda x, y: g0 * (1.0 + g1 * np.cos(x + y) ** 2),
    )
    return mesh, data


class TestCrossSolver:
    @pytest.mark.parametrize("seed", range(10))
    def test_switching_and_proximal_agree(self, seed):
        mesh, data = random_case(seed)
        f, g = nodal_data(mesh, data)
        u_switch, report = solve_tresca_switching(mesh, f, g)
        u_prox = solve_tresca_proximal(mesh, f, g, tol=1e-13)
        assert report.converged
        assert h1_norm(u_switch - u_prox) <= 1e-5 * h1_norm(u_switch)
        assert check_tresca_law(mesh, u_switch, f, g).max() <= 1e-7
        assert check_tresca_law(mesh, u_prox, f, g).max() <= 1e-6
        assert report.energy == pytest.approx(
            -0.5 * h1_norm(u_switch) ** 2, abs=1e-8 * (1.0 + abs(report.energy))
        )


class TestThresholdMonotonicity:
    """Raising g lowers the weighted slip and raises the minimum energy."""

    BETAS = (0.01, 0.1, 0.28, 0.49, 1.0)

    def test_slip_and_energy_are_monotone(self, ellipse_mesh):
        bn = ellipse_mesh.boundary_nodes
        shape = builtin_problem_data(1.0).g_at(ellipse_mesh.vertices[bn])
        slips, energies = [], []
        for beta in self.BETAS:
            f, g = nodal_data(ellipse_mesh, builtin_problem_data(beta))
            u, report = solve_tresca_switching(ellipse_mesh, f, g)
            weighted = shape * ellipse_mesh.boundary_weights * np.abs(u.values[bn])
            slips.append(weighted.sum())
            energies.append(report.energy)
        assert np.all(np.diff(slips) <= 1e-8)
        assert np.all(np.diff(energies) >= -1e-8)
        assert slips[-1] <= 1e-9


@pytest.mark.slow
class TestRegimes:
    """Tresca against Neumann(-g) on the fine initial ellipse."""

    @pytest.fixture(scope="class")
    def fine_mesh(self):
        return generate_ellipse_mesh(1.3, 1.0 / 1.3, 128, 32)

    @pytest.mark.parametrize("beta", [0.28, 0.1, 0.01])
    def test_positive_neumann_solution_is_tresca(self, fine_mesh, beta):
        f, g = nodal_data(fine_mesh, builtin_problem_data(beta))
        neumann = solve_neumann(fine_mesh, f, -g)
        u, report = solve_tresca_switching(fine_mesh, f, g)
        if beta < 0.28:
            assert neumann.boundary_values.min() > 0
        if neumann.boundary_values.min() > 0:
            assert h1_norm(u - neumann) <= 1e-8 * h1_norm(neumann)
            assert set(report.status) == {BoundaryStatus.SLIP_PLUS}
        else:
            assert report.status_counts["stick"] > 0
