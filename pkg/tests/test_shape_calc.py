"""Tests for classification, shape gradients and material derivatives."""

import numpy as np
import pytest

from trescashape.exceptions import AdmissibilityError, GeometryError
from trescashape.fem import VectorField, interpolate
from trescashape.mesh import BoundaryGeometry, deform_mesh, generate_ellipse_mesh
from trescashape.problem import ProblemData, builtin_problem_data
from trescashape.shape_calc import (
    BoundaryClassification,
    BoundaryLabel,
    classify_boundary,
    compliance_energy,
    fd_material_derivative,
    fd_shape_gradient,
    lumped_surface_divergence,
    material_derivative,
    pullback_coefficients,
    reference_directions,
    shape_directional_derivative,
    shape_gradient_boundary,
    shape_gradient_density,
    shape_gradient_volume,
    solve_perturbed_tresca,
    solve_state,
    tresca_energy,
)
from trescashape.vi_solve import Constraint


def dilation(mesh):
    return reference_directions(mesh)["dilation"]


class TestClassification:
    def test_synthetic_labels(self, tiny_mesh):
        u = np.zeros(tiny_mesh.n_vertices)
        u[tiny_mesh.boundary_nodes[0]] = 0.5
        q = np.array([0.0, 1.0, -1.0, 0.2])
        g = np.full(4, 0.5)
        result = classify_boundary(tiny_mesh, u, q, g)
        assert result.labels.tolist() == [
            BoundaryLabel.N,
            BoundaryLabel.S_MINUS,
            BoundaryLabel.S_PLUS,
            BoundaryLabel.D,
        ]
        assert result.counts() == {"N": 1, "D": 1, "S_MINUS": 1, "S_PLUS": 1}
        assert result.constraints().tolist() == [
            Constraint.FREE,
            Constraint.LE0,
            Constraint.GE0,
            Constraint.EQ0,
        ]

    def test_flux_at_threshold_is_slip(self, tiny_mesh):
        u = np.zeros(tiny_mesh.n_vertices)
        q = np.array([0.5, -0.5, 0.5 - 1e-9, 0.0])
        result = classify_boundary(tiny_mesh, u, q, np.full(4, 0.5), eps_g=1e-8)
        assert result.labels[:3].tolist() == [
            BoundaryLabel.S_MINUS,
            BoundaryLabel.S_PLUS,
            BoundaryLabel.S_MINUS,
        ]
        assert result.eps_g == 1e-8

    def test_mixed_state_labels(self, ellipse_mesh, mixed_data, mixed_state):
        g = mixed_data.g_at(ellipse_mesh.vertices[ellipse_mesh.boundary_nodes])
        result = classify_boundary(ellipse_mesh, mixed_state.u, mixed_state.flux, g)
        assert result.count(BoundaryLabel.N) > 0
        assert result.count(BoundaryLabel.N) < ellipse_mesh.n_boundary
        assert sum(result.counts().values()) == ellipse_mesh.n_boundary

    @pytest.mark.parametrize("fixture", ["mixed_data", "slip_data"])
    @pytest.mark.parametrize("scale", [0.5, 1.5])
    def test_labels_stable_under_tolerance_changes(
        self, request, ellipse_mesh, fixture, scale
    ):
        data = request.getfixturevalue(fixture)
        state = solve_state(ellipse_mesh, data, "tresca")
        g = data.g_at(ellipse_mesh.vertices[ellipse_mesh.boundary_nodes])
        natural = classify_boundary(ellipse_mesh, state.u, state.flux, g)
        scaled = classify_boundary(
            ellipse_mesh,
            state.u,
            state.flux,
            g,
            eps_u=scale * natural.eps_u,
            eps_g=scale * natural.eps_g,
        )
        np.testing.assert_array_equal(scaled.labels, natural.labels)


class TestEnergies:
    def test_energy_matches_report(self, ellipse_mesh, mixed_data, mixed_state):
        energy = tresca_energy(ellipse_mesh, mixed_state.u, mixed_data)
        assert energy == pytest.approx(mixed_state.report.energy, rel=1e-12)

    def test_energy_equals_compliance(self, ellipse_mesh, mixed_state):
        """At the minimizer the quadratic and friction terms balance the load."""
        assert compliance_energy(ellipse_mesh, mixed_state.u) == pytest.approx(
            mixed_state.energy, rel=1e-8
        )

    @pytest.mark.parametrize("problem", ["tresca", "dirichlet", "neumann"])
    def test_solve_state(self, disk_mesh, mixed_data, problem):
        state = solve_state(disk_mesh, mixed_data, problem)
        assert state.problem == problem
        assert state.energy < 0
        assert state.flux.shape == (disk_mesh.n_boundary,)
        assert (state.report is not None) == (problem == "tresca")
        if problem == "dirichlet":
            assert not state.u.boundary_values.any()

    def test_energy_ordering(self, ellipse_mesh, mixed_data):
        """Friction sits between clamping and free slip with friction load."""
        energies = {
            p: solve_state(ellipse_mesh, mixed_data, p).energy
            for p in ("tresca", "dirichlet", "neumann")
        }
        assert energies["neumann"] <= energies["tresca"] <= energies["dirichlet"]

    def test_unknown_problem(self, disk_mesh, mixed_data):
        with pytest.raises(ValueError, match="Unknown problem"):
            solve_state(disk_mesh, mixed_data, "robin")


class TestShapeGradient:
    def test_volume_form_is_linear(self, ellipse_mesh, mixed_data, mixed_state):
        dirs = reference_directions(ellipse_mesh)
        combined = dirs["shear"] + dirs["bump"] * 2.0
        total = shape_gradient_volume(
            ellipse_mesh, mixed_state.u, mixed_data, combined
        )
        parts = shape_gradient_volume(
            ellipse_mesh, mixed_state.u, mixed_data, dirs["shear"]
        ) + 2.0 * shape_gradient_volume(
            ellipse_mesh, mixed_state.u, mixed_data, dirs["bump"]
        )
        assert total == pytest.approx(parts, rel=1e-12, abs=1e-14)

    def test_translation_invariance_without_data_gradient(self, disk_mesh):
        """Constant data make the energy invariant under rigid translation."""
        data = ProblemData.constant(1.0, 0.3)
        state = solve_state(disk_mesh, data, "tresca")
        V = np.tile([1.0, 0.0], (disk_mesh.n_vertices, 1))
        assert shape_gradient_volume(disk_mesh, state.u, data, V) == pytest.approx(
            0.0, abs=1e-10
        )

    def test_fd_converges_in_mixed_regime(self, ellipse_mesh, mixed_data):
        frame = fd_shape_gradient(
            ellipse_mesh,
            mixed_data,
            dilation(ellipse_mesh),
            [1e-2, 1e-3, 1e-4],
            method="pullback",
        )
        assert list(frame.columns) == ["t", "fd", "formula", "gap", "rel_gap", "ok"]
        assert frame["ok"].all()
        assert frame["rel_gap"].iloc[-1] < frame["rel_gap"].iloc[0]
        assert frame["rel_gap"].iloc[-1] < 1e-3

    def test_deformed_and_pullback_agree(self, ellipse_mesh, mixed_data):
        V = reference_directions(ellipse_mesh)["bump"]
        deformed = fd_shape_gradient(
            ellipse_mesh, mixed_data, V, [1e-2, 1e-3], method="deformed"
        )
        pullback = fd_shape_gradient(
            ellipse_mesh, mixed_data, V, [1e-2, 1e-3], method="pullback"
        )
        np.testing.assert_allclose(deformed["fd"], pullback["fd"], rtol=1e-6)

    def test_fd_workers_keep_descending_order(self, disk_mesh, mixed_data):
        frame = fd_shape_gradient(
            disk_mesh, mixed_data, dilation(disk_mesh), [1e-3, 1e-2], n_workers=2
        )
        assert frame["t"].tolist() == [1e-2, 1e-3]

    def test_inverting_step_is_skipped(self, disk_mesh, mixed_data):
        V = np.zeros((disk_mesh.n_vertices, 2))
        V[0] = [50.0, 0.0]
        frame = fd_shape_gradient(disk_mesh, mixed_data, V, [1.0, 1e-3])
        assert frame["ok"].tolist() == [False, True]
        assert np.isnan(frame["fd"].iloc[0])

    def test_dirichlet_density_is_non_positive(self, ellipse_mesh, stick_data):
        state = solve_state(ellipse_mesh, stick_data, "dirichlet")
        density = shape_gradient_density(
            ellipse_mesh, state.u, stick_data, problem="dirichlet"
        )
        assert np.all(density.values <= 0)

    def test_tresca_density_extras(self, ellipse_mesh, mixed_data, mixed_state):
        density = shape_gradient_density(ellipse_mesh, mixed_state.u, mixed_data)
        assert np.all(np.isfinite(density.values))
        assert set(density.extras) == {"flux", "grad_sq", "dn_flux"}

    def test_density_needs_curvature(self, disk_mesh, mixed_data):
        state = solve_state(disk_mesh, mixed_data, "tresca")
        geometry = BoundaryGeometry(
            normal=disk_mesh.boundary_normals,
            weight=disk_mesh.boundary_weights,
            curvature=np.full(disk_mesh.n_boundary, np.nan),
        )
        with pytest.raises(GeometryError):
            shape_gradient_density(disk_mesh, state.u, mixed_data, geometry)

    def test_unknown_gradient_trace(self, disk_mesh, mixed_data):
        state = solve_state(disk_mesh, mixed_data, "dirichlet")
        with pytest.raises(ValueError, match="gradient trace"):
            shape_gradient_boundary(
                disk_mesh, state.u, mixed_data, dilation(disk_mesh),
                gradient_trace="nodal",
            )

    @pytest.mark.slow
    @pytest.mark.parametrize("direction", ["dilation", "shear", "bump"])
    def test_fd_ladder_on_fine_mesh(self, direction):
        mesh = generate_ellipse_mesh(1.3, 1.0 / 1.3, 180, 45)
        data = builtin_problem_data(1.0)
        directions = reference_directions(mesh)
        state = solve_state(mesh, data, "tresca")
        scale = abs(
            shape_gradient_volume(mesh, state.u, data, directions["dilation"], "tresca")
        )
        t_list = [1e-2, 1e-3, 1e-4]
        V = directions[direction]
        deformed = fd_shape_gradient(mesh, data, V, t_list, method="deformed")
        pullback = fd_shape_gradient(mesh, data, V, t_list, method="pullback")
        assert deformed["ok"].all()
        gaps = deformed["gap"].to_numpy() / scale
        for coarse, fine in zip(gaps, gaps[1:], strict=False):
            assert fine < coarse or fine <= 1e-4
        assert gaps[1] <= 0.02
        np.testing.assert_allclose(
            pullback["fd"], deformed["fd"], rtol=1e-6, atol=1e-6 * scale
        )

    @pytest.mark.slow
    @pytest.mark.parametrize("direction", ["dilation", "shear", "bump"])
    @pytest.mark.parametrize("problem", ["dirichlet", "tresca"])
    def test_boundary_form_approaches_volume_form(self, problem, direction):
        """Shear has a near-zero derivative, so it is measured against dilation."""
        data = builtin_problem_data(1.0)
        reference = "dilation" if direction == "shear" else direction
        gaps = []
        for n_theta, n_rings in ((180, 45), (360, 90)):
            mesh = generate_ellipse_mesh(1.3, 1.0 / 1.3, n_theta, n_rings)
            state = solve_state(mesh, data, problem)
            directions = reference_directions(mesh)
            V = directions[direction]
            volume = shape_gradient_volume(mesh, state.u, data, V, problem)
            scale = abs(
                shape_gradient_volume(
                    mesh, state.u, data, directions[reference], problem
                )
            )
            boundary = shape_gradient_boundary(mesh, state.u, data, V, problem)
            density = shape_gradient_density(mesh, state.u, data, problem=problem)
            assert abs(boundary - volume) <= 0.1 * scale
            gaps.append(abs(density.directional(V) - volume) / scale)
        assert gaps[0] <= 0.1
        assert gaps[1] < gaps[0]


class TestPullback:
    def test_identity_at_zero(self, disk_mesh):
        coeffs = pullback_coefficients(disk_mesh, dilation(disk_mesh), 0.0)
        np.testing.assert_allclose(
            coeffs.matrix, np.broadcast_to(np.eye(2), coeffs.matrix.shape)
        )
        np.testing.assert_allclose(coeffs.jacobian, 1.0)
        np.testing.assert_allclose(coeffs.nodal_tangential, 1.0)

    def test_dilation_scales(self, disk_mesh):
        coeffs = pullback_coefficients(disk_mesh, dilation(disk_mesh), 0.1)
        np.testing.assert_allclose(coeffs.jacobian, 1.21)
        np.testing.assert_allclose(coeffs.tangential, 1.1)

    def test_collapse_is_rejected(self, disk_mesh):
        V = -disk_mesh.vertices
        with pytest.raises(AdmissibilityError, match="not invertible"):
            pullback_coefficients(disk_mesh, V, 1.0)

    def test_matches_deformed_mesh(self, ellipse_mesh, mixed_data):
        V = reference_directions(ellipse_mesh)["shear"]
        pulled = solve_perturbed_tresca(ellipse_mesh, mixed_data, V, 0.05)
        moved = deform_mesh(ellipse_mesh, V, 0.05)
        state = solve_state(moved, mixed_data, "tresca")
        np.testing.assert_allclose(pulled.values, state.u.values, atol=1e-8)

    def test_surface_divergence_of_dilation(self, ellipse_mesh):
        rates = lumped_surface_divergence(ellipse_mesh, dilation(ellipse_mesh))
        np.testing.assert_allclose(rates, ellipse_mesh.boundary_weights)


class TestMaterialDerivative:
    @pytest.mark.parametrize("fixture", ["stick_data", "slip_data", "mixed_data"])
    def test_fd_converges(self, request, ellipse_mesh, fixture):
        data = request.getfixturevalue(fixture)
        frame = fd_material_derivative(
            ellipse_mesh, data, dilation(ellipse_mesh), [1e-2, 1e-3, 1e-4]
        )
        gaps = frame["h1_gap"].to_numpy()
        assert gaps[1] < 0.3 * gaps[0]
        assert gaps[1] < 0.05
        assert gaps[2] < gaps[1] or gaps[2] <= 1e-5

    def test_positive_homogeneity(self, ellipse_mesh, mixed_data, mixed_state):
        g = mixed_data.g_at(ellipse_mesh.vertices[ellipse_mesh.boundary_nodes])
        classification = classify_boundary(
            ellipse_mesh, mixed_state.u, mixed_state.flux, g
        )
        V = reference_directions(ellipse_mesh)["bump"]
        once = material_derivative(
            ellipse_mesh, mixed_state.u, mixed_data, V, classification
        )
        twice = material_derivative(
            ellipse_mesh, mixed_state.u, mixed_data, V * 2.0, classification
        )
        np.testing.assert_allclose(twice.values, 2.0 * once.values, rtol=1e-8, atol=1e-12)

    def test_sign_constraints_break_oddness(self, disk_mesh, stick_data):
        """With every node in S_PLUS the map V -> u' is not odd."""
        state = solve_state(disk_mesh, stick_data, "tresca")
        classification = BoundaryClassification(
            labels=np.full(disk_mesh.n_boundary, BoundaryLabel.S_PLUS),
            eps_u=1e-12,
            eps_g=1e-12,
        )
        V = dilation(disk_mesh)
        forward = material_derivative(disk_mesh, state.u, stick_data, V, classification)
        backward = material_derivative(
            disk_mesh, state.u, stick_data, -V, classification
        )
        assert np.abs(forward.values + backward.values).max() > 1e-3
        assert forward.boundary_values.min() >= -1e-12
        assert backward.boundary_values.min() >= -1e-12

    def test_natural_slip_node_breaks_oddness(
        self, ellipse_mesh, mixed_data, mixed_state
    ):
        """Widening eps_g past the nearest stick margin yields an S node."""
        g = mixed_data.g_at(ellipse_mesh.vertices[ellipse_mesh.boundary_nodes])
        natural = classify_boundary(ellipse_mesh, mixed_state.u, mixed_state.flux, g)
        stick = natural.labels == BoundaryLabel.D
        margin = np.min(g[stick] - np.abs(mixed_state.flux[stick]))
        widened = classify_boundary(
            ellipse_mesh,
            mixed_state.u,
            mixed_state.flux,
            g,
            eps_u=natural.eps_u,
            eps_g=1.5 * margin,
        )
        assert (
            widened.count(BoundaryLabel.S_MINUS) + widened.count(BoundaryLabel.S_PLUS)
            >= 1
        )
        V = dilation(ellipse_mesh)
        forward = material_derivative(
            ellipse_mesh, mixed_state.u, mixed_data, V, widened
        )
        backward = material_derivative(
            ellipse_mesh, mixed_state.u, mixed_data, -V, widened
        )
        assert np.abs(forward.values + backward.values).max() > 1e-8

    def test_eulerian_derivative(self, disk_mesh):
        u0 = interpolate(lambda x, y: x, disk_mesh)
        V = VectorField(disk_mesh, np.tile([1.0, 0.0], (disk_mesh.n_vertices, 1)))
        material = interpolate(lambda x, y: 0.0 * x, disk_mesh)
        shape = shape_directional_derivative(u0, V, material)
        np.testing.assert_allclose(shape.values, -1.0)
