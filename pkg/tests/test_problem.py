"""Tests for the benchmark source and friction data."""

import numpy as np
import pytest

from trescashape.exceptions import ProblemDataError
from trescashape.problem import ProblemData, builtin_problem_data


def test_builtin_values():
    data = builtin_problem_data(0.49)
    points = np.array([[0.0, 0.0], [1.0, 1.0], [np.pi / 2, 0.0]])
    np.testing.assert_allclose(
        data.f_at(points), [1.25, 1.0, (5.0 - np.pi**2 / 4) / 4]
    )
    np.testing.assert_allclose(data.g_at(points)[[0, 2]], [0.49, 0.49 * 2.25])


def test_gradients_match_finite_differences():
    data = builtin_problem_data(0.37, f_scale=2.0)
    x, y, h = np.array([0.3, -0.7]), np.array([0.2, 0.5]), 1e-6
    for fn, grad in ((data.f, data.grad_f), (data.g, data.grad_g)):
        dx = (fn(x + h, y) - fn(x - h, y)) / (2 * h)
        dy = (fn(x, y + h) - fn(x, y - h)) / (2 * h)
        np.testing.assert_allclose(grad(x, y), np.column_stack((dx, dy)), atol=1e-8)


def test_non_positive_beta():
    with pytest.raises(ProblemDataError, match="beta must be > 0"):
        builtin_problem_data(0.0)


def test_contains(disk_mesh):
    assert builtin_problem_data(0.1).contains(disk_mesh)
    small = builtin_problem_data(0.1, bbox=(-0.5, -0.5, 0.5, 0.5))
    assert not small.contains(disk_mesh)


def test_constant_data():
    data = ProblemData.constant(2.0, 0.5)
    points = np.zeros((3, 2))
    np.testing.assert_array_equal(data.f_at(points), 2.0)
    np.testing.assert_array_equal(data.grad_g(points[:, 0], points[:, 1]), 0.0)
