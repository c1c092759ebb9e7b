"""Pytest fixtures for tresca-shape tests."""

from pathlib import Path

import pytest

from trescashape.mesh import Mesh, generate_ellipse_mesh
from trescashape.problem import ProblemData, builtin_problem_data
from trescashape.shape_calc import StateSolution, solve_state

ELLIPSE_A = 1.3
ELLIPSE_B = 1.0 / 1.3


@pytest.fixture(scope="session")
def disk_mesh() -> Mesh:
    """Unit disk, 32 boundary nodes."""
    return generate_ellipse_mesh(1.0, 1.0, 32, 8)


@pytest.fixture(scope="session")
def ellipse_mesh() -> Mesh:
    """The initial ellipse of the optimization runs, coarse."""
    return generate_ellipse_mesh(ELLIPSE_A, ELLIPSE_B, 48, 12)


@pytest.fixture(scope="session")
def tiny_mesh() -> Mesh:
    """Center vertex plus four boundary nodes: 5 vertices, 4 triangles."""
    return generate_ellipse_mesh(1.0, 1.0, 4, 1)


@pytest.fixture(scope="session")
def mixed_data() -> ProblemData:
    """beta = 0.49: stick and slip nodes coexist on the ellipse."""
    return builtin_problem_data(0.49)


@pytest.fixture(scope="session")
def stick_data() -> ProblemData:
    """beta = 1: the threshold is never reached, Tresca equals Dirichlet."""
    return builtin_problem_data(1.0)


@pytest.fixture(scope="session")
def slip_data() -> ProblemData:
    """beta = 0.01: every boundary node slips, Tresca equals Neumann."""
    return builtin_problem_data(0.01)


@pytest.fixture(scope="session")
def mixed_state(ellipse_mesh: Mesh, mixed_data: ProblemData) -> StateSolution:
    return solve_state(ellipse_mesh, mixed_data, "tresca")


@pytest.fixture
def config_file(tmp_path: Path):
    """Write a ``key = value`` config into tmp_path and return its path."""

    def write(text: str, name: str = "run.cfg") -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write
