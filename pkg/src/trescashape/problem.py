"""Closed-form problem data: source term f and friction threshold g."""

from collections.abc import Callable
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import NDArray

from .exceptions import ProblemDataError

if TYPE_CHECKING:
    from .mesh import Mesh

ScalarFn = Callable[[NDArray[np.float64], NDArray[np.float64]], NDArray[np.float64]]
GradientFn = Callable[
    [NDArray[np.float64], NDArray[np.float64]], NDArray[np.float64]
]

DEFAULT_BBOX = (-3.0, -3.0, 3.0, 3.0)


@dataclass(frozen=True)
class ProblemData:
    """Source ``f`` and threshold ``g`` with optional closed-form gradients.

    Evaluators take coordinate arrays ``(x, y)``; gradients return an
    ``(n, 2)`` array. Missing gradients make the shape calculus fall back to
    nodal recovery, which is only first-order accurate.
    """

    f: ScalarFn
    g: ScalarFn
    grad_f: GradientFn | None = None
    grad_g: GradientFn | None = None
    beta: float | None = None
    bbox: tuple[float, float, float, float] = DEFAULT_BBOX

    def f_at(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.asarray(
            self.f(points[:, 0], points[:, 1]), dtype=float
        ) * np.ones(len(points))

    def g_at(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.asarray(
            self.g(points[:, 0], points[:, 1]), dtype=float
        ) * np.ones(len(points))

    def contains(self, mesh: "Mesh") -> bool:
        """Whether every vertex lies in the box where the data are exact."""
        x0, y0, x1, y1 = self.bbox
        v = mesh.vertices
        return bool(
            np.all(
                (v[:, 0] >= x0)
                & (v[:, 0] <= x1)
                & (v[:, 1] >= y0)
                & (v[:, 1] <= y1)
            )
        )

    @classmethod
    def constant(cls, f: float, g: float) -> "ProblemData":
        """Spatially constant data with exact zero gradients."""

        def f_fn(x: NDArray[np.float64], y: NDArray[np.float64]) -> NDArray[np.float64]:
            return np.full(np.shape(x), float(f))

        def g_fn(x: NDArray[np.float64], y: NDArray[np.float64]) -> NDArray[np.float64]:
            return np.full(np.shape(x), float(g))

        def zero(x: NDArray[np.float64], y: NDArray[np.float64]) -> NDArray[np.float64]:
            return np.zeros((np.size(x), 2))

        return cls(f=f_fn, g=g_fn, grad_f=zero, grad_g=zero)


def builtin_problem_data(
    beta: float,
    bbox: tuple[float, float, float, float] = DEFAULT_BBOX,
    f_scale: float = 1.0,
) -> ProblemData:
    """The two-dimensional benchmark data, with the cut-off equal to 1.

    f(x, y) = (5 - x^2 - y^2 + xy) / 4 and
    g(x, y) = beta (1 + sin(x)^2 / 0.8). ``f_scale`` multiplies f.

    Raises
    ------
    ProblemDataError
        If ``beta`` is not positive.
    """
    if not beta > 0:
        raise ProblemDataError(f"beta must be > 0, got {beta}")

    def f(x: NDArray[np.float64], y: NDArray[np.float64]) -> NDArray[np.float64]:
        return f_scale * (5.0 - x**2 - y**2 + x * y) / 4.0

    def grad_f(x: NDArray[np.float64], y: NDArray[np.float64]) -> NDArray[np.float64]:
        return f_scale * np.column_stack(
            ((-2.0 * x + y) / 4.0, (-2.0 * y + x) / 4.0)
        )

    def g(x: NDArray[np.float64], y: NDArray[np.float64]) -> NDArray[np.float64]:
        return beta * (1.0 + np.sin(x) ** 2 / 0.8) + 0.0 * y

    def grad_g(x: NDArray[np.float64], y: NDArray[np.float64]) -> NDArray[np.float64]:
        dgx = beta * 2.0 * np.sin(x) * np.cos(x) / 0.8
        return np.column_stack((dgx, np.zeros_like(dgx) + 0.0 * y))

    return ProblemData(
        f=f, g=g, grad_f=grad_f, grad_g=grad_g, beta=beta, bbox=bbox
    )
