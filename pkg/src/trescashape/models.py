"""Pydantic models for solver reports, optimization histories and run reports."""

from typing import Literal

import pandas as pd
from pydantic import BaseModel, Field, computed_field, model_validator

__all__ = [
    "HISTORY_COLUMNS",
    "ComparisonReport",
    "HistoryRow",
    "OptimHistory",
    "RunSummary",
    "TrescaSolveReport",
]

HISTORY_COLUMNS = (
    "iter",
    "J",
    "area",
    "p",
    "tau",
    "stick",
    "slip_plus",
    "slip_minus",
    "min_angle",
)

OptimStatus = Literal["converged", "max_outer", "inversion", "left_bbox"]


class TrescaSolveReport(BaseModel):
    """Outcome of a Tresca solve.

    ``status`` holds one :class:`~trescashape.vi_solve.BoundaryStatus`
    value per boundary node, in boundary order.
    """

    iterations: int
    status: list[int]
    converged: bool
    energy: float
    residual: float
    tol: float
    method: Literal["switching", "proximal"] = "switching"
    fallback_used: bool = False

    @model_validator(mode="after")
    def _converged_within_tol(self) -> "TrescaSolveReport":
        if self.converged and not self.residual <= self.tol:
            raise ValueError(
                f"converged report with residual {self.residual:.3e} "
                f"above tol {self.tol:.3e}"
            )
        return self

    @computed_field  # type: ignore[prop-decorator]
    @property
    def status_counts(self) -> dict[str, int]:
        """Number of STICK, SLIP_PLUS and SLIP_MINUS nodes."""
        return {
            "stick": self.status.count(0),
            "slip_plus": self.status.count(1),
            "slip_minus": self.status.count(2),
        }


class HistoryRow(BaseModel):
    """One outer iteration of the optimization loop.

    ``J`` is the energy of the shape the step started from; ``area`` is
    measured after the deformation and ``p`` is the updated multiplier.
    ``merit`` and ``merit_end`` evaluate J + p (area - lambda) + penalty/2
    (area - lambda)^2 with the multiplier of the step, before and after it.
    """

    iter: int
    J: float
    area: float
    p: float
    tau: float
    stick: int = 0
    slip_plus: int = 0
    slip_minus: int = 0
    min_angle: float
    p_used: float = 0.0
    area_start: float = 0.0
    merit: float = 0.0
    merit_end: float = 0.0


class OptimHistory(BaseModel):
    """All rows of a run plus its terminal status."""

    rows: list[HistoryRow] = Field(default_factory=list)
    status: OptimStatus = "max_outer"

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def energies(self) -> list[float]:
        return [row.J for row in self.rows]

    def to_frame(self, extended: bool = False) -> pd.DataFrame:
        """Rows as a DataFrame with the history CSV columns.

        With ``extended`` the multiplier actually used, the starting area
        and the merit values before and after the step are appended.
        """
        columns = list(HISTORY_COLUMNS)
        if extended:
            columns += ["p_used", "area_start", "merit", "merit_end"]
        data = [row.model_dump() for row in self.rows]
        return pd.DataFrame(data, columns=columns)


class RunSummary(BaseModel):
    """Final state of one optimization run inside a comparison."""

    problem: Literal["tresca", "dirichlet", "neumann"]
    status: OptimStatus
    iterations: int
    final_energy: float
    final_area: float
    diameter: float


class ComparisonReport(BaseModel):
    """Distances between the Tresca shape and its comparison shapes."""

    beta: float
    tresca: RunSummary
    runs: dict[str, RunSummary] = Field(default_factory=dict)
    hausdorff: dict[str, float] = Field(default_factory=dict)
    mean_distance: dict[str, float] = Field(default_factory=dict)

    def relative_hausdorff(self, problem: str) -> float:
        """Hausdorff distance to ``problem`` over the Tresca shape diameter."""
        return self.hausdorff[problem] / self.tresca.diameter
