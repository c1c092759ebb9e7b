"""Configuration management for tresca-shape runs."""

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ValidationError, field_validator

from .exceptions import ConfigurationError

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

BETA_SWEEP = (0.49, 0.46, 0.43, 0.37, 0.31, 0.28, 0.1, 0.01)

GradientForm = Literal["volume", "boundary"]
ProblemKind = Literal["tresca", "dirichlet", "neumann"]
CurvatureMethod = Literal["osculating", "extension"]


def _get_log_level() -> str:
    """Get the validated TRESCA_SHAPE_LOG_LEVEL value (defaults to "INFO")."""
    level = os.getenv("TRESCA_SHAPE_LOG_LEVEL", "INFO").upper()
    if level not in LOG_LEVELS:
        raise ValueError(
            f"Invalid TRESCA_SHAPE_LOG_LEVEL value: {level}. Must be one of {list(LOG_LEVELS)}."
        )
    return level


@dataclass(frozen=True)
class SolverSettings:
    """Numerical tolerances shared by the linear and VI solvers.

    ``eps_u`` and ``eps_g`` are the boundary classification thresholds; when
    left as None they are derived from the solution (1e-6 of max|u| and of
    max g).
    """

    vi_tol: float = 1e-10
    vi_maxit: int = 200
    cg_tol: float = 1e-12
    cg_maxit: int = 20000
    eps_u: float | None = None
    eps_g: float | None = None


def comparison_problems(beta: float) -> tuple[ProblemKind, ...]:
    """Problems whose optimal shapes a Tresca run at ``beta`` is compared to.

    Dirichlet at and above 0.49, Neumann at and below 0.28, both in between.
    """
    if beta >= 0.49:
        return ("dirichlet",)
    if beta <= 0.28:
        return ("neumann",)
    return ("dirichlet", "neumann")


# Plain Uzawa steps per regime, applied when a config sets a sweep beta.
_DIRICHLET_PRESET = {"tau": 0.05, "mu": 1.0}
_MIXED_PRESET = {"tau": 0.03, "mu": 0.5}
_NEUMANN_PRESET = {"tau": 0.02, "mu": 0.5}


def _regime_preset(beta: float) -> dict[str, Any]:
    regimes = comparison_problems(beta)
    if regimes == ("dirichlet",):
        preset = _DIRICHLET_PRESET
    elif regimes == ("neumann",):
        preset = _NEUMANN_PRESET
    else:
        preset = _MIXED_PRESET
    return {**preset, "penalty": 0.0, "gradient_form": "boundary"}


BETA_PRESETS: dict[float, dict[str, Any]] = {
    beta: _regime_preset(beta) for beta in BETA_SWEEP
}


class OptimConfig(BaseModel):
    """Parameters of the Uzawa shape-optimization loop."""

    model_config = {"extra": "forbid", "frozen": True}

    tau: float = 0.05
    mu: float = 1.0
    lambda_target: float = math.pi
    p0: float = 0.0
    max_outer: int = 400
    stop_tol: float = 1e-6
    check_every: int = 20
    gradient_form: GradientForm = "boundary"
    problem: ProblemKind = "tresca"
    beta: float = 0.49
    penalty: float = 0.0

    @field_validator("tau", "mu", "lambda_target", "stop_tol", "beta")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be > 0")
        return value

    @field_validator("max_outer", "penalty")
    @classmethod
    def _non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("must be >= 0")
        return value

    @field_validator("check_every")
    @classmethod
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value


class RunConfig(OptimConfig):
    """Everything a CLI run needs: optimization, mesh, solver and output."""

    mesh_a: float = 1.3
    mesh_b: float = 1.0 / 1.3
    n_theta: int = 128
    n_rings: int = 32
    mesh_file: Path | None = None
    vi_tol: float = 1e-10
    vi_maxit: int = 200
    cg_tol: float = 1e-12
    cg_maxit: int = 20000
    eps_u: float | None = None
    eps_g: float | None = None
    curvature_method: CurvatureMethod = "osculating"
    bbox: tuple[float, float, float, float] = (-3.0, -3.0, 3.0, 3.0)
    fd_t_list: tuple[float, ...] = (1e-2, 1e-3, 1e-4)
    snapshot_every: int = 50
    out_dir: Path = Path("out")
    f_scale: float = 1.0

    @field_validator("bbox", "fd_t_list", mode="before")
    @classmethod
    def _split_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(
                float(item) for item in value.replace(",", " ").split()
            )
        return value

    @field_validator("mesh_file", "eps_u", "eps_g", mode="before")
    @classmethod
    def _blank_is_none(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip().lower() in ("", "none"):
            return None
        return value

    @field_validator(
        "mesh_a", "mesh_b", "vi_tol", "cg_tol", "eps_u", "eps_g"
    )
    @classmethod
    def _positive_run(cls, value: float | None) -> float | None:
        if value is not None and not value > 0:
            raise ValueError("must be > 0")
        return value

    @field_validator(
        "n_theta", "n_rings", "vi_maxit", "cg_maxit", "snapshot_every"
    )
    @classmethod
    def _positive_count(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("bbox")
    @classmethod
    def _ordered_box(
        cls, value: tuple[float, float, float, float]
    ) -> tuple[float, float, float, float]:
        x0, y0, x1, y1 = value
        if not (x0 < x1 and y0 < y1):
            raise ValueError("expected x0, y0, x1, y1 with x0 < x1, y0 < y1")
        return value

    @field_validator("fd_t_list")
    @classmethod
    def _decreasing(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value:
            raise ValueError("needs at least one step")
        if any(t <= 0 for t in value):
            raise ValueError("steps must be > 0")
        if any(b >= a for a, b in zip(value, value[1:], strict=False)):
            raise ValueError("steps must be strictly decreasing")
        return value

    @property
    def solver_settings(self) -> SolverSettings:
        """Solver tolerances as the dataclass the numerics consume."""
        return SolverSettings(
            vi_tol=self.vi_tol,
            vi_maxit=self.vi_maxit,
            cg_tol=self.cg_tol,
            cg_maxit=self.cg_maxit,
            eps_u=self.eps_u,
            eps_g=self.eps_g,
        )

    @property
    def comparisons(self) -> tuple[ProblemKind, ...]:
        return comparison_problems(self.beta)

    def optim_config(self) -> OptimConfig:
        """The optimization subset of this configuration."""
        keys = OptimConfig.model_fields.keys()
        return OptimConfig(**{key: getattr(self, key) for key in keys})


def _read_pairs(path: Path) -> dict[str, str]:
    pairs: dict[str, str] = {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(
            f"Cannot read config file {path}: {e}"
        ) from e
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(
                f"{path}:{lineno}: expected 'key = value', got {raw!r}"
            )
        key, value = (part.strip() for part in line.split("=", 1))
        if key in pairs:
            raise ConfigurationError(
                f"{path}:{lineno}: duplicate key '{key}'", key=key
            )
        pairs[key] = value
    return pairs


def parse_config(
    path: Path | str | None = None,
    overrides: dict[str, Any] | None = None,
) -> RunConfig:
    """Build a RunConfig from a ``key = value`` file and explicit overrides.

    Parameters
    ----------
    path : Path | str | None
        Config file. ``#`` starts a comment; blank lines are ignored. None
        means all defaults.
    overrides : dict[str, Any] | None
        Values that win over the file, e.g. from CLI flags. None values are
        skipped.

    Returns
    -------
    RunConfig
        Fully populated configuration. When ``beta`` is one of the sweep
        values, its preset fills every key the file did not set.

    Raises
    ------
    ConfigurationError
        On unknown keys, unparsable values or violated invariants; the
        offending key is named in the message and stored on ``key``.
    """
    values: dict[str, Any] = {}
    if path is not None:
        values.update(_read_pairs(Path(path)))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value

    known = RunConfig.model_fields.keys()
    for key in values:
        if key not in known:
            raise ConfigurationError(
                f"Unknown config key '{key}'", key=key
            )

    try:
        beta = float(values.get("beta", RunConfig.model_fields["beta"].default))
    except ValueError as e:
        raise ConfigurationError(
            f"Invalid value for 'beta': {values['beta']!r}", key="beta"
        ) from e
    for key, preset in BETA_PRESETS.get(beta, {}).items():
        values.setdefault(key, preset)

    try:
        return RunConfig(**values)
    except ValidationError as e:
        error = e.errors()[0]
        key = str(error["loc"][0]) if error["loc"] else None
        raise ConfigurationError(
            f"Invalid value for '{key}': {error['msg']}", key=key
        ) from e


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ", ".join(repr(float(item)) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(config: RunConfig) -> str:
    """Render ``config`` in the file format; parsing it back is lossless."""
    lines = ["# resolved tresca-shape configuration"]
    for key in RunConfig.model_fields:
        lines.append(f"{key} = {_format_value(getattr(config, key))}")
    return "\n".join(lines) + "\n"


def write_config_echo(config: RunConfig, out_dir: Path) -> Path:
    """Write ``config.echo`` into ``out_dir`` and return its path."""
    path = Path(out_dir) / "config.echo"
    path.write_text(format_config(config), encoding="utf-8")
    return path
