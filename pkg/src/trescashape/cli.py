"""Command-line driver: ``tresca-shape <subcommand> [options]``."""

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from .config import (
    BETA_SWEEP,
    ProblemKind,
    RunConfig,
    _get_log_level,
    parse_config,
    write_config_echo,
)
from .exceptions import ConfigurationError, TrescaShapeError
from .fem import VectorField
from .mesh import (
    Mesh,
    boundary_geometry,
    diameter,
    generate_ellipse_mesh,
    load_mesh,
    save_mesh,
)
from .models import ComparisonReport, OptimHistory, RunSummary
from .optimize import compare_boundaries, optimize
from .problem import ProblemData, builtin_problem_data
from .shape_calc import (
    StateSolution,
    classify_boundary,
    fd_material_derivative,
    fd_shape_gradient,
    reference_directions,
    shape_gradient_density,
    solve_state,
)
from .writers import (
    read_boundary_csv,
    read_history_csv,
    read_report_json,
    read_vtk,
    write_boundary_csv,
    write_classification_csv,
    write_fd_csv,
    write_history_csv,
    write_report_json,
    write_vtk,
)

logger = logging.getLogger(__name__)

PROG = "tresca-shape"

Command = Callable[[RunConfig, argparse.Namespace], list[Path]]


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--beta", type=float, help="friction scale")
    common.add_argument("--mesh", type=Path, help="mesh file to start from")

    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Tresca friction solver and shape optimizer",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser(
        "solve", parents=[common], help="solve the state problem once"
    )
    solve.add_argument(
        "--method", choices=["switching", "proximal"], default="switching"
    )
    commands.add_parser(
        "optimize", parents=[common], help="run the Uzawa shape optimization"
    )
    for name, text in (
        ("check-gradient", "finite-difference check of the shape gradient"),
        ("check-material", "finite-difference check of the material derivative"),
    ):
        check = commands.add_parser(name, parents=[common], help=text)
        check.add_argument(
            "--direction",
            choices=["dilation", "shear", "bump"],
            action="append",
            help="reference direction (repeatable; default all)",
        )
        check.add_argument("--workers", type=int, default=1)
        if name == "check-gradient":
            check.add_argument(
                "--method", choices=["deformed", "pullback"], default="deformed"
            )
    commands.add_parser(
        "classify", parents=[common], help="dump the boundary labels"
    )
    commands.add_parser(
        "reproduce",
        parents=[common],
        help="run a beta preset and its comparison runs",
    )
    return parser


def _initial_mesh(config: RunConfig) -> Mesh:
    if config.mesh_file is not None:
        logger.info(f"Loading mesh from {config.mesh_file}")
        return load_mesh(config.mesh_file)
    return generate_ellipse_mesh(
        config.mesh_a, config.mesh_b, config.n_theta, config.n_rings
    )


def _problem_data(config: RunConfig) -> ProblemData:
    return builtin_problem_data(config.beta, config.bbox, config.f_scale)


def _status_field(state: StateSolution) -> NDArray[np.int64]:
    """Boundary status per vertex, -1 in the interior."""
    mesh = state.mesh
    status = np.full(mesh.n_vertices, -1, dtype=np.int64)
    if state.report is not None:
        status[mesh.boundary_nodes] = state.report.status
    else:
        ub = state.u.boundary_values
        eps = 1e-12 * (1.0 + float(np.abs(state.u.values).max()))
        status[mesh.boundary_nodes] = np.select(
            [ub > eps, ub < -eps], [1, 2], default=0
        )
    return status


def _density_field(
    state: StateSolution, data: ProblemData, config: RunConfig
) -> NDArray[np.float64]:
    mesh = state.mesh
    geometry = boundary_geometry(mesh, config.curvature_method)
    density = shape_gradient_density(
        mesh,
        state.u,
        data,
        geometry,
        state.problem,
        settings=config.solver_settings,
    )
    values = np.zeros(mesh.n_vertices)
    values[mesh.boundary_nodes] = density.values
    return values


def _directions(
    mesh: Mesh, names: Sequence[str] | None
) -> dict[str, VectorField]:
    available = reference_directions(mesh)
    return {name: available[name] for name in names or available}


def cmd_solve(config: RunConfig, args: argparse.Namespace) -> list[Path]:
    mesh = _initial_mesh(config)
    data = _problem_data(config)
    state = solve_state(
        mesh, data, config.problem, config.solver_settings, args.method
    )
    logger.info(f"Solved {config.problem} state: energy {state.energy:.10f}")
    if state.report is not None and state.report.fallback_used:
        logger.warning("Switching solver fell back to the proximal solver")
    out = config.out_dir
    return [
        write_vtk(
            mesh,
            out / "solution.vtk",
            {
                "u": state.u,
                "status": _status_field(state),
                "density": _density_field(state, data, config),
            },
        ),
        write_boundary_csv(mesh, out / "boundary.csv"),
    ]


def _optimize_run(
    mesh: Mesh,
    data: ProblemData,
    config: RunConfig,
    problem: ProblemKind,
    out: Path,
    snapshots: bool,
) -> tuple[Mesh, OptimHistory, list[Path]]:
    written: list[Path] = []

    def snapshot(
        k: int, current: Mesh, state: StateSolution, V: VectorField
    ) -> None:
        fields = {"u": state.u, "status": _status_field(state), "V": V}
        written.append(
            write_vtk(current, out / f"{problem}_{k:05d}.vtk", fields)
        )
        written.append(
            write_boundary_csv(current, out / f"boundary_{problem}_{k:05d}.csv")
        )

    optim = config.optim_config().model_copy(update={"problem": problem})
    final, history = optimize(
        mesh,
        optim,
        data,
        config.solver_settings,
        config.curvature_method,
        snapshot if snapshots else None,
        config.snapshot_every,
    )
    written.append(write_history_csv(history, out / f"history_{problem}.csv"))
    written.append(write_boundary_csv(final, out / f"boundary_{problem}.csv"))
    mesh_path = out / f"{problem}_final.mesh"
    save_mesh(final, mesh_path)
    written.append(mesh_path)
    return final, history, written


def cmd_optimize(config: RunConfig, args: argparse.Namespace) -> list[Path]:
    _, history, written = _optimize_run(
        _initial_mesh(config),
        _problem_data(config),
        config,
        config.problem,
        config.out_dir,
        snapshots=True,
    )
    if history.status in ("inversion", "left_bbox"):
        logger.warning(f"Optimization stopped early: {history.status}")
    return written


def cmd_check_gradient(
    config: RunConfig, args: argparse.Namespace
) -> list[Path]:
    mesh = _initial_mesh(config)
    data = _problem_data(config)
    frames = []
    for name, V in _directions(mesh, args.direction).items():
        frame = fd_shape_gradient(
            mesh,
            data,
            V,
            config.fd_t_list,
            config.problem,
            args.method,
            args.workers,
            config.solver_settings,
        )
        frame.insert(0, "direction", name)
        frames.append(frame)
        logger.info(
            f"{name}: formula {frame['formula'].iloc[0]:.10g}, "
            f"smallest gap {frame['gap'].min():.3e}"
        )
    table = pd.concat(frames, ignore_index=True)
    return [write_fd_csv(table, config.out_dir / "fd_gradient.csv")]


def cmd_check_material(
    config: RunConfig, args: argparse.Namespace
) -> list[Path]:
    mesh = _initial_mesh(config)
    data = _problem_data(config)
    frames = []
    for name, V in _directions(mesh, args.direction).items():
        frame = fd_material_derivative(
            mesh,
            data,
            V,
            config.fd_t_list,
            args.workers,
            config.solver_settings,
        )
        frame.insert(0, "direction", name)
        frames.append(frame)
    table = pd.concat(frames, ignore_index=True)
    return [write_fd_csv(table, config.out_dir / "fd_material.csv")]


def cmd_classify(config: RunConfig, args: argparse.Namespace) -> list[Path]:
    mesh = _initial_mesh(config)
    data = _problem_data(config)
    settings = config.solver_settings
    state = solve_state(mesh, data, "tresca", settings)
    g = data.g_at(mesh.vertices[mesh.boundary_nodes])
    classification = classify_boundary(
        mesh, state.u, state.flux, g, settings.eps_u, settings.eps_g
    )
    logger.info(f"Boundary labels: {classification.counts()}")
    return [
        write_classification_csv(
            mesh,
            classification,
            state.u,
            state.flux,
            g,
            config.out_dir / "classification.csv",
        )
    ]


def _summary(
    problem: ProblemKind, mesh: Mesh, history: OptimHistory
) -> RunSummary:
    last = history.rows[-1] if history.rows else None
    return RunSummary(
        problem=problem,
        status=history.status,
        iterations=len(history),
        final_energy=last.J if last else float("nan"),
        final_area=last.area if last else float("nan"),
        diameter=diameter(mesh),
    )


def cmd_reproduce(config: RunConfig, args: argparse.Namespace) -> list[Path]:
    if config.beta not in BETA_SWEEP:
        raise ConfigurationError(
            f"No preset for beta={config.beta:g}; choose one of {list(BETA_SWEEP)}",
            key="beta",
        )
    mesh = _initial_mesh(config)
    data = _problem_data(config)
    problems: tuple[ProblemKind, ...] = ("tresca", *config.comparisons)
    logger.info(f"Reproducing beta={config.beta:g}: runs {list(problems)}")

    results: dict[str, tuple[Mesh, OptimHistory]] = {}
    written: list[Path] = []
    with ThreadPoolExecutor(max_workers=len(problems)) as executor:
        futures = {
            executor.submit(
                _optimize_run,
                mesh,
                data,
                config,
                problem,
                config.out_dir,
                False,
            ): problem
            for problem in problems
        }
        for future in as_completed(futures):
            final, history, paths = future.result()
            results[futures[future]] = (final, history)
            written.extend(paths)

    tresca_mesh, tresca_history = results["tresca"]
    report = ComparisonReport(
        beta=config.beta,
        tresca=_summary("tresca", tresca_mesh, tresca_history),
    )
    for problem in config.comparisons:
        other_mesh, other_history = results[problem]
        hausdorff, mean = compare_boundaries(tresca_mesh, other_mesh)
        report.runs[problem] = _summary(problem, other_mesh, other_history)
        report.hausdorff[problem] = hausdorff
        report.mean_distance[problem] = mean
        logger.info(
            f"Tresca vs {problem}: Hausdorff {hausdorff:.4e} "
            f"(relative {report.relative_hausdorff(problem):.4e}), "
            f"mean {mean:.4e}"
        )
    written.append(write_report_json(report, config.out_dir / "report.json"))
    return sorted(written)


COMMANDS: dict[str, Command] = {
    "solve": cmd_solve,
    "optimize": cmd_optimize,
    "check-gradient": cmd_check_gradient,
    "check-material": cmd_check_material,
    "classify": cmd_classify,
    "reproduce": cmd_reproduce,
}


def validate_outputs(paths: Sequence[Path], config: RunConfig) -> None:
    """Parse every emitted file back.

    Raises
    ------
    TrescaShapeError
        If a file is missing or does not parse, or if ``config.echo`` no
        longer resolves to ``config``.
    """
    for path in paths:
        try:
            if path.name == "config.echo":
                if parse_config(path) != config:
                    raise ValueError("resolves to a different configuration")
            elif path.name.startswith("history"):
                read_history_csv(path)
            elif path.name.startswith("boundary"):
                read_boundary_csv(path)
            elif path.suffix == ".vtk":
                read_vtk(path)
            elif path.suffix == ".mesh":
                load_mesh(path)
            elif path.suffix == ".json":
                read_report_json(path)
            else:
                pd.read_csv(path)
        except (OSError, ValueError, TrescaShapeError) as e:
            raise TrescaShapeError(f"Output {path} failed validation: {e}") from e
    logger.debug(f"Validated {len(paths)} output files")


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1

    try:
        logging.basicConfig(
            level=_get_log_level(),
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        config = parse_config(
            args.config,
            {"beta": args.beta, "mesh_file": args.mesh, "out_dir": args.out},
        )
        config.out_dir.mkdir(parents=True, exist_ok=True)
        written = [write_config_echo(config, config.out_dir)]
        written += COMMANDS[args.command](config, args)
        validate_outputs(written, config)
    except (TrescaShapeError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 1
    logger.info(f"{args.command}: wrote {len(written)} files to {config.out_dir}")
    return 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
