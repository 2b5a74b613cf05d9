"""
Command line interface: ``bohmgrav {solve,nonuniq,sweep,classical,verify}``.

Exit codes: 0 success, 1 failed verification or invariant check, 2 non-convergence,
3 configuration error, 4 numerical, domain or I/O failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import time
import uuid
from collections.abc import Callable, Iterator, Sequence
from pathlib import Path
from types import TracebackType
from typing import NamedTuple

from . import __version__, set_log_level
from .classical import classical_solve, liouville_exact, threshold_scan
from .config import RunConfig, SolveMode, apply_overrides, parse_config
from .diagnostics import (
    compare_bump_solutions,
    epsilon_sweep,
    quantum_sigma_sweep,
    state_energy,
)
from .errors import BohmgravError, ConfigError, ConvergenceError
from .export import RunManifest, export_field, write_table
from .fem import Grid
from .mesh import DomainKind, FloatArray, Mesh
from .quantum import (
    CLASSICAL_THRESHOLD,
    SolutionState,
    picard_fixed_point,
    radial_solve,
    residual_original_system,
)
from .verify import Level, format_table, run_checks

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_NOT_CONVERGED = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4

DEFAULT_CENTERS = ((0.3, 0.0), (-0.3, 0.0))

logger = logging.getLogger(__name__)


class RunDirectory:
    """
    A fresh ``<output_dir>/<command>-<id>`` directory holding one run's files.

    Used as a context manager, it writes the manifest even when the run raises.
    """

    def __init__(self, config: RunConfig, command: str) -> None:
        random_id = uuid.uuid4().hex[:8]
        self.path = Path(config.output_dir) / f"{command}-{random_id}"
        self.path.mkdir(parents=True, exist_ok=False)
        self.manifest = RunManifest(
            command=command,
            config=config,
            version=__version__,
            seed=os.environ.get("BOHMGRAV_SEED"),
        )
        self._finished = False

    def __enter__(self) -> RunDirectory:
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        traceback: TracebackType | None,
    ) -> None:
        if exc is not None and not self._finished:
            self.manifest.record("error", f"{type(exc).__name__}: {exc}")
            self.manifest.write(self.path / "manifest.txt")

    @contextlib.contextmanager
    def timer(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.manifest.timings[name] = time.perf_counter() - start

    def export(self, grid: Grid, fields: dict[str, FloatArray], stem: str) -> None:
        for fmt in self.manifest.config.export_formats:
            if fmt == "vtk" and not isinstance(grid, Mesh):
                logger.warning("skipping vtk export of %s: radial grids export as csv", stem)
                continue
            export_field(grid, fields, fmt, self.path / f"{stem}.{fmt}")

    def not_converged(self, exc: ConvergenceError) -> int:
        logger.error("%s did not converge: %s", self.manifest.command, exc)
        self.manifest.record("converged", False)
        self.manifest.record("picard_history", exc.history)
        return self.finish(EXIT_NOT_CONVERGED)

    def finish(self, code: int) -> int:
        self.manifest.record("exit_code", code)
        target = self.manifest.write(self.path / "manifest.txt")
        self._finished = True
        print(f"wrote {target}")
        return code


def cmd_solve(config: RunConfig) -> int:
    """Solve the quantum system; exit 1 if an invariant check fails, 2 if it does not converge."""
    with RunDirectory(config, "solve") as run:
        params = config.model_params()
        iteration = config.iteration_config()
        try:
            with run.timer("solve"):
                if config.mode is SolveMode.RADIAL:
                    state = radial_solve(
                        params, config.radial_points, iteration, grading=config.grading()
                    )
                    run.manifest.record("radial_grading", config.grading())
                else:
                    state = picard_fixed_point(config.build_grid(), params, iteration)
        except ConvergenceError as exc:
            return run.not_converged(exc)

        _record_state(run.manifest, state)
        run.export(state.grid, {"u": state.u, "phi": state.phi, "n": state.n}, "solution")
        print(f"F = {state.fermi_level:.10g} after {state.picard_iterations} picard iterations")
        return run.finish(_check_code(run.manifest))


def cmd_nonuniq(
    config: RunConfig,
    centers: tuple[tuple[float, float], tuple[float, float]] = DEFAULT_CENTERS,
) -> int:
    """
    Solve from Gaussian bumps at two centres and compare the states.

    Unless ``continuation_steps`` is configured, the solves start at the full σ: ramping σ up
    from zero would wash out the bump.
    """
    if config.mode is not SolveMode.FEM2D:
        raise ConfigError("nonuniq requires mode = fem2d")
    if config.continuation_steps is None:
        config = config.replace(continuation_steps=0)
    mesh = config.build_grid()
    assert isinstance(mesh, Mesh)
    with RunDirectory(config, "nonuniq") as run:
        try:
            with run.timer("solve"):
                comparison = compare_bump_solutions(
                    mesh, config.model_params(), config.iteration_config(), centers
                )
        except ConvergenceError as exc:
            return run.not_converged(exc)

        manifest = run.manifest
        for i, (state, center, peak) in enumerate(
            zip(comparison.states, centers, comparison.peaks), start=1
        ):
            _record_state(manifest, state, prefix=f"state{i}.")
            manifest.record(f"state{i}.center", list(center))
            manifest.record(f"state{i}.peak", list(peak))
            run.export(mesh, {"u": state.u, "phi": state.phi, "n": state.n}, f"state{i}")
        manifest.record("fermi_gap", comparison.fermi_gap)
        manifest.record("density_l1_gap", comparison.density_l1_gap)
        manifest.record("distinct", comparison.distinct)
        if not comparison.distinct:
            logger.info("both bump starts reached the same state")
        print(
            f"|F1 - F2| = {comparison.fermi_gap:.3e}, "
            f"||n1 - n2||_L1 = {comparison.density_l1_gap:.6g}, "
            f"distinct = {comparison.distinct}"
        )
        return run.finish(_check_code(manifest))


def cmd_sweep(
    config: RunConfig,
    kind: str,
    values: Sequence[float],
    *,
    solver: str = "quantum",
    jobs: int = 1,
) -> int:
    """
    Sweep ε (semi-classical limit) or σ (quantum, or classical threshold scan).

    Individual failures are recorded as unconverged rows; the exit code is 0 when at least one
    value converged and 2 otherwise.
    """
    if not values:
        raise ConfigError("sweep needs at least one value")
    if kind not in ("epsilon", "sigma"):
        raise ConfigError(f"sweep kind must be epsilon or sigma, got {kind!r}")
    if solver not in ("quantum", "classical"):
        raise ConfigError(f"solver must be quantum or classical, got {solver!r}")
    grid = config.build_grid()
    with RunDirectory(config, "sweep") as run:
        manifest = run.manifest
        manifest.record("kind", kind)
        manifest.record("solver", solver)
        manifest.record("values", list(values))
        with run.timer("sweep"):
            table = _sweep_table(config, grid, kind, solver, values, jobs, manifest)

        write_table(run.path / "sweep.csv", table.columns, table.rows)
        manifest.record("converged", table.converged)
        print(f"{sum(table.converged)}/{len(table.converged)} values converged")
        if not any(table.converged):
            return run.finish(EXIT_NOT_CONVERGED)
        return run.finish(_check_code(manifest))


def cmd_classical(config: RunConfig) -> int:
    """Solve the classical problem at the configured σ; on the disk, compare with the exact one."""
    grid = config.build_grid()
    with RunDirectory(config, "classical") as run:
        with run.timer("solve"):
            state = classical_solve(grid, config.sigma, config.iteration_config())
        manifest = run.manifest
        manifest.record("converged", state.converged)
        manifest.record("iterations", state.iterations)
        manifest.record("history", state.history)
        if not state.converged:
            manifest.record("reason", state.reason)
            logger.error("classical solve did not converge: %s", state.reason)
            return run.finish(EXIT_NOT_CONVERGED)

        manifest.record("fermi_star", state.fermi_star)
        manifest.record("alpha", state.alpha)
        manifest.record("max_phi", state.max_phi)
        if grid.domain_kind is DomainKind.DISK and config.sigma < CLASSICAL_THRESHOLD:
            exact = liouville_exact(config.sigma, 0.0)
            manifest.record("exact_phi_origin", exact.phi)
            manifest.record("exact_fermi", exact.fermi)
        manifest.add_checks(state.checks())
        run.export(grid, {"phi": state.phi0, "n": state.n0}, "classical")
        print(f"F* = {state.fermi_star:.10g}, max phi = {state.max_phi:.6g}")
        return run.finish(_check_code(manifest))


def cmd_verify(level: Level | str = Level.QUICK) -> int:
    """Run the acceptance suite and print a pass/fail table; exit 0 iff every check passes."""
    outcomes = run_checks(level)
    print(format_table(outcomes))
    return EXIT_OK if all(o.passed for o in outcomes) else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bohmgrav",
        description="Stationary quantum self-gravitation solver.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="INFO", help="Python logging level name")
    commands = parser.add_subparsers(dest="command", required=True)

    def run_command(name: str, help: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help)
        sub.add_argument("--config", type=Path, help="key = value configuration file")
        sub.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a configuration key (repeatable)",
        )
        sub.add_argument("--out", help="output directory (overrides output_dir)")
        sub.add_argument("--jobs", type=int, default=1, help="concurrent sweep solves")
        return sub

    run_command("solve", "solve the quantum system")
    nonuniq = run_command("nonuniq", "solve from two bump initializations and compare")
    nonuniq.add_argument(
        "--center",
        dest="centers",
        action="append",
        type=_point,
        metavar="X,Y",
        help="bump centre; give exactly two (default 0.3,0 and -0.3,0)",
    )
    sweep = run_command("sweep", "sweep epsilon or sigma")
    sweep.add_argument("--kind", choices=["epsilon", "sigma"], required=True)
    sweep.add_argument("--values", type=_values, required=True, help="comma separated")
    sweep.add_argument("--solver", choices=["quantum", "classical"], default="quantum")
    run_command("classical", "solve the classical problem")
    verify = commands.add_parser("verify", help="run the acceptance suite")
    verify.add_argument("--level", choices=[lv.value for lv in Level], default="quick")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        set_log_level(args.log_level)
    except ValueError as exc:
        parser.error(str(exc))

    try:
        return _dispatch(args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        logger.error("did not converge: %s", exc)
        return EXIT_NOT_CONVERGED
    except (BohmgravError, OSError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_NUMERICAL


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "verify":
        return cmd_verify(args.level)
    config = _load_config(args)
    commands: dict[str, Callable[[], int]] = {
        "solve": lambda: cmd_solve(config),
        "nonuniq": lambda: cmd_nonuniq(config, _centers(args.centers)),
        "sweep": lambda: cmd_sweep(
            config, args.kind, args.values, solver=args.solver, jobs=args.jobs
        ),
        "classical": lambda: cmd_classical(config),
    }
    return commands[args.command]()


def _load_config(args: argparse.Namespace) -> RunConfig:
    text = args.config.read_text(encoding="utf-8") if args.config else ""
    config = apply_overrides(parse_config(text), args.overrides)
    if args.out:
        config = config.replace(output_dir=args.out)
    return config


class SweepTable(NamedTuple):
    columns: list[str]
    rows: list[list[float]]
    converged: list[bool]


def _sweep_table(
    config: RunConfig,
    grid: Grid,
    kind: str,
    solver: str,
    values: Sequence[float],
    jobs: int,
    manifest: RunManifest,
) -> SweepTable:
    iteration = config.iteration_config()
    if kind == "epsilon":
        record = epsilon_sweep(
            grid, config.sigma, values, iteration, warm_start=config.warm_start, jobs=jobs
        )
        manifest.record("fermi_star", record.fermi_star)
        manifest.record("classical_fisher", record.classical_fisher)
        manifest.record("gap_ratios", record.gap_ratios())
        manifest.add_checks(record.checks())
        columns = ["epsilon", "fermi_level", "u_phi_gap", "phi_gap"]
        columns += ["fisher", "free_energy", "total_energy", "converged"]
        return SweepTable(
            columns,
            [[*e[:1], *e[2:], float(e.converged)] for e in record.entries],
            [e.converged for e in record.entries],
        )
    if solver == "classical":
        entries = threshold_scan(grid, values, iteration)
        return SweepTable(
            ["sigma", "fermi", "max_phi", "converged"],
            [[e.sigma, e.fermi, e.max_phi, float(e.converged)] for e in entries],
            [e.converged for e in entries],
        )
    sigma_entries = quantum_sigma_sweep(
        grid, config.epsilon, values, iteration, warm_start=config.warm_start
    )
    columns = ["sigma", "fermi_level", "max_phi", "fisher", "free_energy", "total_energy"]
    return SweepTable(
        columns + ["converged"],
        [[*e[:1], *e[2:], float(e.converged)] for e in sigma_entries],
        [e.converged for e in sigma_entries],
    )


def _record_state(
    manifest: RunManifest,
    state: SolutionState,
    *,
    prefix: str = "",
) -> None:
    residuals = residual_original_system(state)
    energy = state_energy(state)
    values = {
        "converged": True,
        "fermi_level": state.fermi_level,
        "alpha": state.alpha,
        "picard_iterations": state.picard_iterations,
        "newton_iterations": state.newton_iterations_total,
        "continuation_stages": state.continuation_stages,
        "final_picard_residual": state.final_picard_residual,
        "theta_lower": state.theta_lower,
        "theta_upper": state.theta_upper,
        "r_a": residuals.r_a,
        "r_b": residuals.r_b,
        "r_c": residuals.r_c,
        "fisher": energy.fisher,
        "free_energy": energy.free_energy,
        "total_energy": energy.total_energy,
        "moser_g": energy.moser_g,
        "mass": energy.mass,
        "picard_history": state.picard_history,
    }
    for key, value in values.items():
        manifest.record(prefix + key, value)
    manifest.add_checks(state.checks(), prefix=prefix)


def _check_code(manifest: RunManifest) -> int:
    failed = manifest.failed_checks
    for check in failed:
        logger.error("invariant check %s failed: %s", check.name, check.describe())
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _point(text: str) -> tuple[float, float]:
    try:
        x, y = (float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}") from None
    return x, y


def _values(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        message = f"expected comma separated numbers, got {text!r}"
        raise argparse.ArgumentTypeError(message) from None


def _centers(
    centers: list[tuple[float, float]] | None,
) -> tuple[tuple[float, float], tuple[float, float]]:
    if centers is None:
        return DEFAULT_CENTERS
    if len(centers) != 2:
        raise ConfigError(f"nonuniq needs exactly two --center values, got {len(centers)}")
    return centers[0], centers[1]
