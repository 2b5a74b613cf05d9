"""
The acceptance suite behind ``bohmgrav verify``.

Each :py:class:`AcceptanceCheck` runs a small study and returns :py:class:`InvariantCheck`
records; an acceptance check passes when all of its records pass and it raised nothing.
"""

from __future__ import annotations

import logging
import math
import tempfile
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .classical import classical_solve, liouville_exact, liouville_residual, threshold_scan
from .diagnostics import (
    compare_bump_solutions,
    epsilon_sweep,
    fisher_information,
    total_energy,
    uniqueness_threshold,
)
from .errors import BohmgravError
from .export import export_field
from .fem import (
    apply_dirichlet,
    assemble_mass,
    assemble_stiffness,
    discretize,
    solve_linear,
)
from .invariants import InvariantCheck, at_least, at_most
from .mesh import DomainKind, FloatArray, Mesh, build_disk_mesh, build_square_mesh
from .quantum import (
    IterationConfig,
    ModelParams,
    density_from_u,
    picard_fixed_point,
    radial_solve,
    residual_original_system,
    solve_quasi_potential,
)

REFERENCE_FERMI = -20.188

logger = logging.getLogger(__name__)


class Level(str, Enum):
    QUICK = "quick"
    FULL = "full"


@dataclass(frozen=True)
class AcceptanceCheck:
    """
    :param full_only: Run only at :py:attr:`Level.FULL`.
    """

    name: str
    run: Callable[[], list[InvariantCheck]]
    full_only: bool = False


class CheckOutcome(NamedTuple):
    name: str
    passed: bool
    seconds: float
    records: list[InvariantCheck]
    error: str = ""

    @property
    def failures(self) -> list[str]:
        names = [r.name for r in self.records if not r.passed]
        return names + ([self.error] if self.error else [])


class ConvergenceStudy(NamedTuple):
    sizes: list[int]
    errors: list[float]

    @property
    def rates(self) -> list[float]:
        return [math.log2(a / b) for a, b in zip(self.errors, self.errors[1:])]


def run_checks(
    level: Level | str = Level.QUICK,
    checks: Sequence[AcceptanceCheck] | None = None,
) -> list[CheckOutcome]:
    """Run the acceptance checks for ``level``; ``checks`` replaces the default suite."""
    level = Level(level)
    outcomes = []
    for check in default_checks() if checks is None else checks:
        if check.full_only and level is not Level.FULL:
            continue
        logger.info("running acceptance check %s", check.name)
        start = time.perf_counter()
        try:
            records = check.run()
            error = ""
        except BohmgravError as exc:
            records, error = [], f"{type(exc).__name__}: {exc}"
        except Exception as exc:
            logger.exception("acceptance check %s crashed", check.name)
            records, error = [], f"{type(exc).__name__}: {exc}"
        elapsed = time.perf_counter() - start
        passed = not error and all(r.passed for r in records)
        outcomes.append(CheckOutcome(check.name, passed, elapsed, records, error))
    return outcomes


def format_table(outcomes: Sequence[CheckOutcome]) -> str:
    width = max([len(o.name) for o in outcomes] + [5])
    lines = [f"{'check':<{width}}  result  seconds  failures"]
    for o in outcomes:
        status = "PASS" if o.passed else "FAIL"
        lines.append(
            f"{o.name:<{width}}  {status:<6}  {o.seconds:7.1f}  {', '.join(o.failures)}"
        )
    return "\n".join(lines)


def poisson_study(sizes: Sequence[int] = (8, 16, 32, 64)) -> ConvergenceStudy:
    """L² errors of −ΔΦ = 2π² sin πx sin πy, Φ = 0 on the unit square boundary."""
    errors = []
    for n in sizes:
        mesh = build_square_mesh(n)
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        exact = np.sin(np.pi * x) * np.sin(np.pi * y)
        load = assemble_mass(mesh, lumped=True) @ (2.0 * np.pi**2 * exact)
        matrix, rhs = apply_dirichlet(assemble_stiffness(mesh), load, mesh.boundary_nodes)
        phi = solve_linear(matrix, rhs, symmetric=True)
        errors.append(_l2_error(mesh, phi, exact))
    return ConvergenceStudy(list(sizes), errors)


def quasi_potential_study(sizes: Sequence[int] = (8, 16, 32, 64)) -> ConvergenceStudy:
    """
    L² errors of the quasi-potential equation with ε = σ = 1 and the manufactured solution
    u = cos πx cos πy on the unit square.
    """
    params = ModelParams(1.0, 1.0, DomainKind.SQUARE)
    errors = []
    for n in sizes:
        mesh = build_square_mesh(n)
        exact, source = manufactured_quasi_potential(mesh)
        result = solve_quasi_potential(mesh, source / params.sigma, params)
        errors.append(_l2_error(mesh, result.u, exact))
    return ConvergenceStudy(list(sizes), errors)


def manufactured_quasi_potential(mesh: Mesh) -> tuple[FloatArray, FloatArray]:
    """u = cos πx cos πy and σΦ = −½Δu + u − ¼|∇u|² for ε = 1, at the mesh nodes."""
    px, py = np.pi * mesh.nodes[:, 0], np.pi * mesh.nodes[:, 1]
    u = np.cos(px) * np.cos(py)
    gradsq = np.pi**2 * ((np.sin(px) * np.cos(py)) ** 2 + (np.cos(px) * np.sin(py)) ** 2)
    return u, np.pi**2 * u + u - 0.25 * gradsq


def default_checks() -> list[AcceptanceCheck]:
    return [
        AcceptanceCheck("sigma_zero", _check_sigma_zero),
        AcceptanceCheck("manufactured_convergence", _check_manufactured),
        AcceptanceCheck("classical_oracle", _check_classical_oracle),
        AcceptanceCheck("classical_threshold", _check_classical_threshold),
        AcceptanceCheck("radial_reproduction", _check_radial_reproduction, full_only=True),
        AcceptanceCheck("existence_beyond_threshold", _check_beyond_threshold),
        AcceptanceCheck("semiclassical_limit", _check_semiclassical_limit),
        AcceptanceCheck("nonuniqueness", _check_nonuniqueness, full_only=True),
        AcceptanceCheck("threshold_constants", _check_threshold_constants),
        AcceptanceCheck("invariant_suite", _check_invariant_suite),
    ]


def _l2_error(mesh: Mesh, approx: FloatArray, exact: FloatArray) -> float:
    diff = approx - exact
    return math.sqrt(discretize(mesh).integrate(diff * diff))


def _origin_node(mesh: Mesh) -> int:
    return int(np.argmin(np.einsum("ij,ij->i", mesh.nodes, mesh.nodes)))


def _check_sigma_zero() -> list[InvariantCheck]:
    mesh = build_disk_mesh(5)
    state = picard_fixed_point(mesh, ModelParams(0.001, 0.0))
    area = mesh.total_area()
    return [
        at_most("fermi", abs(state.fermi_level + math.log(area)), 1e-12),
        at_most("area", abs(area - math.pi), 1e-3),
        at_most(
            "phi_origin",
            abs(state.phi[_origin_node(mesh)] - 1.0 / (4.0 * math.pi)),
            1e-3,
        ),
    ]


def _check_manufactured() -> list[InvariantCheck]:
    records = []
    for label, study, low in (
        ("poisson", poisson_study(), 1.8),
        ("quasi_potential", quasi_potential_study(), 1.7),
    ):
        for i, rate in enumerate(study.rates):
            records.append(at_least(f"{label}_rate_{i}_low", rate, low))
            records.append(at_most(f"{label}_rate_{i}_high", rate, 2.2))
    return records


def _check_classical_oracle() -> list[InvariantCheck]:
    mesh = build_disk_mesh(5)
    sigma = 4.0 * math.pi
    state = classical_solve(mesh, sigma)
    exact = liouville_exact(sigma, 0.0)
    records = [
        at_least("converged", float(state.converged), 1.0),
        at_most(
            "phi_origin",
            abs(state.phi0[_origin_node(mesh)] - exact.phi) / exact.phi,
            0.01,
        ),
        at_most("fermi", abs(state.fermi_star - exact.fermi), 0.02),
    ]
    for multiple in (2.0, 4.0, 6.0):
        records.append(
            at_most(
                f"liouville_residual_{multiple:g}pi",
                liouville_residual(multiple * math.pi),
                1e-6,
            )
        )
    return records


def _check_classical_threshold() -> list[InvariantCheck]:
    values = [m * math.pi for m in (2.0, 4.0, 6.0, 7.5, 9.0)]
    entries = threshold_scan(build_disk_mesh(5), values)
    records = [
        at_least(f"converged_{e.sigma / math.pi:g}pi", float(e.converged), 1.0)
        for e in entries[:-1]
    ]
    records.append(at_most("diverged_9pi", float(entries[-1].converged), 0.0))
    return records


def _check_radial_reproduction() -> list[InvariantCheck]:
    state = radial_solve(
        ModelParams(1e-3, 10.0 * math.pi),
        100_000,
        IterationConfig(continuation_steps=10),
        grading=3.0,
    )
    return [
        at_most("fermi", abs(state.fermi_level - REFERENCE_FERMI), 1.0),
        *state.checks(),
    ]


def _check_beyond_threshold() -> list[InvariantCheck]:
    mesh = build_disk_mesh(5)
    sigma = 10.0 * math.pi
    state = picard_fixed_point(
        mesh, ModelParams(0.05, sigma), IterationConfig(continuation_steps=10)
    )
    residuals = residual_original_system(state)
    classical = classical_solve(mesh, sigma)
    return [
        *state.checks(),
        at_most("mass_1e-10", abs(discretize(mesh).integrate(state.n) - 1.0), 1e-10),
        at_most("r_a", residuals.r_a, 1e-4),
        at_most("r_c", residuals.r_c, 1e-8),
        at_most("classical_fails", float(classical.converged), 0.0),
    ]


def _check_semiclassical_limit() -> list[InvariantCheck]:
    record = epsilon_sweep(build_disk_mesh(5), 4.0 * math.pi, [0.2, 0.1, 0.05, 0.025])
    records = [
        at_least(f"converged_{e.epsilon:g}", float(e.converged), 1.0) for e in record.entries
    ]
    records.extend(
        at_most(f"gap_ratio_{i}", ratio, 1.0 - 1e-12)
        for i, ratio in enumerate(record.gap_ratios())
    )
    last = record.entries[-1]
    records.append(at_most("fermi_limit", abs(last.fermi_level + math.log(2.0 * math.pi)), 0.05))
    records.extend(c for c in record.checks() if c.name.startswith("fisher"))
    return records


def _check_nonuniqueness() -> list[InvariantCheck]:
    centers = ((0.3, 0.0), (-0.3, 0.0))
    comparison = compare_bump_solutions(
        build_disk_mesh(5),
        ModelParams(0.05, 10.0 * math.pi),
        IterationConfig(continuation_steps=0),
        centers,
    )
    records = [
        at_most("fermi_gap", comparison.fermi_gap, 1e-3),
        at_least("density_l1_gap", comparison.density_l1_gap, 0.5),
    ]
    for i, (peak, center) in enumerate(zip(comparison.peaks, centers), start=1):
        records.append(at_most(f"peak_{i}", math.dist(peak, center), 0.15))
    return records


def _check_threshold_constants() -> list[InvariantCheck]:
    mu_3 = 2.0 * (4.0 * math.pi) ** (2.0 / 3.0) * 3.0 ** (1.0 / 3.0)
    return [
        at_most("mu_2", abs(uniqueness_threshold(2, 0.0).mu_d - 8.0 * math.pi), 1e-12),
        at_most("mu_3", abs(uniqueness_threshold(3, 0.0).mu_d - mu_3), 1e-3),
        at_most(
            "sigma_max",
            abs(uniqueness_threshold(2, 0.1).sigma_max - 8.0 * math.pi * math.sqrt(1.02)),
            1e-3,
        ),
    ]


def _check_invariant_suite() -> list[InvariantCheck]:
    mesh = build_disk_mesh(3)
    rng = np.random.default_rng(0)
    stiffness = assemble_stiffness(mesh)
    u = rng.normal(size=mesh.num_nodes)
    n = rng.uniform(0.1, 2.0, size=mesh.num_nodes)
    phi = rng.normal(size=mesh.num_nodes)
    params = ModelParams(0.3, 5.0)
    energy = total_energy(mesh, n, phi, params)
    shifted = density_from_u(mesh, u + 7.25).n
    records = [
        at_most(
            "stiffness_row_sums",
            float(np.max(np.abs(stiffness @ np.ones(mesh.num_nodes)))),
            1e-12,
        ),
        at_most(
            "mass_trace",
            abs(assemble_mass(mesh, lumped=True).diagonal().sum() - mesh.total_area()),
            1e-12,
        ),
        at_most(
            "gauge_invariance",
            float(np.max(np.abs(density_from_u(mesh, u).n - shifted))),
            1e-12,
        ),
        at_most(
            "energy_identity",
            abs(energy.total_energy - (params.epsilon**2 * energy.fisher + energy.free_energy)),
            1e-12,
        ),
        at_least("fisher_nonnegative", fisher_information(mesh, n), 0.0),
    ]
    with tempfile.TemporaryDirectory() as tmp:
        paths = [Path(tmp) / f"run{i}.csv" for i in range(2)]
        for path in paths:
            export_field(mesh, {"u": u, "n": n}, "csv", path)
        identical = paths[0].read_bytes() == paths[1].read_bytes()
    records.append(at_least("export_determinism", float(identical), 1.0))
    return records
