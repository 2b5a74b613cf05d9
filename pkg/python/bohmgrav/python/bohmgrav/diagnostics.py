"""
Energy functionals, uniqueness thresholds and parameter sweeps.

All nonlinear integrands use the lumped vertex quadrature of the discretization, so the
functionals are defined identically on 2D meshes and radial grids.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np

from .classical import ClassicalState, classical_solve
from .errors import BohmgravError, ConfigError, ConvergenceError, DomainError
from .fem import Grid, check_field, discretize
from .invariants import InvariantCheck, at_most
from .mesh import DomainKind, FloatArray, Mesh
from .quantum import (
    CLASSICAL_THRESHOLD,
    InitKind,
    IterationConfig,
    ModelParams,
    SolutionState,
    picard_fixed_point,
)

DENSITY_FLOOR = 1e-300
ENERGY_ORDER_TOL = 1e-6
BUMP_MAX_PICARD = 4000
DISTINCT_FERMI_GAP = 1e-3
DISTINCT_DENSITY_GAP = 0.5

logger = logging.getLogger(__name__)


class EnergyReport(NamedTuple):
    fisher: float
    free_energy: float
    total_energy: float
    moser_g: float
    mass: float


class ThresholdReport(NamedTuple):
    """
    The uniqueness threshold |σ| < μ_d·√(c₀² + 2ε²c₁²).

    ``gamma_d`` is NaN for d = 2, where μ₂ = 8π is given directly.
    """

    d: int
    mu_d: float
    gamma_d: float
    epsilon: float
    c0: float
    c1: float
    sigma_max: float


class SweepEntry(NamedTuple):
    """
    One ε of a semi-classical sweep.

    :param u_phi_gap: ‖u_ε − σΦ*‖ in L².
    :param phi_gap: |Φ_ε − Φ*| in the H¹ seminorm.
    """

    epsilon: float
    converged: bool
    fermi_level: float
    u_phi_gap: float
    phi_gap: float
    fisher: float
    free_energy: float
    total_energy: float


class SweepRecord(NamedTuple):
    """A semi-classical sweep: per-ε entries (descending ε) against the classical reference."""

    sigma: float
    fermi_star: float
    classical_fisher: float
    classical_free_energy: float
    entries: list[SweepEntry]

    def converged_entries(self) -> list[SweepEntry]:
        return [e for e in self.entries if e.converged]

    def gap_ratios(self) -> list[float]:
        """Ratios of successive ``u_phi_gap`` values over converged entries."""
        gaps = [e.u_phi_gap for e in self.converged_entries()]
        return [b / a if a > 0.0 else math.nan for a, b in zip(gaps, gaps[1:])]

    def checks(self) -> list[InvariantCheck]:
        """Energy orderings that hold between the quantum minimizers and the classical one."""
        results = []
        for entry in self.converged_entries():
            tag = f"{entry.epsilon:.6g}"
            results.append(
                at_most(
                    f"fisher_below_classical[{tag}]",
                    entry.fisher - self.classical_fisher,
                    ENERGY_ORDER_TOL,
                )
            )
            results.append(
                at_most(
                    f"free_energy_above_classical[{tag}]",
                    self.classical_free_energy - entry.free_energy,
                    ENERGY_ORDER_TOL,
                )
            )
        return results


class SigmaSweepEntry(NamedTuple):
    sigma: float
    converged: bool
    fermi_level: float
    max_phi: float
    fisher: float
    free_energy: float
    total_energy: float


def fisher_information(grid: Grid, n: FloatArray) -> float:
    """
    The Fisher information ∫|∇√n|², evaluated as sᵀKs with s = √n nodally.

    :raises DomainError: If ``n`` has a negative value.
    """
    check_field(grid, n, "n")
    if np.any(n < 0.0):
        raise DomainError("fisher information needs a nonnegative density")
    s = np.sqrt(n)
    return float(max(s @ (discretize(grid).stiffness @ s), 0.0))


def free_energy(grid: Grid, n: FloatArray, phi: FloatArray, sigma: float) -> float:
    """
    The free energy ∫n(log n − 1) − (σ/2)∫nΦ.

    Zero densities contribute nothing to the entropy (n log n = 0 at n = 0).

    :raises DomainError: If ``n`` has a negative value.
    """
    check_field(grid, n, "n")
    check_field(grid, phi, "phi")
    if np.any(n < 0.0):
        raise DomainError("free energy needs a nonnegative density")
    entropy = n * (np.log(np.maximum(n, DENSITY_FLOOR)) - 1.0)
    return discretize(grid).integrate(entropy - 0.5 * sigma * n * phi)


def total_energy(grid: Grid, n: FloatArray, phi: FloatArray, params: ModelParams) -> EnergyReport:
    """
    Evaluate E_ε = ε²·Fisher + E₀ together with the Moser functional
    G(Φ) = (σ/2)∫|∇Φ|² − log∫e^{σΦ} − 1 and the mass ∫n.
    """
    disc = discretize(grid)
    fisher = fisher_information(grid, n)
    free = free_energy(grid, n, phi, params.sigma)
    exponent = params.sigma * phi
    shift = float(np.max(exponent))
    log_partition = shift + math.log(disc.integrate(np.exp(exponent - shift)))
    dirichlet = float(phi @ (disc.stiffness @ phi))
    return EnergyReport(
        fisher=fisher,
        free_energy=free,
        total_energy=params.epsilon**2 * fisher + free,
        moser_g=0.5 * params.sigma * dirichlet - log_partition - 1.0,
        mass=disc.integrate(n),
    )


def state_energy(state: SolutionState) -> EnergyReport:
    return total_energy(state.grid, state.n, state.phi, state.params)


def uniqueness_threshold(
    d: int, epsilon: float, c0: float = 1.0, c1: float = 1.0
) -> ThresholdReport:
    """
    Evaluate σ_max = μ_d·√(c₀² + 2ε²c₁²).

    μ₂ = 8π; for d = 3, μ₃ = 2γ₃ with γ_d = ω_{d−1}^{2/d}(d − 2)d^{(d−2)/d} and ω₂ = 4π the area
    of the unit sphere.

    .. warning::
        c₀ and c₁ are existence constants without known numeric values. The defaults of 1 are
        placeholders; the result is only as meaningful as the constants supplied.

    :raises DomainError: If d ∉ {2, 3}, ε < 0 or a constant is not positive.
    """
    if d not in (2, 3):
        raise DomainError(f"dimension must be 2 or 3, got {d}")
    if not epsilon >= 0.0:
        raise DomainError(f"epsilon must be nonnegative, got {epsilon}")
    if not (c0 > 0.0 and c1 > 0.0):
        raise DomainError(f"c0 and c1 must be positive, got {c0}, {c1}")
    if d == 2:
        mu, gamma = CLASSICAL_THRESHOLD, math.nan
    else:
        sphere = 4.0 * math.pi
        gamma = sphere ** (2.0 / d) * (d - 2) * d ** ((d - 2) / d)
        mu = 2.0 * gamma
    sigma_max = mu * math.sqrt(c0 * c0 + 2.0 * epsilon * epsilon * c1 * c1)
    return ThresholdReport(d, mu, gamma, epsilon, c0, c1, sigma_max)


def epsilon_sweep(
    grid: Grid,
    sigma: float,
    epsilons: Sequence[float],
    config: IterationConfig | None = None,
    *,
    warm_start: bool = True,
    jobs: int = 1,
) -> SweepRecord:
    """
    Track the quantum solution toward the classical one as ε decreases.

    The classical problem is solved once on the same grid; each quantum solve starts from the
    previous ε's solution when ``warm_start`` is set. Failed solves are recorded as unconverged
    entries and the sweep continues. Without warm starts, up to ``jobs`` solves run concurrently.

    :param epsilons: Strictly decreasing values of ε.
    :raises DomainError: If σ ≥ 8π (no classical reference).
    :raises ConfigError: If ``epsilons`` is empty or not strictly decreasing.
    :raises ConvergenceError: If the classical reference solve does not converge.
    """
    values = [float(e) for e in epsilons]
    if not values:
        raise ConfigError("epsilon sweep needs at least one value")
    if any(b >= a for a, b in zip(values, values[1:])):
        raise ConfigError("epsilon values must be strictly decreasing")
    if sigma >= CLASSICAL_THRESHOLD:
        raise DomainError(f"no classical reference for sigma={sigma} >= 8*pi")
    if jobs < 1:
        raise ConfigError(f"jobs must be at least 1, got {jobs}")
    config = config or IterationConfig()

    reference = classical_solve(grid, sigma, config)
    if not reference.converged:
        raise ConvergenceError(
            f"classical reference did not converge: {reference.reason}",
            history=reference.history,
        )
    classical_fisher = fisher_information(grid, reference.n0)
    classical_free = free_energy(grid, reference.n0, reference.phi0, sigma)
    logger.info(
        "classical reference: F*=%.10g fisher=%.6g free energy=%.10g",
        reference.fermi_star,
        classical_fisher,
        classical_free,
    )

    def solve(epsilon: float, initial: SolutionState | None) -> SolutionState | None:
        params = ModelParams(epsilon, sigma, grid.domain_kind)
        try:
            return picard_fixed_point(grid, params, config, initial=initial)
        except BohmgravError as exc:
            logger.warning("sweep solve at epsilon=%.6g failed: %s", epsilon, exc)
            return None

    if warm_start or jobs == 1:
        states: list[SolutionState | None] = []
        previous: SolutionState | None = None
        for epsilon in values:
            state = solve(epsilon, previous if warm_start else None)
            states.append(state)
            if state is not None:
                previous = state
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            states = list(pool.map(lambda e: solve(e, None), values))

    entries = [
        _sweep_entry(epsilon, state, reference) for epsilon, state in zip(values, states)
    ]
    return SweepRecord(
        sigma=sigma,
        fermi_star=reference.fermi_star,
        classical_fisher=classical_fisher,
        classical_free_energy=classical_free,
        entries=entries,
    )


def quantum_sigma_sweep(
    grid: Grid,
    epsilon: float,
    sigma_values: Sequence[float],
    config: IterationConfig | None = None,
    *,
    warm_start: bool = True,
) -> list[SigmaSweepEntry]:
    """
    Solve the quantum system over ascending σ, continuing each solve from the previous one.

    Unlike the classical problem there is no existence threshold, so every entry is expected to
    converge; failures are recorded and the sweep continues.

    :raises ConfigError: If ``sigma_values`` is empty or not sorted ascending.
    """
    values = [float(s) for s in sigma_values]
    if not values:
        raise ConfigError("sigma sweep needs at least one value")
    if any(b < a for a, b in zip(values, values[1:])):
        raise ConfigError("sigma values must be sorted ascending")
    config = config or IterationConfig()

    entries = []
    previous: SolutionState | None = None
    for sigma in values:
        params = ModelParams(epsilon, sigma, grid.domain_kind)
        try:
            state = picard_fixed_point(
                grid, params, config, initial=previous if warm_start else None
            )
        except BohmgravError as exc:
            logger.warning("sweep solve at sigma=%.6g failed: %s", sigma, exc)
            entries.append(SigmaSweepEntry(sigma, False, *([math.nan] * 5)))
            continue
        energy = state_energy(state)
        entries.append(
            SigmaSweepEntry(
                sigma=sigma,
                converged=True,
                fermi_level=state.fermi_level,
                max_phi=float(state.phi.max()),
                fisher=energy.fisher,
                free_energy=energy.free_energy,
                total_energy=energy.total_energy,
            )
        )
        previous = state
    return entries


def _sweep_entry(
    epsilon: float, state: SolutionState | None, reference: ClassicalState
) -> SweepEntry:
    if state is None:
        return SweepEntry(epsilon, False, *([math.nan] * 6))
    disc = discretize(state.grid)
    sigma = reference.sigma
    gap = state.u - sigma * reference.phi0
    phi_gap = state.phi - reference.phi0
    energy = state_energy(state)
    return SweepEntry(
        epsilon=epsilon,
        converged=True,
        fermi_level=state.fermi_level,
        u_phi_gap=math.sqrt(disc.integrate(gap * gap)),
        phi_gap=math.sqrt(max(float(phi_gap @ (disc.stiffness @ phi_gap)), 0.0)),
        fisher=energy.fisher,
        free_energy=energy.free_energy,
        total_energy=energy.total_energy,
    )


class BumpComparison(NamedTuple):
    """
    Two quantum solves started from Gaussian bumps at different centres.

    :param peaks: Location of the density maximum of each state.
    """

    states: tuple[SolutionState, SolutionState]
    fermi_gap: float
    density_l1_gap: float
    peaks: tuple[tuple[float, float], tuple[float, float]]

    @property
    def distinct(self) -> bool:
        """Equal Fermi levels with clearly different densities."""
        return self.fermi_gap < DISTINCT_FERMI_GAP and self.density_l1_gap > DISTINCT_DENSITY_GAP


def compare_bump_solutions(
    mesh: Mesh,
    params: ModelParams,
    config: IterationConfig,
    centers: tuple[tuple[float, float], tuple[float, float]],
) -> BumpComparison:
    """
    Solve twice from bump initializations at ``centers`` and compare the states.

    Distinct states with equal Fermi levels show that the solution is not unique; below the
    uniqueness threshold both runs reach the same state. On the disk an off-centre concentration
    drifts toward the centre over many hundred iterations, so each run gets at least
    ``BUMP_MAX_PICARD`` iterations.

    :raises ConfigError: If a centre lies outside the domain.
    :raises ConvergenceError: If either solve fails.
    """
    for center in centers:
        if not _inside(mesh, center):
            raise ConfigError(f"bump center {center} lies outside the domain")
    states = tuple(
        picard_fixed_point(
            mesh,
            params,
            config.replace(
                init_kind=InitKind.BUMP,
                bump_center=center,
                max_picard=max(config.max_picard, BUMP_MAX_PICARD),
            ),
        )
        for center in centers
    )
    first, second = states
    disc = discretize(mesh)
    peaks = tuple(
        (float(mesh.nodes[i, 0]), float(mesh.nodes[i, 1]))
        for i in (int(np.argmax(s.n)) for s in states)
    )
    return BumpComparison(
        states=(first, second),
        fermi_gap=abs(first.fermi_level - second.fermi_level),
        density_l1_gap=disc.integrate(np.abs(first.n - second.n)),
        peaks=(peaks[0], peaks[1]),
    )


def _inside(mesh: Mesh, point: tuple[float, float]) -> bool:
    x, y = point
    if mesh.domain_kind is DomainKind.DISK:
        return x * x + y * y < 1.0
    return 0.0 < x < 1.0 and 0.0 < y < 1.0
