"""
The classical (ε = 0) self-gravitation system, in its Gelfand form

    −ΔΦ₀ = n₀ = e^{σΦ₀} / ∫e^{σΦ₀}   in Ω,   Φ₀ = 0 on Γ,

with F* = −log ∫e^{σΦ₀}. For σ > 0 on the unit disk, solutions exist only below σ = 8π; the
explicit radial (Liouville) solution is provided as an oracle.

Non-convergence is reported in :py:class:`ClassicalState` rather than raised, since threshold
detection relies on it.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import BohmgravError, ConfigError, DomainError, NumericalError
from .fem import Discretization, Grid, SparseMatrix, apply_dirichlet, discretize, solve_linear
from .invariants import InvariantCheck, at_most
from .mesh import FloatArray
from .quantum import CLASSICAL_THRESHOLD, IterationConfig

DIVERGENCE_BOUND = 1e3
MAX_NODE_MASS = 0.05
RAMP_STAGES = 8
SELF_CONSISTENCY_TOL = 1e-8
NORMALIZATION_TOL = 1e-10

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ClassicalState:
    """
    The result of a classical solve.

    :param converged: False when the iteration diverged or stalled; the fields then hold the last
        iterate and ``reason`` says why.
    """

    grid: Grid
    sigma: float
    phi0: FloatArray
    n0: FloatArray
    fermi_star: float
    alpha: float
    converged: bool
    iterations: int
    reason: str = ""
    history: list[float] = field(default_factory=list)

    @property
    def max_phi(self) -> float:
        return float(self.phi0.max())

    def checks(self) -> list[InvariantCheck]:
        disc = discretize(self.grid)
        load = disc.weights * self.n0
        poisson = disc.stiffness @ self.phi0 - load
        poisson[disc.dirichlet_nodes] = 0.0
        exact_n = self.alpha * np.exp(self.sigma * self.phi0)
        return [
            at_most("classical_mass", abs(disc.integrate(self.n0) - 1.0), NORMALIZATION_TOL),
            at_most(
                "classical_self_consistency",
                float(np.linalg.norm(poisson) / np.linalg.norm(load)),
                SELF_CONSISTENCY_TOL,
            ),
            at_most(
                "classical_density_relation",
                float(np.max(np.abs(self.n0 - exact_n) / np.maximum(exact_n, 1e-300))),
                NORMALIZATION_TOL,
            ),
        ]


class ScanEntry(NamedTuple):
    sigma: float
    converged: bool
    max_phi: float
    fermi: float


class LiouvilleValue(NamedTuple):
    phi: float
    fermi: float


def classical_solve(
    grid: Grid,
    sigma: float,
    config: IterationConfig | None = None,
    *,
    initial_phi: FloatArray | None = None,
) -> ClassicalState:
    """
    Solve the classical Gelfand problem by damped Newton.

    The Jacobian of Φ ↦ KΦ − M·e^{σΦ}/∫e^{σΦ} is K − σ·diag(Mn) + σ·(Mn)(Mn)ᵀ; the rank-one
    part from the normalization is kept through a bordered sparse system, so the iteration stays
    well posed at the fold of the fixed-normalization problem. A cold start that fails for σ > 0
    is retried by ramping σ in ``RAMP_STAGES`` stages.

    Divergence is declared when ‖Φ‖∞ exceeds ``DIVERGENCE_BOUND``, when more than
    ``MAX_NODE_MASS`` of the mass sits on a single node (blow-up at mesh scale), when a step
    cannot reduce the residual, or after ``max_picard`` iterations.

    :param initial_phi: Warm start; defaults to the Poisson solution of the uniform density.
    :raises NumericalError: If the initial residual is not finite.
    """
    if not math.isfinite(sigma):
        raise ConfigError(f"sigma must be finite, got {sigma}")
    config = config or IterationConfig()
    solver = _GelfandNewton(discretize(grid), config)
    cold = initial_phi is None
    phi = solver.uniform_potential() if initial_phi is None else initial_phi.copy()

    state = solver.solve(sigma, phi)
    if not state.converged and cold and sigma > 0.0:
        logger.info(
            "classical solve at sigma=%.6g failed from a cold start (%s); ramping sigma",
            sigma,
            state.reason,
        )
        for stage in range(1, RAMP_STAGES + 1):
            state = solver.solve(sigma * stage / RAMP_STAGES, phi)
            if not state.converged:
                break
            phi = state.phi0
        if state.converged:
            state = solver.solve(sigma, phi)

    if state.converged:
        logger.info(
            "classical solve converged: sigma=%.6g F*=%.10g max phi=%.6g",
            sigma,
            state.fermi_star,
            state.max_phi,
        )
    else:
        logger.warning("classical solve at sigma=%.6g did not converge: %s", sigma, state.reason)
    return state


def threshold_scan(
    grid: Grid,
    sigma_values: Sequence[float],
    config: IterationConfig | None = None,
) -> list[ScanEntry]:
    """
    Run :py:func:`classical_solve` over ascending σ, warm-starting each from the last converged
    solution, and report convergence per σ.

    :raises ConfigError: If ``sigma_values`` is not sorted ascending.
    """
    values = [float(s) for s in sigma_values]
    if any(b < a for a, b in zip(values, values[1:])):
        raise ConfigError("sigma values must be sorted ascending")

    entries: list[ScanEntry] = []
    warm: FloatArray | None = None
    for sigma in values:
        try:
            state = classical_solve(grid, sigma, config, initial_phi=warm)
        except BohmgravError as exc:
            logger.warning("classical solve at sigma=%.6g failed: %s", sigma, exc)
            entries.append(ScanEntry(sigma, False, math.nan, math.nan))
            continue
        entries.append(ScanEntry(sigma, state.converged, state.max_phi, state.fermi_star))
        if state.converged:
            warm = state.phi0
    return entries


def liouville_exact(sigma: float, r: float) -> LiouvilleValue:
    """
    The radial solution of the classical problem on the unit disk.

    With μ = σ/(8π − σ): Φ(r) = (2/σ)·log((1 + μ)/(1 + μr²)) and F* = −log(π(1 + μ)). At σ = 0
    this is Φ = (1 − r²)/(4π). Negative σ (self-repulsion) is accepted.

    :raises DomainError: If σ ≥ 8π (no classical solution) or r ∉ [0, 1].
    """
    if not sigma < CLASSICAL_THRESHOLD:
        raise DomainError(f"no classical solution for sigma={sigma} >= 8*pi")
    if not 0.0 <= r <= 1.0:
        raise DomainError(f"radius must lie in [0, 1], got {r}")
    if sigma == 0.0:
        return LiouvilleValue((1.0 - r * r) / (4.0 * math.pi), -math.log(math.pi))
    mu = sigma / (CLASSICAL_THRESHOLD - sigma)
    phi = 2.0 / sigma * (math.log1p(mu) - math.log1p(mu * r * r))
    return LiouvilleValue(phi, -math.log(math.pi) - math.log1p(mu))


def liouville_residual(sigma: float, points: int = 4001) -> float:
    """
    Substitute :py:func:`liouville_exact` into −(1/r)(rΦ′)′ = e^{σΦ}/∫e^{σΦ} with centred
    differences on a uniform grid and return the largest residual relative to max |n|.

    The normalization ∫e^{σΦ} = e^{−F*} is taken from the formula itself.
    """
    r = np.linspace(0.0, 1.0, points)
    h = r[1] - r[0]
    phi = np.array([liouville_exact(sigma, float(x)).phi for x in r])
    fermi = liouville_exact(sigma, 0.0).fermi
    inner = slice(1, points - 1)
    second = (phi[2:] - 2.0 * phi[1:-1] + phi[:-2]) / h**2
    first = (phi[2:] - phi[:-2]) / (2.0 * h)
    laplacian = second + first / r[inner]
    density = np.exp(sigma * phi[inner] + fermi)
    return float(np.max(np.abs(-laplacian - density)) / np.max(density))


class _GelfandNewton:
    def __init__(self, disc: Discretization, config: IterationConfig) -> None:
        self.disc = disc
        self.config = config
        self.free = np.ones(disc.num_nodes, dtype=bool)
        self.free[disc.dirichlet_nodes] = False

    def uniform_potential(self) -> FloatArray:
        matrix, rhs = apply_dirichlet(
            self.disc.stiffness,
            self.disc.weights / self.disc.measure,
            self.disc.dirichlet_nodes,
            0.0,
        )
        return self.disc.solve(matrix, rhs, symmetric=True, tol=self.config.linear_tol)

    def density(self, sigma: float, phi: FloatArray) -> tuple[FloatArray, float]:
        exponent = sigma * phi
        shift = float(np.max(exponent))
        scaled = np.exp(exponent - shift)
        total = self.disc.integrate(scaled)
        return scaled / total, -shift - math.log(total)

    def residual(self, sigma: float, phi: FloatArray) -> FloatArray:
        n, _ = self.density(sigma, phi)
        g = np.asarray(self.disc.stiffness @ phi - self.disc.weights * n, dtype=np.float64)
        g[~self.free] = phi[~self.free]
        return g

    def jacobian(self, sigma: float, phi: FloatArray) -> SparseMatrix:
        n, _ = self.density(sigma, phi)
        q = np.where(self.free, self.disc.weights * n, 0.0)
        local = sp.csr_matrix(self.disc.stiffness - sigma * sp.diags(q))
        local, _ = apply_dirichlet(
            local, np.zeros(self.disc.num_nodes), self.disc.dirichlet_nodes, 0.0
        )
        column = sp.csr_matrix(sigma * q[:, None])
        row = sp.csr_matrix(q[None, :])
        return sp.csr_matrix(sp.bmat([[local, column], [row, sp.csr_matrix([[-1.0]])]]))

    def solve(self, sigma: float, phi: FloatArray) -> ClassicalState:
        config = self.config
        phi = phi.copy()
        phi[~self.free] = 0.0
        g = self.residual(sigma, phi)
        g_norm = float(np.linalg.norm(g))
        if not math.isfinite(g_norm):
            raise NumericalError("classical residual is not finite")
        history: list[float] = []
        reason = f"no convergence in {config.max_picard} iterations"
        converged = False

        for iteration in range(1, config.max_picard + 1):
            try:
                bordered = solve_linear(
                    self.jacobian(sigma, phi),
                    np.append(-g, 0.0),
                    symmetric=False,
                    tol=config.linear_tol,
                    backward=True,
                )
            except NumericalError as exc:
                reason = f"singular newton system: {exc}"
                break
            delta = bordered[:-1]

            step = 1.0
            for _ in range(config.line_search_max_halvings + 1):
                trial = phi + step * delta
                with np.errstate(over="ignore", invalid="ignore"):
                    trial_g = self.residual(sigma, trial)
                trial_norm = float(np.linalg.norm(trial_g))
                if math.isfinite(trial_norm) and trial_norm < g_norm:
                    break
                step *= 0.5
            else:
                trial = phi + delta
                trial_norm = g_norm
                if not self._step_negligible(delta, phi):
                    reason = f"line search failed at residual {g_norm:.3e}"
                    break

            change = math.sqrt(self.disc.integrate((trial - phi) ** 2))
            size = math.sqrt(self.disc.integrate(trial**2))
            if size > 0.0:
                change /= size
            phi, g_norm = trial, trial_norm
            g = self.residual(sigma, phi)
            history.append(change)
            logger.debug(
                "classical newton %d: change=%.3e residual=%.3e step=%.3g",
                iteration,
                change,
                g_norm,
                step,
            )

            if float(np.max(np.abs(phi))) > DIVERGENCE_BOUND:
                reason = f"potential exceeded {DIVERGENCE_BOUND:g}"
                break
            if change <= config.picard_tol:
                converged = True
                break

        n, fermi = self.density(sigma, phi)
        if converged:
            node_mass = float(np.max(self.disc.weights * n))
            if node_mass > MAX_NODE_MASS:
                converged = False
                reason = f"density concentrated at mesh scale (node mass {node_mass:.3f})"
        return ClassicalState(
            grid=self.disc.grid,
            sigma=sigma,
            phi0=phi,
            n0=n,
            fermi_star=fermi,
            alpha=math.exp(fermi),
            converged=converged,
            iterations=len(history),
            reason="" if converged else reason,
            history=history,
        )

    def _step_negligible(self, delta: FloatArray, phi: FloatArray) -> bool:
        size = float(np.max(np.abs(phi)))
        return float(np.max(np.abs(delta))) <= self.config.picard_tol * max(size, 1.0)
