"""
Solver for the stationary quantum self-gravitation system in quasi-potential form.

The unknowns are the quasi potential u and the potential Φ::

    −(ε²/2)Δu + u = (ε²/4)|∇u|² + σΦ   in Ω,   ∂_ν u = 0 on Γ
    −ΔΦ = n = e^u / ∫e^u                in Ω,   Φ = 0 on Γ

with density n = αe^u, α = 1/∫e^u and quasi Fermi level F = log α.

The outer iteration is a damped Picard iteration on Φ. Each step solves the quasi-potential
equation for u by Newton's method, reconstructs n, and solves the Poisson problem. The Newton
solve works directly on u; the substitution w = e^{u/2} would turn the equation into the
linear-in-w Bohm form −ε²Δw + (log n − σΦ − F)w = 0, which is what
:py:func:`residual_original_system` checks.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ConvergenceError, NumericalError
from .fem import (
    Discretization,
    Grid,
    SparseMatrix,
    apply_dirichlet,
    check_field,
    discretize,
)
from .invariants import InvariantCheck, at_least, at_most, greater_than
from .mesh import DomainKind, FloatArray, Mesh, RadialGrid, build_radial_grid

CLASSICAL_THRESHOLD = 8.0 * math.pi
DEFAULT_CONTINUATION_STEPS = 10
INITIAL_RESIDUAL_FLOOR = 1e-14
MASS_TOL = 1e-12
MP_TOL = 1e-12
MIN_DAMPING = 1.0 / 64.0
MIN_RADIAL_POINTS = 64
STAGNATION_FACTOR = 100.0
RADIAL_GRADING = 3.0

logger = logging.getLogger(__name__)


class InitKind(str, Enum):
    """How the first Picard iterate is chosen."""

    ZERO = "zero"
    BUMP = "bump"


@dataclass(frozen=True)
class ModelParams:
    """
    Physical parameters.

    :param epsilon: The scaled Planck constant ε > 0.
    :param sigma: The signed mass σ; positive for self-attraction, negative for self-repulsion.
    :param domain_kind: The domain Ω.
    """

    epsilon: float
    sigma: float
    domain_kind: DomainKind = DomainKind.DISK

    def __post_init__(self) -> None:
        if not (math.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not math.isfinite(self.sigma):
            raise ConfigError(f"sigma must be finite, got {self.sigma}")

    def with_sigma(self, sigma: float) -> ModelParams:
        return dataclasses.replace(self, sigma=sigma)

    def with_epsilon(self, epsilon: float) -> ModelParams:
        return dataclasses.replace(self, epsilon=epsilon)


@dataclass(frozen=True)
class IterationConfig:
    """
    Iteration controls for the Newton and Picard loops.

    :param newton_tol: Relative residual reduction required of each Newton solve.
    :param picard_tol: Relative L² change of the Φ iterate that ends the Picard iteration.
    :param max_newton: Newton iteration cap per solve.
    :param max_picard: Picard iteration cap per continuation stage.
    :param damping: Picard relaxation ω in (0, 1].
    :param line_search_max_halvings: Step halvings tried before a Newton step is rejected.
    :param init_kind: Initial Φ: Poisson solution of the uniform density, or of a Gaussian bump.
    :param bump_center: Center of the Gaussian bump.
    :param bump_amplitude: Weight a ∈ [0, 1] of the bump in the initial density
        (1 − a)/|Ω| + a·bump.
    :param bump_width: Standard deviation of the Gaussian bump.
    :param continuation_steps: If positive, σ is ramped linearly from 0 in this many stages.
    :param linear_tol: Tolerance of every linear solve: relative residual on 2D meshes, backward
        error on radial grids and for bordered classical systems.
    :param warm_start: Start each Newton solve from the previous u instead of σΦ.
    :param adaptive_damping: Halve ω when the Picard change grows twice in a row.
    """

    newton_tol: float = 1e-10
    picard_tol: float = 1e-8
    max_newton: int = 50
    max_picard: int = 500
    damping: float = 0.5
    line_search_max_halvings: int = 30
    init_kind: InitKind = InitKind.ZERO
    bump_center: tuple[float, float] = (0.0, 0.0)
    bump_amplitude: float = 1.0
    bump_width: float = 0.1
    continuation_steps: int = 0
    linear_tol: float = 1e-10
    warm_start: bool = True
    adaptive_damping: bool = True

    def __post_init__(self) -> None:
        for name in ("newton_tol", "picard_tol", "linear_tol", "bump_width"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ConfigError(f"{name} must be positive, got {value}")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigError(f"damping must lie in (0, 1], got {self.damping}")
        if not 0.0 <= self.bump_amplitude <= 1.0:
            raise ConfigError(
                f"bump_amplitude must lie in [0, 1], got {self.bump_amplitude}"
            )
        for name in (
            "max_newton",
            "max_picard",
            "line_search_max_halvings",
            "continuation_steps",
        ):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.max_picard < 1:
            raise ConfigError("max_picard must be at least 1")

    def replace(self, **changes: Any) -> IterationConfig:
        return dataclasses.replace(self, **changes)


class Density(NamedTuple):
    n: FloatArray
    fermi_level: float
    alpha: float


class NewtonResult(NamedTuple):
    u: FloatArray
    iterations: int
    residuals: list[float]


class OriginalResiduals(NamedTuple):
    """
    Residuals of the original density / Fermi level / potential system.

    :param r_a: Bohm-potential equation in √n form, relative to ‖√n‖₂.
    :param r_b: Fermi-level equation; zero because F is constant.
    :param r_c: Poisson equation on the free rows, relative to the load.
    """

    r_a: float
    r_b: float
    r_c: float


@dataclass(frozen=True, eq=False)
class SolutionState:
    """
    A converged solution of the quasi-potential system and its iteration diagnostics.

    For radial solves, ``grid`` is a :py:class:`~bohmgrav.mesh.RadialGrid` and the fields are
    profiles over its nodes.
    """

    grid: Grid
    params: ModelParams
    u: FloatArray
    phi: FloatArray
    n: FloatArray
    fermi_level: float
    alpha: float
    picard_iterations: int
    newton_iterations_total: int
    final_picard_residual: float
    picard_tol: float
    theta_lower: float
    theta_upper: float
    mp_tolerance: float
    continuation_stages: int = 1
    picard_history: list[float] = field(default_factory=list)

    @property
    def is_radial(self) -> bool:
        return isinstance(self.grid, RadialGrid)

    def checks(self) -> list[InvariantCheck]:
        disc = discretize(self.grid)
        return [
            at_most("mass", abs(disc.integrate(self.n) - 1.0), MASS_TOL),
            greater_than("density_positive", self.theta_lower, 0.0),
            at_most(
                "fermi_log_alpha",
                abs(self.fermi_level - math.log(self.alpha)),
                MASS_TOL,
            ),
            at_least("phi_lower_bound", float(self.phi.min()), -self.mp_tolerance),
            at_most("picard_residual", self.final_picard_residual, self.picard_tol),
        ]


def density_from_u(grid: Grid, u: FloatArray) -> Density:
    """
    Reconstruct the normalized density n = αe^u, α = 1/∫e^u, and F = log α.

    The exponential is shifted by max u before integration, so large u does not overflow.

    :raises NumericalError: If ``u`` has non-finite values.
    """
    check_field(grid, u, "u")
    return _density(discretize(grid), u)


def solve_quasi_potential(
    grid: Grid,
    phi: FloatArray,
    params: ModelParams,
    config: IterationConfig | None = None,
    u_init: FloatArray | None = None,
) -> NewtonResult:
    """
    Solve −(ε²/2)Δu + u = (ε²/4)|∇u|² + σΦ with ∂_ν u = 0 by damped Newton.

    The discrete residual is R(u) = (ε²/2)Ku + Mu − (ε²/4)g(u) − σMΦ with the lumped mass M and
    the lumped gradient load g. The Jacobian keeps the linearized gradient term, so it is
    nonsymmetric; each step is solved by sparse LU and shortened by halving until ‖R‖₂ decreases.

    :param phi: The potential Φ (the frozen Picard iterate).
    :param u_init: Initial guess; zero if omitted.
    :returns: The solution, the number of Newton steps and the residual history.
    :raises ConvergenceError: If ``max_newton`` steps do not reach the tolerance, or a step cannot
        reduce the residual.
    :raises NumericalError: On non-finite values.
    """
    config = config or IterationConfig()
    check_field(grid, phi, "phi")
    if u_init is None:
        u_init = np.zeros(grid.num_nodes)
    check_field(grid, u_init, "u_init")
    problem = _QuasiPotentialProblem(discretize(grid), params.epsilon)
    return problem.solve(phi, params.sigma, u_init, config)


def picard_fixed_point(
    grid: Grid,
    params: ModelParams,
    config: IterationConfig | None = None,
    *,
    initial: SolutionState | None = None,
) -> SolutionState:
    """
    Solve the coupled system by damped Picard iteration on Φ.

    Each iteration solves the quasi-potential equation for the current Φ iterate w, forms n,
    solves −ΔΦ̃ = n with Φ̃ = 0 on Γ, and sets w ← (1 − ω)w + ωΦ̃. The iteration stops when the
    relative L² change of w is at most ``picard_tol`` (absolute change when ‖w‖ < 10⁻¹⁴).

    :param grid: A 2D mesh or a radial grid.
    :param initial: A previous solution to start from (its u and Φ); overrides ``init_kind``.
    :raises ConvergenceError: If a continuation stage exceeds ``max_picard`` iterations, or an
        inner Newton solve fails.
    """
    config = config or IterationConfig()
    disc = discretize(grid)
    problem = _QuasiPotentialProblem(disc, params.epsilon)
    poisson = _PoissonSolver(disc, config.linear_tol)

    if initial is not None:
        w = initial.phi.copy()
        u: FloatArray | None = initial.u.copy()
    else:
        w = poisson.solve(_initial_density(disc, config))
        u = None

    if config.continuation_steps > 0:
        steps = config.continuation_steps
        schedule = [params.sigma * (j / steps) for j in range(1, steps + 1)]
    else:
        schedule = [params.sigma]

    picard_total = 0
    newton_total = 0
    state: SolutionState | None = None
    for stage, sigma in enumerate(schedule, start=1):
        if len(schedule) > 1:
            logger.info("continuation stage %d/%d: sigma=%.6g", stage, len(schedule), sigma)
        state = _picard_stage(
            disc, problem, poisson, params.with_sigma(sigma), config, w, u
        )
        picard_total += state.picard_iterations
        newton_total += state.newton_iterations_total
        w, u = state.phi, state.u

    assert state is not None
    state = dataclasses.replace(
        state,
        params=params,
        picard_iterations=picard_total,
        newton_iterations_total=newton_total,
        continuation_stages=len(schedule),
    )
    logger.info(
        "picard converged: F=%.10g after %d iterations (%d newton steps)",
        state.fermi_level,
        picard_total,
        newton_total,
    )
    return state


def radial_solve(
    params: ModelParams,
    r_points: int,
    config: IterationConfig | None = None,
    *,
    grading: float | None = None,
) -> SolutionState:
    """
    Solve the radially symmetric problem on the unit disk.

    The radial forms −(ε²/2)(1/r)(ru′)′ + u = (ε²/4)(u′)² + σΦ with u′(0) = u′(1) = 0 and
    −(1/r)(rΦ′)′ = n with Φ′(0) = 0, Φ(1) = 0 are discretized with node-centred control volumes
    and 2πr weights, and solved with the same Picard/Newton iteration as the 2D problem.

    :param r_points: Number of radial nodes, at least 64.
    :param grading: Clustering toward r = 0 (see :py:func:`~bohmgrav.mesh.build_radial_grid`).
        Defaults to uniform for ε > 10⁻², and to ``RADIAL_GRADING`` otherwise.
    :raises ConfigError: If the domain is not the disk or there are too few points.
    """
    if params.domain_kind is not DomainKind.DISK:
        raise ConfigError("radial mode requires the disk domain")
    if r_points < MIN_RADIAL_POINTS:
        raise ConfigError(
            f"radial mode needs at least {MIN_RADIAL_POINTS} points, got {r_points}"
        )
    if grading is None:
        grading = default_radial_grading(params.epsilon)
    grid = build_radial_grid(r_points, grading)
    return picard_fixed_point(grid, params, config)


def residual_original_system(
    state: SolutionState,
    params: ModelParams | None = None,
    grid: Grid | None = None,
) -> OriginalResiduals:
    """
    Evaluate the residuals of the original (n, F, Φ) system at a converged state.

    With s = √n nodally: r_a = ‖ε²Ks + M[(log n − σΦ − F)s]‖₂/‖s‖₂; r_b = 0 since F is constant;
    r_c = ‖KΦ − Mn‖₂ over the non-Dirichlet rows, relative to ‖Mn‖₂.
    """
    params = params or state.params
    disc = discretize(grid if grid is not None else state.grid)
    s = np.sqrt(state.n)
    log_n = np.log(np.maximum(state.n, np.finfo(np.float64).tiny))
    bohm = params.epsilon**2 * (disc.stiffness @ s) + disc.weights * (
        (log_n - params.sigma * state.phi - state.fermi_level) * s
    )
    r_a = float(np.linalg.norm(bohm) / np.linalg.norm(s))

    load = disc.weights * state.n
    poisson = disc.stiffness @ state.phi - load
    poisson[disc.dirichlet_nodes] = 0.0
    r_c = float(np.linalg.norm(poisson) / np.linalg.norm(load))
    return OriginalResiduals(r_a=r_a, r_b=0.0, r_c=r_c)


def default_continuation_steps(sigma: float) -> int:
    """Continuation stages used when none are configured: none up to 8π, ten beyond."""
    return DEFAULT_CONTINUATION_STEPS if sigma > CLASSICAL_THRESHOLD else 0


def default_radial_grading(epsilon: float) -> float:
    """Radial grading used when none is configured: uniform for ε > 10⁻², clustered otherwise."""
    return 0.0 if epsilon > 1e-2 else RADIAL_GRADING


def maximum_principle_tolerance(grid: Grid, n: FloatArray) -> float:
    """
    How far below zero a discrete potential may dip.

    Nonobtuse meshes (and radial grids) satisfy the discrete maximum principle, so only rounding
    is allowed. Otherwise the bound is relaxed to C·h² with C = max n.
    """
    if isinstance(grid, RadialGrid) or grid.is_nonobtuse():
        return MP_TOL
    h = grid.mesh_size()
    return max(MP_TOL, float(np.max(n)) * h * h)


class _QuasiPotentialProblem:
    def __init__(self, disc: Discretization, epsilon: float) -> None:
        self.disc = disc
        self.diffusion = 0.5 * epsilon**2
        self.growth = 0.25 * epsilon**2
        self.linear: SparseMatrix = sp.csr_matrix(
            self.diffusion * disc.stiffness + sp.diags(disc.weights)
        )
        self.abs_linear: SparseMatrix = abs(self.linear)

    def residual(self, u: FloatArray, source: FloatArray) -> FloatArray:
        return np.asarray(
            self.linear @ u - self.growth * self.disc.gradsq_load(u) - source,
            dtype=np.float64,
        )

    def jacobian(self, u: FloatArray) -> SparseMatrix:
        return sp.csr_matrix(
            self.linear - self.diffusion * self.disc.gradient_coupling(u)
        )

    def rounding_floor(self, u: FloatArray, source: FloatArray) -> float:
        # The residual cannot be evaluated more accurately than rounding in its terms allows.
        magnitude = (
            self.abs_linear @ np.abs(u)
            + self.growth * self.disc.gradsq_load(u)
            + np.abs(source)
        )
        return 1e3 * float(np.finfo(np.float64).eps) * float(np.linalg.norm(magnitude))

    def solve(
        self,
        phi: FloatArray,
        sigma: float,
        u_init: FloatArray,
        config: IterationConfig,
    ) -> NewtonResult:
        source = sigma * self.disc.weights * phi
        u = u_init.copy()
        r = self.residual(u, source)
        r_norm = float(np.linalg.norm(r))
        if not math.isfinite(r_norm):
            raise NumericalError("quasi-potential residual is not finite")
        history = [r_norm]
        if r_norm < INITIAL_RESIDUAL_FLOOR:
            target = config.newton_tol
        else:
            target = config.newton_tol * r_norm

        iterations = 0
        while r_norm > (floor := max(target, self.rounding_floor(u, source))):
            if iterations >= config.max_newton:
                raise ConvergenceError(
                    f"newton did not converge in {config.max_newton} iterations "
                    f"(residual {r_norm:.3e})",
                    history=history,
                )
            delta = self.disc.solve(
                self.jacobian(u), -r, symmetric=False, tol=config.linear_tol
            )
            step = 1.0
            for _ in range(config.line_search_max_halvings + 1):
                trial = u + step * delta
                with np.errstate(over="ignore", invalid="ignore"):
                    trial_r = self.residual(trial, source)
                trial_norm = float(np.linalg.norm(trial_r))
                if math.isfinite(trial_norm) and trial_norm < r_norm:
                    break
                step *= 0.5
            else:
                if r_norm <= STAGNATION_FACTOR * floor:
                    # Stalled within rounding distance of the target.
                    break
                raise ConvergenceError(
                    f"newton line search failed to reduce residual {r_norm:.3e}",
                    history=history,
                )
            u, r, r_norm = trial, trial_r, trial_norm
            iterations += 1
            history.append(r_norm)
            logger.debug(
                "newton step %d: residual=%.3e step=%.3g", iterations, r_norm, step
            )

        return NewtonResult(u=u, iterations=iterations, residuals=history)


class _PoissonSolver:
    def __init__(self, disc: Discretization, tol: float) -> None:
        self.disc = disc
        self.tol = tol
        self.matrix, _ = apply_dirichlet(
            disc.stiffness, np.zeros(disc.num_nodes), disc.dirichlet_nodes, 0.0
        )

    def solve(self, n: FloatArray) -> FloatArray:
        rhs = self.disc.weights * n
        rhs[self.disc.dirichlet_nodes] = 0.0
        return self.disc.solve(self.matrix, rhs, symmetric=True, tol=self.tol)


def _density(disc: Discretization, u: FloatArray) -> Density:
    shift = float(np.max(u))
    scaled = np.exp(u - shift)
    total = disc.integrate(scaled)
    fermi = -shift - math.log(total)
    return Density(n=scaled / total, fermi_level=fermi, alpha=math.exp(fermi))


def _l2(disc: Discretization, f: FloatArray) -> float:
    return math.sqrt(disc.integrate(f * f))


def _initial_density(disc: Discretization, config: IterationConfig) -> FloatArray:
    uniform = np.full(disc.num_nodes, 1.0 / disc.measure)
    if config.init_kind is InitKind.ZERO:
        return uniform
    bump = np.exp(-_distance_sq(disc.grid, config.bump_center) / (2.0 * config.bump_width**2))
    bump /= disc.integrate(bump)
    a = config.bump_amplitude
    return (1.0 - a) * uniform + a * bump


def _distance_sq(grid: Grid, center: tuple[float, float]) -> FloatArray:
    if isinstance(grid, RadialGrid):
        if center != (0.0, 0.0):
            raise ConfigError("radial solves only support a bump centred at the origin")
        return np.asarray(grid.r**2, dtype=np.float64)
    assert isinstance(grid, Mesh)
    offset = grid.nodes - np.asarray(center, dtype=np.float64)
    return np.asarray(np.einsum("ij,ij->i", offset, offset), dtype=np.float64)


def _picard_stage(
    disc: Discretization,
    problem: _QuasiPotentialProblem,
    poisson: _PoissonSolver,
    params: ModelParams,
    config: IterationConfig,
    w: FloatArray,
    u: FloatArray | None,
) -> SolutionState:
    sigma = params.sigma
    omega = config.damping
    history: list[float] = []
    newton_total = 0
    last_reduction = 0

    for iteration in range(1, config.max_picard + 1):
        if u is None or not config.warm_start:
            u_start = sigma * w
        else:
            u_start = u
        try:
            newton = problem.solve(w, sigma, u_start, config)
        except ConvergenceError as exc:
            raise ConvergenceError(
                f"inner newton failed at picard iteration {iteration} (sigma={sigma:.6g}): {exc}",
                history=history,
            ) from exc
        u = newton.u
        newton_total += newton.iterations

        density = _density(disc, u)
        phi = poisson.solve(density.n)
        w_next = (1.0 - omega) * w + omega * phi
        size = _l2(disc, w_next)
        change = _l2(disc, w_next - w)
        if size >= INITIAL_RESIDUAL_FLOOR:
            change /= size
        history.append(change)
        logger.debug(
            "picard iteration %d: change=%.3e F=%.10g newton=%d omega=%.4g",
            iteration,
            change,
            density.fermi_level,
            newton.iterations,
            omega,
        )

        if change <= config.picard_tol:
            return SolutionState(
                grid=disc.grid,
                params=params,
                u=u,
                phi=phi,
                n=density.n,
                fermi_level=density.fermi_level,
                alpha=density.alpha,
                picard_iterations=iteration,
                newton_iterations_total=newton_total,
                final_picard_residual=change,
                picard_tol=config.picard_tol,
                theta_lower=float(density.n.min()),
                theta_upper=float(density.n.max()),
                mp_tolerance=maximum_principle_tolerance(disc.grid, density.n),
                picard_history=history,
            )

        if (
            config.adaptive_damping
            and iteration - last_reduction >= 3
            and history[-1] > history[-2] > history[-3]
            and omega > MIN_DAMPING
        ):
            omega = max(0.5 * omega, MIN_DAMPING)
            last_reduction = iteration
            logger.warning(
                "picard change grew twice in a row; damping reduced to %.4g", omega
            )
        w = w_next

    raise ConvergenceError(
        f"picard did not converge in {config.max_picard} iterations "
        f"(sigma={sigma:.6g}, change {history[-1]:.3e})",
        history=history,
    )
