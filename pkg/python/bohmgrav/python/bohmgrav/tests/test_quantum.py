import math

import numpy as np
import pytest
from bohmgrav import (
    ConfigError,
    ConvergenceError,
    DomainKind,
    InitKind,
    IterationConfig,
    Mesh,
    ModelParams,
    NumericalError,
    SolutionState,
    build_disk_mesh,
    build_square_mesh,
    density_from_u,
    picard_fixed_point,
    residual_original_system,
    solve_quasi_potential,
)
from bohmgrav.fem import discretize
from bohmgrav.quantum import (
    MP_TOL,
    default_continuation_steps,
    maximum_principle_tolerance,
)
from bohmgrav.verify import manufactured_quasi_potential, quasi_potential_study


@pytest.fixture
def disk() -> Mesh:
    return build_disk_mesh(3)


@pytest.fixture
def attracting_state(disk: Mesh) -> SolutionState:
    return picard_fixed_point(disk, ModelParams(0.2, 2.0 * math.pi))


def _origin(mesh: Mesh) -> int:
    return int(np.argmin(np.linalg.norm(mesh.nodes, axis=1)))


@pytest.mark.parametrize("epsilon", [0.0, -1.0, math.nan, math.inf])
def test_model_params_rejects_epsilon(epsilon: float) -> None:
    with pytest.raises(ConfigError):
        ModelParams(epsilon, 1.0)


def test_model_params_rejects_infinite_sigma() -> None:
    with pytest.raises(ConfigError):
        ModelParams(0.1, math.inf)


def test_model_params_replace() -> None:
    params = ModelParams(0.1, 1.0, DomainKind.SQUARE)
    assert params.with_sigma(-3.0) == ModelParams(0.1, -3.0, DomainKind.SQUARE)
    assert params.with_epsilon(0.5).sigma == 1.0


@pytest.mark.parametrize(
    "changes",
    [
        {"damping": 0.0},
        {"damping": 1.5},
        {"newton_tol": 0.0},
        {"bump_amplitude": 2.0},
        {"bump_width": -0.1},
        {"max_newton": -1},
        {"max_picard": 0},
        {"continuation_steps": -2},
    ],
)
def test_iteration_config_rejects(changes: dict[str, float]) -> None:
    with pytest.raises(ConfigError):
        IterationConfig().replace(**changes)


def test_density_is_normalized(disk: Mesh) -> None:
    u = np.random.default_rng(0).normal(size=disk.num_nodes)
    density = density_from_u(disk, u)
    assert discretize(disk).integrate(density.n) == pytest.approx(1.0, abs=1e-14)
    assert density.fermi_level == pytest.approx(math.log(density.alpha), abs=1e-14)
    np.testing.assert_allclose(density.n, density.alpha * np.exp(u), rtol=1e-12)


def test_density_is_gauge_invariant(disk: Mesh) -> None:
    u = np.random.default_rng(1).normal(size=disk.num_nodes)
    base = density_from_u(disk, u)
    shifted = density_from_u(disk, u + 7.25)
    np.testing.assert_allclose(shifted.n, base.n, rtol=1e-12)
    assert shifted.fermi_level == pytest.approx(base.fermi_level - 7.25, abs=1e-12)


def test_density_does_not_overflow(disk: Mesh) -> None:
    u = np.full(disk.num_nodes, 1000.0)
    u[0] = 1010.0
    density = density_from_u(disk, u)
    assert np.all(np.isfinite(density.n))
    assert discretize(disk).integrate(density.n) == pytest.approx(1.0)
    assert density.fermi_level < -1000.0


def test_density_rejects_non_finite(disk: Mesh) -> None:
    u = np.zeros(disk.num_nodes)
    u[3] = np.inf
    with pytest.raises(NumericalError):
        density_from_u(disk, u)


def test_quasi_potential_with_zero_source_is_zero(disk: Mesh) -> None:
    result = solve_quasi_potential(disk, np.zeros(disk.num_nodes), ModelParams(0.1, 5.0))
    assert result.iterations == 0
    np.testing.assert_array_equal(result.u, 0.0)


def test_quasi_potential_newton_reduces_residual() -> None:
    mesh = build_square_mesh(16)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    phi = np.sin(math.pi * x) * np.sin(math.pi * y)
    result = solve_quasi_potential(mesh, phi, ModelParams(0.5, 8.0, DomainKind.SQUARE))
    assert result.iterations > 0
    assert all(b < a for a, b in zip(result.residuals, result.residuals[1:]))
    assert result.residuals[-1] <= 1e-10 * result.residuals[0] or result.residuals[-1] < 1e-11


def test_quasi_potential_newton_cap() -> None:
    mesh = build_square_mesh(8)
    phi = np.ones(mesh.num_nodes)
    params = ModelParams(0.5, 3.0, DomainKind.SQUARE)
    with pytest.raises(ConvergenceError) as exc_info:
        solve_quasi_potential(mesh, phi, params, IterationConfig(max_newton=0))
    assert exc_info.value.iterations == 1
    assert exc_info.value.final_residual > 0.0


def test_quasi_potential_constant_source() -> None:
    # A constant source has the constant solution u = σΦ.
    mesh = build_square_mesh(8)
    phi = np.full(mesh.num_nodes, 0.25)
    result = solve_quasi_potential(mesh, phi, ModelParams(0.3, 4.0, DomainKind.SQUARE))
    np.testing.assert_allclose(result.u, 1.0, rtol=1e-9)


def test_quasi_potential_converges_at_second_order() -> None:
    study = quasi_potential_study((8, 16, 32))
    assert study.errors[-1] < study.errors[0]
    for rate in study.rates:
        assert rate >= 1.7


def test_quasi_potential_newton_converges_quadratically() -> None:
    mesh = build_square_mesh(16)
    _, source = manufactured_quasi_potential(mesh)
    result = solve_quasi_potential(mesh, source, ModelParams(1.0, 1.0, DomainKind.SQUARE))
    relative = [r / result.residuals[0] for r in result.residuals]
    assert relative[-1] <= 1e-10
    # Above the rounding floor each step squares the relative residual.
    pairs = [(a, b) for a, b in zip(relative, relative[1:]) if a <= 1e-2 and b > 1e-12]
    assert pairs
    for a, b in pairs:
        assert b <= 100.0 * a * a


def test_picard_sigma_zero(disk: Mesh) -> None:
    state = picard_fixed_point(disk, ModelParams(0.01, 0.0))
    assert state.picard_iterations == 1
    assert state.fermi_level == pytest.approx(-math.log(disk.total_area()), abs=1e-12)
    np.testing.assert_array_equal(state.u, 0.0)
    np.testing.assert_allclose(state.n, 1.0 / disk.total_area(), rtol=1e-12)
    assert all(check.passed for check in state.checks())
    residuals = residual_original_system(state)
    assert residuals.r_a < 1e-12
    assert residuals.r_b == 0.0
    assert residuals.r_c < 1e-9


def test_picard_sigma_zero_matches_exact_potential() -> None:
    mesh = build_disk_mesh(4)
    state = picard_fixed_point(mesh, ModelParams(0.01, 0.0))
    assert state.phi[_origin(mesh)] == pytest.approx(1.0 / (4.0 * math.pi), abs=2e-3)
    np.testing.assert_array_equal(state.phi[mesh.boundary_nodes], 0.0)


def test_picard_attracting_state(attracting_state: SolutionState, disk: Mesh) -> None:
    state = attracting_state
    assert all(check.passed for check in state.checks()), state.checks()
    assert state.final_picard_residual <= state.picard_tol
    assert len(state.picard_history) == state.picard_iterations
    assert state.theta_lower > 0.0
    assert int(np.argmax(state.n)) == _origin(disk)
    assert state.fermi_level > -math.log(disk.total_area()) - 5.0
    assert residual_original_system(state).r_c < 1e-8


def test_picard_repelling_density_peaks_on_boundary(disk: Mesh) -> None:
    state = picard_fixed_point(disk, ModelParams(0.2, -4.0 * math.pi))
    assert all(check.passed for check in state.checks())
    assert state.n[_origin(disk)] < state.n[disk.boundary_nodes].max()


def test_picard_warm_start(attracting_state: SolutionState, disk: Mesh) -> None:
    again = picard_fixed_point(disk, attracting_state.params, initial=attracting_state)
    assert again.picard_iterations < attracting_state.picard_iterations
    assert again.fermi_level == pytest.approx(attracting_state.fermi_level, abs=1e-6)


def test_picard_continuation(disk: Mesh) -> None:
    params = ModelParams(0.2, 2.0 * math.pi)
    state = picard_fixed_point(disk, params, IterationConfig(continuation_steps=3))
    assert state.continuation_stages == 3
    assert state.params == params
    direct = picard_fixed_point(disk, params)
    assert state.fermi_level == pytest.approx(direct.fermi_level, abs=1e-6)


def test_picard_reports_non_convergence(disk: Mesh) -> None:
    with pytest.raises(ConvergenceError) as exc_info:
        picard_fixed_point(disk, ModelParams(0.2, 4.0 * math.pi), IterationConfig(max_picard=1))
    assert exc_info.value.iterations == 1


def test_picard_bump_start(disk: Mesh) -> None:
    config = IterationConfig(init_kind=InitKind.BUMP, bump_center=(0.2, 0.1), bump_width=0.3)
    state = picard_fixed_point(disk, ModelParams(0.2, 2.0 * math.pi), config)
    direct = picard_fixed_point(disk, ModelParams(0.2, 2.0 * math.pi))
    assert state.fermi_level == pytest.approx(direct.fermi_level, abs=1e-6)


def test_picard_on_square() -> None:
    mesh = build_square_mesh(8)
    state = picard_fixed_point(mesh, ModelParams(0.2, 5.0, DomainKind.SQUARE))
    assert all(check.passed for check in state.checks())
    assert state.mp_tolerance == MP_TOL


def test_default_continuation_steps() -> None:
    assert default_continuation_steps(0.0) == 0
    assert default_continuation_steps(8.0 * math.pi) == 0
    assert default_continuation_steps(10.0 * math.pi) == 10


def test_maximum_principle_tolerance(disk: Mesh) -> None:
    n = np.ones(disk.num_nodes)
    assert maximum_principle_tolerance(build_square_mesh(4), np.ones(25)) == MP_TOL
    assert maximum_principle_tolerance(disk, n) >= MP_TOL


@pytest.fixture(scope="module")
def half_threshold_state() -> SolutionState:
    return picard_fixed_point(build_disk_mesh(4), ModelParams(0.1, 4.0 * math.pi))


def test_picard_damping_does_not_change_the_state(half_threshold_state: SolutionState) -> None:
    undamped = picard_fixed_point(
        half_threshold_state.grid, half_threshold_state.params, IterationConfig(damping=1.0)
    )
    assert undamped.fermi_level == pytest.approx(half_threshold_state.fermi_level, abs=1e-6)
    np.testing.assert_allclose(undamped.phi, half_threshold_state.phi, atol=1e-6)


def test_picard_cold_newton_starts_reach_the_same_state(
    half_threshold_state: SolutionState,
) -> None:
    cold = picard_fixed_point(
        half_threshold_state.grid,
        half_threshold_state.params,
        IterationConfig(warm_start=False),
    )
    assert cold.fermi_level == pytest.approx(half_threshold_state.fermi_level, abs=1e-6)
    np.testing.assert_allclose(cold.u, half_threshold_state.u, atol=1e-5)
