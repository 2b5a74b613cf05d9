import math

import pytest
from bohmgrav import ConfigError, DomainKind, InitKind, Mesh, RadialGrid
from bohmgrav.config import (
    RunConfig,
    SolveMode,
    apply_overrides,
    format_config,
    parse_config,
)
from bohmgrav.quantum import RADIAL_GRADING

SAMPLE = """
# attracting case on the unit disk
epsilon = 0.05
sigma = 31.41592653589793   # 10 pi
domain = Disk
init = bump
bump_center = 0.3, 0.0
continuation_steps = auto
export_formats = csv, vtk
adaptive_damping = no
"""


def test_empty_config_has_defaults() -> None:
    assert parse_config("") == RunConfig()
    assert parse_config("# only a comment\n\n") == RunConfig()


def test_parse_sample() -> None:
    config = parse_config(SAMPLE)
    assert config.epsilon == 0.05
    assert config.sigma == pytest.approx(10.0 * math.pi)
    assert config.domain is DomainKind.DISK
    assert config.init is InitKind.BUMP
    assert config.bump_center == (0.3, 0.0)
    assert config.continuation_steps is None
    assert config.export_formats == ("csv", "vtk")
    assert config.adaptive_damping is False


def test_format_config_round_trips() -> None:
    config = parse_config(SAMPLE).replace(output_dir="runs/a", continuation_steps=4)
    assert parse_config(format_config(config)) == config
    assert parse_config(format_config(RunConfig())) == RunConfig()


def test_format_config_skips_unset_values() -> None:
    text = format_config(RunConfig())
    assert "continuation_steps" not in text
    assert "adaptive_damping = true" in text
    assert "export_formats = csv" in text


def test_reserved_prefixes_are_ignored() -> None:
    config = parse_config("sigma = 2.0\nresult.fermi_level = -3.5\nrun.command = solve\n")
    assert config.sigma == 2.0
    assert parse_config("check.mass = pass value=1.0e-16 limit=1.0e-12") == RunConfig()


def test_unknown_key_suggests_close_match() -> None:
    with pytest.raises(ConfigError) as exc_info:
        parse_config("sigma = 1.0\nepsilom = 0.1\n")
    assert exc_info.value.line == 2
    assert exc_info.value.suggestion == "epsilon"
    assert "did you mean 'epsilon'" in str(exc_info.value)


def test_duplicate_key() -> None:
    with pytest.raises(ConfigError) as exc_info:
        parse_config("sigma = 1.0\n\nsigma = 2.0\n")
    assert exc_info.value.line == 3
    assert "line 1" in str(exc_info.value)


@pytest.mark.parametrize(
    "text",
    [
        "sigma",
        "= 3",
        "sigma = abc",
        "mesh_level = 2.5",
        "domain = sphere",
        "warm_start = maybe",
        "bump_center = 1,2,3",
        "output_dir =",
        "export_formats = ,",
    ],
)
def test_invalid_lines(text: str) -> None:
    with pytest.raises(ConfigError) as exc_info:
        parse_config(text)
    assert exc_info.value.line == 1


@pytest.mark.parametrize(
    "text",
    [
        "epsilon = 0",
        "damping = 2",
        "mesh_level = 11",
        "radial_points = 10",
        "radial_grading = -1",
        "export_formats = csv, png",
        "mode = radial\ndomain = square",
    ],
)
def test_invalid_values(text: str) -> None:
    with pytest.raises(ConfigError):
        parse_config(text)


def test_apply_overrides() -> None:
    config = apply_overrides(RunConfig(), ["sigma=10", "mode = radial", "radial_points=128"])
    assert config.sigma == 10.0
    assert config.mode is SolveMode.RADIAL
    assert config.radial_points == 128
    with pytest.raises(ConfigError):
        apply_overrides(config, ["sigma"])
    with pytest.raises(ConfigError):
        apply_overrides(config, ["sigmaa=1"])


def test_iteration_config_continuation_default() -> None:
    assert RunConfig(sigma=10.0 * math.pi).iteration_config().continuation_steps == 10
    assert RunConfig(sigma=2.0 * math.pi).iteration_config().continuation_steps == 0
    explicit = RunConfig(sigma=10.0 * math.pi, continuation_steps=0)
    assert explicit.iteration_config().continuation_steps == 0


def test_iteration_config_carries_settings() -> None:
    config = parse_config(SAMPLE).iteration_config()
    assert config.init_kind is InitKind.BUMP
    assert config.bump_center == (0.3, 0.0)
    assert not config.adaptive_damping


def test_build_grid() -> None:
    square = RunConfig(domain=DomainKind.SQUARE, mesh_level=2).build_grid()
    assert isinstance(square, Mesh)
    assert square.num_nodes == 25
    disk = RunConfig(mesh_level=1).build_grid()
    assert isinstance(disk, Mesh)
    assert disk.num_triangles == 24
    radial = RunConfig(mode=SolveMode.RADIAL, radial_points=64, radial_grading=2.0).build_grid()
    assert isinstance(radial, RadialGrid)
    assert radial.num_nodes == 64
    assert radial.grading == 2.0


def test_radial_grading_follows_epsilon_unless_set() -> None:
    fine = parse_config("mode = radial\nepsilon = 0.001\nradial_points = 64\n")
    assert fine.radial_grading is None
    assert fine.grading() == RADIAL_GRADING
    grid = fine.build_grid()
    assert isinstance(grid, RadialGrid)
    assert grid.grading == RADIAL_GRADING
    assert parse_config("mode = radial\nepsilon = 0.1\n").grading() == 0.0
    assert parse_config("mode = radial\nradial_grading = 0\n").grading() == 0.0
    assert parse_config("radial_grading = auto\n").radial_grading is None
    assert parse_config(format_config(fine)) == fine
