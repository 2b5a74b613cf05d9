"""
Run configuration: a flat ``key = value`` text format with ``#`` comments.

Manifests written by the CLI are valid configuration files; keys under the ``result.``, ``run.``
and ``check.`` prefixes are ignored when read back.
"""

from __future__ import annotations

import dataclasses
import difflib
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from enum import Enum
from typing import Any

from .errors import ConfigError
from .fem import Grid
from .mesh import (
    MAX_DISK_LEVEL,
    DomainKind,
    build_disk_mesh,
    build_radial_grid,
    build_square_mesh,
)
from .quantum import (
    MIN_RADIAL_POINTS,
    InitKind,
    IterationConfig,
    ModelParams,
    default_continuation_steps,
    default_radial_grading,
)

RESERVED_PREFIXES = ("result.", "run.", "check.")
EXPORT_FORMATS = frozenset({"csv", "vtk"})


class SolveMode(str, Enum):
    FEM2D = "fem2d"
    RADIAL = "radial"


@dataclass(frozen=True)
class RunConfig:
    """
    Everything a CLI run needs: model parameters, iteration controls, resolution and output.

    :param continuation_steps: ``None`` selects the default for σ (none up to 8π, ten beyond).
    :param radial_grading: ``None`` selects the default for ε (uniform above 10⁻², clustered
        toward the axis otherwise).
    :param mesh_level: Disk refinement level, or log₂ of the cells per side on the square.
    """

    epsilon: float = 0.001
    sigma: float = 0.0
    domain: DomainKind = DomainKind.DISK
    mode: SolveMode = SolveMode.FEM2D
    mesh_level: int = 5
    radial_points: int = 4096
    radial_grading: float | None = None
    damping: float = 0.5
    adaptive_damping: bool = True
    newton_tol: float = 1e-10
    picard_tol: float = 1e-8
    linear_tol: float = 1e-10
    max_newton: int = 50
    max_picard: int = 500
    line_search_max_halvings: int = 30
    init: InitKind = InitKind.ZERO
    bump_center: tuple[float, float] = (0.0, 0.0)
    bump_amplitude: float = 1.0
    bump_width: float = 0.1
    continuation_steps: int | None = None
    warm_start: bool = True
    output_dir: str = "output"
    export_formats: tuple[str, ...] = ("csv",)

    def __post_init__(self) -> None:
        if self.mode is SolveMode.RADIAL and self.domain is not DomainKind.DISK:
            raise ConfigError("radial mode requires domain = disk")
        if not 0 <= self.mesh_level <= MAX_DISK_LEVEL:
            raise ConfigError(
                f"mesh_level must lie in [0, {MAX_DISK_LEVEL}], got {self.mesh_level}"
            )
        if self.radial_points < MIN_RADIAL_POINTS:
            raise ConfigError(
                f"radial_points must be at least {MIN_RADIAL_POINTS}, got {self.radial_points}"
            )
        if self.radial_grading is not None and self.radial_grading < 0.0:
            raise ConfigError(f"radial_grading must be nonnegative, got {self.radial_grading}")
        unknown = set(self.export_formats) - EXPORT_FORMATS
        if unknown:
            raise ConfigError(f"unknown export formats: {', '.join(sorted(unknown))}")
        if not self.output_dir:
            raise ConfigError("output_dir must not be empty")
        # Surface parameter errors at parse time.
        self.model_params()
        self.iteration_config()

    def model_params(self) -> ModelParams:
        return ModelParams(self.epsilon, self.sigma, self.domain)

    def iteration_config(self) -> IterationConfig:
        steps = self.continuation_steps
        if steps is None:
            steps = default_continuation_steps(self.sigma)
        return IterationConfig(
            newton_tol=self.newton_tol,
            picard_tol=self.picard_tol,
            max_newton=self.max_newton,
            max_picard=self.max_picard,
            damping=self.damping,
            line_search_max_halvings=self.line_search_max_halvings,
            init_kind=self.init,
            bump_center=self.bump_center,
            bump_amplitude=self.bump_amplitude,
            bump_width=self.bump_width,
            continuation_steps=steps,
            linear_tol=self.linear_tol,
            warm_start=self.warm_start,
            adaptive_damping=self.adaptive_damping,
        )

    def grading(self) -> float:
        """The radial grading, resolving ``None`` from ε."""
        if self.radial_grading is None:
            return default_radial_grading(self.epsilon)
        return self.radial_grading

    def build_grid(self) -> Grid:
        """The mesh (fem2d) or radial grid this configuration runs on."""
        if self.mode is SolveMode.RADIAL:
            return build_radial_grid(self.radial_points, self.grading())
        if self.domain is DomainKind.SQUARE:
            return build_square_mesh(2**self.mesh_level)
        return build_disk_mesh(self.mesh_level)

    def replace(self, **changes: Any) -> RunConfig:
        return dataclasses.replace(self, **changes)


def parse_config(text: str) -> RunConfig:
    """
    Parse configuration text. Missing keys take their defaults.

    :raises ConfigError: On a malformed line, an unknown or repeated key, or an invalid value;
        the error carries the line number, and a suggestion for misspelled keys.
    """
    values: dict[str, Any] = {}
    seen: dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=number)
        if key.startswith(RESERVED_PREFIXES):
            continue
        if key in seen:
            raise ConfigError(f"key {key!r} already set on line {seen[key]}", line=number)
        seen[key] = number
        values[key] = _parse_value(key, value, number)
    return RunConfig(**values)


def apply_overrides(config: RunConfig, overrides: Iterable[str]) -> RunConfig:
    """
    Apply ``key=value`` overrides (as given to ``--set``) on top of ``config``.

    :raises ConfigError: On a malformed override, unknown key or invalid value.
    """
    changes: dict[str, Any] = {}
    for override in overrides:
        key, sep, value = override.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"override must look like key=value, got {override!r}")
        changes[key] = _parse_value(key, value.strip(), None)
    return config.replace(**changes)


def format_config(config: RunConfig) -> str:
    """Render ``config`` in the text format; :py:func:`parse_config` reads it back unchanged."""
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if value is None:
            continue
        lines.append(f"{f.name} = {format_value(value)}")
    return "\n".join(lines) + "\n"


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    return str(value)


def _parse_value(key: str, value: str, line: int | None) -> Any:
    parser = _PARSERS.get(key)
    if parser is None:
        matches = difflib.get_close_matches(key, _PARSERS, n=1)
        raise ConfigError(
            f"unknown key {key!r}", line=line, suggestion=matches[0] if matches else None
        )
    try:
        return parser(value)
    except ValueError as exc:
        raise ConfigError(f"invalid value for {key}: {exc}", line=line) from exc


def _bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true or false, got {value!r}")


def _int(value: str) -> int:
    return int(value)


def _optional_int(value: str) -> int | None:
    return None if value.lower() in ("", "auto") else int(value)


def _optional_float(value: str) -> float | None:
    return None if value.lower() in ("", "auto") else float(value)


def _point(value: str) -> tuple[float, float]:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'x,y', got {value!r}")
    return float(parts[0]), float(parts[1])


def _formats(value: str) -> tuple[str, ...]:
    formats = tuple(p.strip().lower() for p in value.split(",") if p.strip())
    if not formats:
        raise ValueError("expected at least one format")
    return formats


def _text(value: str) -> str:
    if not value:
        raise ValueError("expected a non-empty value")
    return value


def _enum(kind: type[Enum]) -> Callable[[str], Any]:
    def parse(value: str) -> Any:
        try:
            return kind(value.lower())
        except ValueError:
            choices = ", ".join(str(m.value) for m in kind)
            raise ValueError(f"expected one of {choices}, got {value!r}") from None

    return parse


_PARSERS: Mapping[str, Callable[[str], Any]] = {
    "epsilon": float,
    "sigma": float,
    "domain": _enum(DomainKind),
    "mode": _enum(SolveMode),
    "mesh_level": _int,
    "radial_points": _int,
    "radial_grading": _optional_float,
    "damping": float,
    "adaptive_damping": _bool,
    "newton_tol": float,
    "picard_tol": float,
    "linear_tol": float,
    "max_newton": _int,
    "max_picard": _int,
    "line_search_max_halvings": _int,
    "init": _enum(InitKind),
    "bump_center": _point,
    "bump_amplitude": float,
    "bump_width": float,
    "continuation_steps": _optional_int,
    "warm_start": _bool,
    "output_dir": _text,
    "export_formats": _formats,
}
