"""
Field export (CSV, legacy ASCII VTK) and run manifests.
"""

from __future__ import annotations

import logging
import os
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Any, NamedTuple

import numpy as np

from .config import RunConfig, format_config, format_value
from .errors import ConfigError
from .fem import Grid, check_field
from .invariants import InvariantCheck
from .mesh import FloatArray, Mesh, RadialGrid

VTK_TRIANGLE = 5
FLOAT_FORMAT = "%.17g"

logger = logging.getLogger(__name__)


class ExportFormat(str, Enum):
    CSV = "csv"
    VTK = "vtk"


class FieldTable(NamedTuple):
    columns: list[str]
    values: FloatArray

    def column(self, name: str) -> FloatArray:
        return np.asarray(self.values[:, self.columns.index(name)], dtype=np.float64)


def export_field(
    grid: Grid,
    fields: Mapping[str, FloatArray],
    format: ExportFormat | str,
    path: str | os.PathLike[str],
) -> Path:
    """
    Write nodal fields to ``path``.

    CSV files have a header ``x,y,<names...>`` (``r,<names...>`` for radial grids) and one row
    per node with 17 significant digits, so values read back bit-exactly. VTK files are legacy
    ASCII unstructured grids of triangles with one ``SCALARS`` block per field; radial grids
    only export as CSV.

    :raises ConfigError: On an unknown format, a field not matching the grid, or VTK for a
        radial grid.
    :raises OSError: If the file cannot be written.
    """
    try:
        kind = ExportFormat(format)
    except ValueError:
        raise ConfigError(f"unknown export format: {format!r}") from None
    for name, values in fields.items():
        if not name or "," in name or any(c.isspace() for c in name):
            raise ConfigError(f"invalid field name: {name!r}")
        check_field(grid, values, name)

    target = Path(path)
    if kind is ExportFormat.CSV:
        _write_csv(grid, fields, target)
    elif isinstance(grid, RadialGrid):
        raise ConfigError("radial grids can only be exported as csv")
    else:
        _write_vtk(grid, fields, target)
    logger.info("exported %s to %s", ", ".join(fields), target)
    return target


def read_csv(path: str | os.PathLike[str]) -> FieldTable:
    """Read a CSV file written by :py:func:`export_field`."""
    with open(path, encoding="utf-8") as f:
        columns = f.readline().strip().split(",")
        values = np.loadtxt(f, delimiter=",", ndmin=2, dtype=np.float64)
    return FieldTable(columns, values.reshape(-1, len(columns)))


def write_table(
    path: str | os.PathLike[str],
    columns: Sequence[str],
    rows: Sequence[Sequence[float]],
) -> Path:
    """Write a numeric table (sweep results) as CSV; booleans are written as 1 and 0."""
    data = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(columns))
    target = Path(path)
    _save_csv(target, columns, data)
    return target


def _write_csv(grid: Grid, fields: Mapping[str, FloatArray], path: Path) -> None:
    if isinstance(grid, RadialGrid):
        columns = ["r", *fields]
        coordinates = grid.r[:, None]
    else:
        columns = ["x", "y", *fields]
        coordinates = grid.nodes
    _save_csv(path, columns, np.column_stack([coordinates, *fields.values()]))


def _save_csv(path: Path, columns: Sequence[str], data: FloatArray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        np.savetxt(
            f,
            data,
            fmt=FLOAT_FORMAT,
            delimiter=",",
            header=",".join(columns),
            comments="",
            newline="\n",
        )


def _write_vtk(mesh: Mesh, fields: Mapping[str, FloatArray], path: Path) -> None:
    # Legacy 3.0 layout: one SCALARS block per field, never FIELD arrays.
    points = np.column_stack([mesh.nodes, np.zeros(mesh.num_nodes)])
    cells = np.column_stack([np.full(mesh.num_triangles, 3), mesh.triangles])
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write("bohmgrav fields\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {mesh.num_nodes} double\n")
        np.savetxt(f, points, fmt=FLOAT_FORMAT)
        f.write(f"CELLS {mesh.num_triangles} {cells.size}\n")
        np.savetxt(f, cells, fmt="%d")
        f.write(f"CELL_TYPES {mesh.num_triangles}\n")
        np.savetxt(f, np.full(mesh.num_triangles, VTK_TRIANGLE), fmt="%d")
        if fields:
            f.write(f"POINT_DATA {mesh.num_nodes}\n")
        for name, values in fields.items():
            f.write(f"SCALARS {name} double 1\n")
            f.write("LOOKUP_TABLE default\n")
            np.savetxt(f, values, fmt=FLOAT_FORMAT)


@dataclass
class RunManifest:
    """
    The record of one CLI run: the resolved configuration followed by ``run.``, ``result.`` and
    ``check.`` entries. Feeding the file back as a configuration reproduces the run.
    """

    command: str
    config: RunConfig
    version: str
    results: dict[str, Any] = field(default_factory=dict)
    checks: list[InvariantCheck] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    seed: str | None = None

    def record(self, key: str, value: Any) -> None:
        self.results[key] = value

    def add_checks(self, checks: list[InvariantCheck], prefix: str = "") -> None:
        self.checks.extend(c._replace(name=prefix + c.name) for c in checks)

    @property
    def failed_checks(self) -> list[InvariantCheck]:
        return [c for c in self.checks if not c.passed]

    def render(self) -> str:
        lines = [f"# bohmgrav {self.command} manifest", format_config(self.config).rstrip()]
        lines.append(f"run.command = {self.command}")
        lines.append(f"run.version = {self.version}")
        if self.seed is not None:
            lines.append(f"run.seed = {self.seed}")
        for name, seconds in self.timings.items():
            lines.append(f"run.wall_time.{name} = {seconds:.3f}")
        for key, value in self.results.items():
            lines.append(f"result.{key} = {_manifest_value(value)}")
        for check in self.checks:
            lines.append(f"check.{check.name} = {check.describe()}")
        return "\n".join(lines) + "\n"

    def write(self, path: str | os.PathLike[str]) -> Path:
        target = Path(path)
        with open(target, "w", encoding="utf-8", newline="\n") as f:
            self.write_to(f)
        return target

    def write_to(self, f: IO[str]) -> None:
        f.write(self.render())


def _manifest_value(value: Any) -> str:
    if isinstance(value, (list, np.ndarray)):
        return ",".join(_manifest_value(v) for v in value)
    if isinstance(value, np.floating):
        value = float(value)
    if value is None:
        return "none"
    return format_value(value)
