from pathlib import Path

import numpy as np
import pytest
from bohmgrav import ConfigError, Mesh, build_disk_mesh, build_radial_grid
from bohmgrav.config import RunConfig, parse_config
from bohmgrav.export import RunManifest, export_field, read_csv, write_table
from bohmgrav.invariants import at_least, at_most


@pytest.fixture
def mesh() -> Mesh:
    return build_disk_mesh(2)


@pytest.fixture
def fields(mesh: Mesh) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(7)
    return {
        "u": rng.normal(size=mesh.num_nodes),
        "phi": rng.uniform(size=mesh.num_nodes) / 3.0,
    }


def test_csv_round_trip_is_exact(
    tmp_path: Path, mesh: Mesh, fields: dict[str, np.ndarray]
) -> None:
    path = export_field(mesh, fields, "csv", tmp_path / "fields.csv")
    table = read_csv(path)
    assert table.columns == ["x", "y", "u", "phi"]
    np.testing.assert_array_equal(table.values[:, :2], mesh.nodes)
    np.testing.assert_array_equal(table.column("u"), fields["u"])
    np.testing.assert_array_equal(table.column("phi"), fields["phi"])


def test_csv_export_is_deterministic(
    tmp_path: Path, mesh: Mesh, fields: dict[str, np.ndarray]
) -> None:
    first = export_field(mesh, fields, "csv", tmp_path / "a.csv")
    second = export_field(mesh, fields, "csv", tmp_path / "b.csv")
    assert first.read_bytes() == second.read_bytes()
    assert b"\r\n" not in first.read_bytes()


def test_radial_csv(tmp_path: Path) -> None:
    grid = build_radial_grid(70)
    path = export_field(grid, {"n": grid.r**2}, "csv", tmp_path / "radial.csv")
    table = read_csv(path)
    assert table.columns == ["r", "n"]
    np.testing.assert_array_equal(table.column("r"), grid.r)


def test_vtk_layout(tmp_path: Path, mesh: Mesh, fields: dict[str, np.ndarray]) -> None:
    path = export_field(mesh, fields, "vtk", tmp_path / "fields.vtk")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[2] == "ASCII"
    assert lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert lines[4] == f"POINTS {mesh.num_nodes} double"
    cells = 5 + mesh.num_nodes
    assert lines[cells] == f"CELLS {mesh.num_triangles} {4 * mesh.num_triangles}"
    first_cell = [int(v) for v in lines[cells + 1].split()]
    assert first_cell == [3, *mesh.triangles[0]]
    types = cells + 1 + mesh.num_triangles
    assert lines[types] == f"CELL_TYPES {mesh.num_triangles}"
    assert set(lines[types + 1 : types + 1 + mesh.num_triangles]) == {"5"}
    assert f"POINT_DATA {mesh.num_nodes}" in lines
    assert "SCALARS u double 1" in lines
    assert "SCALARS phi double 1" in lines
    scalars = lines.index("SCALARS u double 1")
    assert lines[scalars + 1] == "LOOKUP_TABLE default"
    assert float(lines[scalars + 2]) == pytest.approx(fields["u"][0])
    assert "FIELD" not in " ".join(lines)


def test_export_rejects_bad_requests(tmp_path: Path, mesh: Mesh) -> None:
    values = np.zeros(mesh.num_nodes)
    with pytest.raises(ConfigError):
        export_field(mesh, {"u": values}, "png", tmp_path / "u.png")
    with pytest.raises(ConfigError):
        export_field(mesh, {"bad name": values}, "csv", tmp_path / "u.csv")
    with pytest.raises(ConfigError):
        export_field(mesh, {"u": values[:-1]}, "csv", tmp_path / "u.csv")
    grid = build_radial_grid(64)
    with pytest.raises(ConfigError):
        export_field(grid, {"u": grid.r}, "vtk", tmp_path / "u.vtk")


def test_export_to_missing_directory(tmp_path: Path, mesh: Mesh) -> None:
    with pytest.raises(OSError):
        export_field(mesh, {"u": np.zeros(mesh.num_nodes)}, "csv", tmp_path / "no" / "u.csv")


def test_write_table(tmp_path: Path) -> None:
    path = write_table(tmp_path / "sweep.csv", ["sigma", "converged"], [[1.5, True], [2.5, False]])
    table = read_csv(path)
    assert table.columns == ["sigma", "converged"]
    np.testing.assert_array_equal(table.values, [[1.5, 1.0], [2.5, 0.0]])


def test_manifest_reads_back_as_config(tmp_path: Path) -> None:
    config = RunConfig(epsilon=0.05, sigma=3.0, output_dir=str(tmp_path))
    manifest = RunManifest(command="solve", config=config, version="1.2.3", seed="42")
    manifest.record("fermi_level", -2.5)
    manifest.record("history", [0.5, 0.25])
    manifest.record("reason", None)
    manifest.timings["solve"] = 1.25
    manifest.add_checks([at_most("mass", 1e-16, 1e-12)], prefix="state1.")
    path = manifest.write(tmp_path / "manifest.txt")
    text = path.read_text(encoding="utf-8")
    assert "run.command = solve" in text
    assert "run.version = 1.2.3" in text
    assert "run.seed = 42" in text
    assert "run.wall_time.solve = 1.250" in text
    assert "result.fermi_level = -2.5" in text
    assert "result.history = 0.5,0.25" in text
    assert "result.reason = none" in text
    assert "check.state1.mass = pass" in text
    assert parse_config(text) == config


def test_manifest_failed_checks() -> None:
    manifest = RunManifest(command="solve", config=RunConfig(), version="0")
    manifest.add_checks([at_most("mass", 1.0, 1e-12), at_least("positive", 1.0, 0.0)])
    assert [c.name for c in manifest.failed_checks] == ["mass"]
    assert "check.mass = fail" in manifest.render()
