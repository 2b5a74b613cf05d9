import math
from pathlib import Path

import pytest
from bohmgrav import verify
from bohmgrav.cli import (
    EXIT_CHECK_FAILED,
    EXIT_CONFIG,
    EXIT_NOT_CONVERGED,
    EXIT_NUMERICAL,
    EXIT_OK,
    RunDirectory,
    main,
)
from bohmgrav.config import RunConfig, parse_config
from bohmgrav.export import read_csv
from bohmgrav.invariants import at_most
from bohmgrav.verify import AcceptanceCheck

COARSE = ["--set", "mesh_level=2", "--set", "epsilon=0.2"]


def _run_dir(root: Path, command: str) -> Path:
    runs = list(root.glob(f"{command}-*"))
    assert len(runs) == 1
    return runs[0]


def _manifest(root: Path, command: str) -> str:
    return (_run_dir(root, command) / "manifest.txt").read_text(encoding="utf-8")


def test_solve(tmp_path: Path) -> None:
    code = main(["solve", "--out", str(tmp_path), *COARSE, "--set", "sigma=6.0"])
    assert code == EXIT_OK
    text = _manifest(tmp_path, "solve")
    assert "result.converged = true" in text
    assert "result.exit_code = 0" in text
    assert "check.mass = pass" in text
    assert "run.wall_time.solve" in text
    config = parse_config(text)
    assert config.sigma == 6.0
    assert config.output_dir == str(tmp_path)
    table = read_csv(_run_dir(tmp_path, "solve") / "solution.csv")
    assert table.columns == ["x", "y", "u", "phi", "n"]


def test_solve_from_config_file(tmp_path: Path) -> None:
    config_file = tmp_path / "case.cfg"
    config_file.write_text(
        "epsilon = 0.2\nmesh_level = 2\nexport_formats = csv, vtk\n", encoding="utf-8"
    )
    out = tmp_path / "runs"
    assert main(["solve", "--config", str(config_file), "--out", str(out)]) == EXIT_OK
    run = _run_dir(out, "solve")
    assert (run / "solution.csv").exists()
    assert (run / "solution.vtk").exists()


def test_solve_radial(tmp_path: Path) -> None:
    args = ["--set", "mode=radial", "--set", "radial_points=128", "--set", "export_formats=csv,vtk"]
    assert main(["solve", "--out", str(tmp_path), "--set", "epsilon=0.2", *args]) == EXIT_OK
    run = _run_dir(tmp_path, "solve")
    assert read_csv(run / "solution.csv").columns == ["r", "u", "phi", "n"]
    assert not (run / "solution.vtk").exists()
    assert "result.radial_grading = 0.0" in _manifest(tmp_path, "solve")


def test_solve_radial_small_epsilon_uses_graded_grid(tmp_path: Path) -> None:
    args = ["--set", "mode=radial", "--set", "radial_points=128", "--set", "epsilon=0.001"]
    assert main(["solve", "--out", str(tmp_path), *args]) == EXIT_OK
    assert "result.radial_grading = 3.0" in _manifest(tmp_path, "solve")


def test_solve_not_converged(tmp_path: Path) -> None:
    overrides = ["--set", "sigma=12.0", "--set", "max_picard=1"]
    assert main(["solve", "--out", str(tmp_path), *COARSE, *overrides]) == EXIT_NOT_CONVERGED
    text = _manifest(tmp_path, "solve")
    assert "result.converged = false" in text
    assert "result.exit_code = 2" in text


def test_config_errors(tmp_path: Path) -> None:
    assert main(["solve", "--out", str(tmp_path), "--set", "sigmaa=1"]) == EXIT_CONFIG
    assert main(["solve", "--out", str(tmp_path), "--set", "epsilon=-1"]) == EXIT_CONFIG
    missing = tmp_path / "missing.cfg"
    assert main(["solve", "--config", str(missing), "--out", str(tmp_path)]) == EXIT_NUMERICAL
    assert not list(tmp_path.glob("solve-*"))


def test_classical(tmp_path: Path) -> None:
    sigma = f"sigma={2.0 * math.pi!r}"
    args = ["classical", "--out", str(tmp_path), "--set", "mesh_level=3", "--set", sigma]
    assert main(args) == EXIT_OK
    text = _manifest(tmp_path, "classical")
    assert "result.exact_fermi" in text
    assert "check.classical_mass = pass" in text
    assert (_run_dir(tmp_path, "classical") / "classical.csv").exists()


def test_classical_beyond_threshold(tmp_path: Path) -> None:
    sigma = f"sigma={9.0 * math.pi!r}"
    args = ["classical", "--out", str(tmp_path), "--set", "mesh_level=4", "--set", sigma]
    assert main(args) == EXIT_NOT_CONVERGED
    text = _manifest(tmp_path, "classical")
    assert "result.converged = false" in text
    assert "result.reason" in text


def test_sigma_sweep(tmp_path: Path) -> None:
    args = ["sweep", "--kind", "sigma", "--values", "0,3,6", "--out", str(tmp_path), *COARSE]
    assert main(args) == EXIT_OK
    table = read_csv(_run_dir(tmp_path, "sweep") / "sweep.csv")
    assert table.columns == [
        "sigma",
        "fermi_level",
        "max_phi",
        "fisher",
        "free_energy",
        "total_energy",
        "converged",
    ]
    assert list(table.column("sigma")) == [0.0, 3.0, 6.0]
    assert list(table.column("converged")) == [1.0, 1.0, 1.0]


def test_classical_sweep(tmp_path: Path) -> None:
    args = ["sweep", "--kind", "sigma", "--solver", "classical", "--values", "1,5"]
    assert main([*args, "--out", str(tmp_path), "--set", "mesh_level=3"]) == EXIT_OK
    table = read_csv(_run_dir(tmp_path, "sweep") / "sweep.csv")
    assert table.columns == ["sigma", "fermi", "max_phi", "converged"]


def test_epsilon_sweep(tmp_path: Path) -> None:
    args = ["sweep", "--kind", "epsilon", "--values", "0.4,0.2", "--set", "sigma=3.0"]
    code = main([*args, "--out", str(tmp_path), "--set", "mesh_level=3"])
    assert code in (EXIT_OK, EXIT_CHECK_FAILED)
    text = _manifest(tmp_path, "sweep")
    assert "result.fermi_star" in text
    assert "result.gap_ratios" in text
    table = read_csv(_run_dir(tmp_path, "sweep") / "sweep.csv")
    assert table.columns[0] == "epsilon"
    assert table.values.shape == (2, 8)


def test_sweep_rejects_bad_values(tmp_path: Path) -> None:
    args = ["sweep", "--kind", "sigma", "--values", "3,1", "--out", str(tmp_path), *COARSE]
    assert main(args) == EXIT_CONFIG
    with pytest.raises(SystemExit):
        main(["sweep", "--kind", "sigma", "--values", "a,b", "--out", str(tmp_path)])


def test_nonuniq_below_threshold(tmp_path: Path) -> None:
    args = ["nonuniq", "--out", str(tmp_path), "--set", "mesh_level=3", "--set", "sigma=3.0"]
    assert main([*args, "--set", "epsilon=0.2", "--set", "bump_width=0.2"]) == EXIT_OK
    text = _manifest(tmp_path, "nonuniq")
    assert "result.state1.fermi_level" in text
    assert "result.state2.center = -0.3,0.0" in text
    assert "result.fermi_gap" in text
    assert "check.state2.mass = pass" in text
    assert (_run_dir(tmp_path, "nonuniq") / "state1.csv").exists()


def test_nonuniq_rejects_bad_requests(tmp_path: Path) -> None:
    radial = ["--set", "mode=radial", "--set", "radial_points=64"]
    assert main(["nonuniq", "--out", str(tmp_path), *radial]) == EXIT_CONFIG
    one_center = ["--center", "0.1,0.1"]
    assert main(["nonuniq", "--out", str(tmp_path), *COARSE, *one_center]) == EXIT_CONFIG
    outside = ["--center", "0.1,0.1", "--center", "2,0"]
    assert main(["nonuniq", "--out", str(tmp_path), *COARSE, *outside]) == EXIT_CONFIG


def test_run_directory_records_errors(tmp_path: Path) -> None:
    config = RunConfig(output_dir=str(tmp_path))
    with pytest.raises(RuntimeError):
        with RunDirectory(config, "solve") as run:
            raise RuntimeError("boom")
    text = (run.path / "manifest.txt").read_text(encoding="utf-8")
    assert "result.error = RuntimeError: boom" in text


def test_run_directories_are_unique(tmp_path: Path) -> None:
    config = RunConfig(output_dir=str(tmp_path))
    first = RunDirectory(config, "solve")
    second = RunDirectory(config, "solve")
    assert first.path != second.path
    assert first.path.parent == second.path.parent == tmp_path


def test_verify(monkeypatch: pytest.MonkeyPatch, capsys: pytest.CaptureFixture[str]) -> None:
    checks = [AcceptanceCheck("trivial", lambda: [at_most("zero", 0.0, 1.0)])]
    monkeypatch.setattr(verify, "default_checks", lambda: checks)
    assert main(["verify"]) == EXIT_OK
    assert "trivial" in capsys.readouterr().out


def test_verify_failure(monkeypatch: pytest.MonkeyPatch) -> None:
    checks = [AcceptanceCheck("broken", lambda: [at_most("one", 1.0, 0.0)])]
    monkeypatch.setattr(verify, "default_checks", lambda: checks)
    assert main(["verify", "--level", "full"]) == EXIT_CHECK_FAILED


def test_version(capsys: pytest.CaptureFixture[str]) -> None:
    with pytest.raises(SystemExit) as exc_info:
        main(["--version"])
    assert exc_info.value.code == 0
    assert capsys.readouterr().out.startswith("bohmgrav ")


def test_bad_log_level() -> None:
    with pytest.raises(SystemExit) as exc_info:
        main(["--log-level", "loud", "verify"])
    assert exc_info.value.code == 2
