import json
import subprocess
import sys

import pytest

from relay.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def test_config_prints_full_defaults(capsys):
    assert main(["config"]) == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert data["participants"] == 200 and [c["name"] for c in data["conditions"]] == ["dark", "medium", "light"]


def test_calibrate_writes_map(tmp_path):
    cfg = _write(tmp_path / "cfg.json", {"calibration_frames": 2})
    assert main(["calibrate", "--config", cfg, "--out", str(tmp_path / "cal.json")]) == EXIT_OK
    cal = json.loads((tmp_path / "cal.json").read_text())
    assert cal


def test_unknown_config_key_is_a_validation_failure(tmp_path, capsys):
    cfg = _write(tmp_path / "cfg.json", {"participants": 2, "colour": "red"})
    assert main(["calibrate", "--config", cfg, "--out", str(tmp_path / "cal.json")]) == EXIT_INVALID
    assert "colour" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["experiment", "--participants", "0", "--out", "x"],
    ["pattern", "--name", "spiral", "--out", "x"],
    ["laser", "--out", "x.svg"],
    ["nonsense"],
    [],
])
def test_bad_arguments_are_validation_failures(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == EXIT_INVALID


def test_missing_config_file(tmp_path):
    assert main(["calibrate", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "c.json")]) == EXIT_INVALID


def test_analyze_without_runs(tmp_path):
    assert main(["analyze", "--run", str(tmp_path), "--report", str(tmp_path / "out")]) == EXIT_INVALID


def test_calibration_failure_is_a_runtime_failure(tmp_path, capsys):
    # a threshold below every pupil gray level leaves nothing to detect
    cfg = _write(tmp_path / "cfg.json", {"mode": "raster", "calibration_frames": 1, "tracker": {"pupil_threshold": 0}})
    assert main(["calibrate", "--config", cfg, "--out", str(tmp_path / "cal.json")]) == EXIT_RUNTIME
    assert "simulation failed" in capsys.readouterr().err
    assert not (tmp_path / "cal.json").exists()


def test_experiment_pattern_and_analyze(tmp_path):
    runs, report = tmp_path / "runs", tmp_path / "report"
    assert main(["experiment", "--participants", "2", "--saccades", "6", "--seed", "3", "--out", str(runs)]) == EXIT_OK
    assert main(["pattern", "--name", "grid13", "--trials", "4", "--out", str(runs)]) == EXIT_OK
    assert sorted(p.name for p in runs.iterdir()) == ["experiment", "pattern_grid13"]
    assert json.loads((runs / "experiment" / "config.json").read_text())["seed"] == 3
    assert main(["analyze", "--run", str(runs), "--report", str(report)]) == EXIT_OK
    names = sorted(p.name for p in report.iterdir())
    assert names == ["accuracy.csv", "anova.json", "bias.json", "mainseq.csv", "precision.csv"]
    assert len((report / "accuracy.csv").read_text().splitlines()) == 14
    assert "pattern_grid13" in json.loads((report / "bias.json").read_text())["runs"]
    assert "experiment" in json.loads((report / "anova.json").read_text())["runs"]


def test_no_samples_flag(tmp_path):
    assert main(["experiment", "--participants", "1", "--saccades", "4", "--no-samples", "--out", str(tmp_path)]) == EXIT_OK
    assert not (tmp_path / "experiment" / "samples").exists()


def test_laser_writes_svg_and_csv(tmp_path):
    svg = tmp_path / "cross.svg"
    assert main(["laser", "--pattern", "cross", "--out", str(svg)]) == EXIT_OK
    assert svg.read_text().startswith("<svg")
    assert len((tmp_path / "cross.csv").read_text().splitlines()) == 39


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "relay.cli", "laser", "--pattern", "v_line",
                           "--out", str(tmp_path / "v.svg")], capture_output=True, text=True)
    assert proc.returncode == EXIT_OK, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "relay.cli", "experiment", "--out", str(tmp_path), "--mode", "slow"],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_INVALID
