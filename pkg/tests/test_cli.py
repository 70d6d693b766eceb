import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from adiaband.cli import EXIT_ERROR, EXIT_FAIL, EXIT_OK, main

CONFIGS = Path(__file__).parents[1] / "configs"


def _write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def _moyal(**tol):
    doc = json.loads((CONFIGS / "moyal_check.json").read_text())
    if tol:
        doc["tolerances"] = tol
    return doc


def test_console_script_help():
    exe = shutil.which("adiaband")
    cmd = [exe] if exe else [sys.executable, "-m", "adiaband.cli"]
    out = subprocess.run(cmd + ["--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "run" in out.stdout and "report" in out.stdout


def test_passing_run_exits_zero(tmp_path, capsys):
    cfg = _write(tmp_path, "m.json", _moyal())
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == EXIT_OK
    assert "PASS canonical commutation (" in capsys.readouterr().out
    assert (tmp_path / "out" / "report.json").is_file()
    assert not (tmp_path / "out" / "failures.json").exists()


def test_report_summarizes_completed_run(tmp_path, capsys):
    cfg = _write(tmp_path, "m.json", _moyal())
    main(["run", str(cfg), "--out", str(tmp_path / "out")])
    capsys.readouterr()
    assert main(["report", str(tmp_path / "out")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS canonical commutation (" in out
    assert "data files:" in out and ".csv" in out


def test_failed_assertion_exits_two_with_manifest(tmp_path, capsys):
    cfg = _write(tmp_path, "m.json", _moyal(commutation=1e-30))
    out_dir = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out_dir)]) == EXIT_FAIL
    text = capsys.readouterr().out
    assert "FAIL canonical commutation" in text and " > 1e-30" in text
    manifest = json.loads((out_dir / "failures.json").read_text())
    assert manifest["experiment"] == "moyal_check"
    names = [f["name"] for f in manifest["failures"]]
    assert "canonical commutation" in names and "associativity" not in names
    assert main(["report", str(out_dir)]) == EXIT_FAIL


def test_failed_slope_line_points_at_table(tmp_path, capsys):
    doc = json.loads((CONFIGS / "orthogonality.json").read_text())
    doc["grid"].update(n_x=64, n_xi=64)
    doc["tolerances"] = {"slope_margin": 5.0}
    assert main(["run", str(_write(tmp_path, "o.json", doc)), "--out", str(tmp_path / "o")]) == EXIT_FAIL
    line = [l for l in capsys.readouterr().out.splitlines() if l.startswith("FAIL")][0]
    assert line.startswith("FAIL orthogonality slope ")
    assert "< 6 (K=1) see " in line and line.endswith(".csv")


def test_schema_violation_exits_one(tmp_path, capsys):
    doc = _moyal()
    doc["grid"]["n_x"] = 2
    assert main(["run", str(_write(tmp_path, "bad.json", doc))]) == EXIT_ERROR
    assert "$.grid.n_x" in capsys.readouterr().err


def test_missing_config_exits_one(tmp_path):
    assert main(["run", str(tmp_path / "none.json")]) == EXIT_ERROR


def test_incomplete_run_exits_one(tmp_path, capsys):
    (tmp_path / "half").mkdir()
    (tmp_path / "half" / "table.csv").write_text("a\n1\n")
    assert main(["report", str(tmp_path / "half")]) == EXIT_ERROR
    assert "report.json" in capsys.readouterr().err


def test_report_with_missing_table_is_incomplete(tmp_path):
    cfg = _write(tmp_path, "m.json", _moyal())
    main(["run", str(cfg), "--out", str(tmp_path / "out")])
    for p in (tmp_path / "out").glob("*.csv"):
        p.unlink()
    assert main(["report", str(tmp_path / "out")]) == EXIT_ERROR


def test_nonpositive_threads_rejected(tmp_path):
    cfg = _write(tmp_path, "m.json", _moyal())
    assert main(["run", str(cfg), "--threads", "0"]) == EXIT_ERROR


@pytest.mark.parametrize("threads", ["1", "2"])
def test_thread_count_does_not_change_output(tmp_path, threads):
    cfg = _write(tmp_path, "m.json", _moyal())
    main(["run", str(cfg), "--out", str(tmp_path / "ref"), "--threads", "1"])
    main(["run", str(cfg), "--out", str(tmp_path / "t"), "--threads", threads])
    for p in sorted((tmp_path / "ref").iterdir()):
        assert (tmp_path / "t" / p.name).read_bytes() == p.read_bytes()


def test_config_embedded_in_report(tmp_path):
    cfg = _write(tmp_path, "m.json", _moyal())
    main(["run", str(cfg), "--out", str(tmp_path / "out")])
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["config"]["grid"]["n_x"] == 128 and rep["schema_version"] == 1
    assert len(rep["config_hash"]) == 64


def test_degennes_report_prints_threshold_table(tmp_path, capsys):
    doc = {"schema_version": 1, "experiment": "degennes",
           "model": {"gammas": [0], "n_levels": 2, "threshold_levels": [1]}}
    out_dir = tmp_path / "d"
    main(["run", str(_write(tmp_path, "d.json", doc)), "--out", str(out_dir)])
    capsys.readouterr()
    main(["report", str(out_dir)])
    out = capsys.readouterr().out
    assert "thresholds:" in out and "0.5901061" in out


def test_degennes_table_has_anchor_row(tmp_path):
    from adiaband.io import read_csv
    doc = {"schema_version": 1, "experiment": "degennes",
           "model": {"gammas": [0], "n_levels": 1, "threshold_levels": [1]}}
    out_dir = tmp_path / "d"
    main(["run", str(_write(tmp_path, "d.json", doc)), "--out", str(out_dir)])
    header, rows = read_csv(out_dir / "dispersion.csv")
    col = {h: i for i, h in enumerate(header)}
    anchor = [r for r in rows if float(r[col["sigma"]]) == 0.0 and float(r[col["gamma"]]) == 0.0]
    assert abs(float(anchor[0][col["mu_1"]]) - 1) <= 1e-6
