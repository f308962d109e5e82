"""The `overlayfem-bench` command: flags, artifacts, exit codes."""

import json
import subprocess
import sys

import numpy as np
import pytest

import overlayfem.distributed
from overlayfem.cli import main, _parse_graded, _parse_int_list
from overlayfem.distributed import SolverError


def run_cli(*argv):
    return main(list(argv))


# ---------------------------------------------------------- flag parsing


def test_parse_graded():
    assert _parse_graded("l0:8,l1:6") == {0: 8, 1: 6}
    assert _parse_graded(" L0:4 ") == {0: 4}
    for bad in ("p0:8", "l:8", "08", ""):
        with pytest.raises(Exception):
            _parse_graded(bad)


def test_parse_int_list():
    assert _parse_int_list("1,2,4") == [1, 2, 4]
    assert _parse_int_list("8") == [8]
    with pytest.raises(Exception):
        _parse_int_list("1,two")


# ------------------------------------------------------------------- run


def test_dry_run_writes_report(tmp_path, capsys):
    code = run_cli("run", "lshape", "--res", "2", "--steps", "2",
                   "--dry-run", "--out", str(tmp_path))
    assert code == 0
    out = capsys.readouterr().out
    assert "30 leaves" in out

    report = json.loads((tmp_path / "report.json").read_text())
    assert [s["leaves"] for s in report["steps"]] == [12, 21, 30]
    assert report["status"] == "ok"
    assert report["config"]["dry_run"] is True
    assert not (tmp_path / "convergence.csv").exists()


def test_run_writes_all_artifacts_reproducibly(tmp_path):
    argv = ("run", "lshape", "--res", "2", "--steps", "1", "--p", "2",
            "--ranks", "2", "--out", str(tmp_path))
    assert run_cli(*argv) == 0
    for name in ("report.json", "convergence.csv", "partition.csv",
                 "mesh.xml", "solution.csv"):
        assert (tmp_path / name).exists(), name

    report = json.loads((tmp_path / "report.json").read_text())
    assert report["config"]["p"] == 2
    assert report["config"]["ranks"] == 2
    assert len(report["steps"]) == 2
    step = report["steps"][-1]
    assert step["cg_iterations"] > 0
    assert len(step["per_rank"]) == 2
    total = sum(v for v in step["timings"].values())
    assert total > 0

    first = {name: (tmp_path / name).read_bytes()
             for name in ("convergence.csv", "partition.csv")}
    assert run_cli(*argv) == 0
    for name, blob in first.items():
        assert (tmp_path / name).read_bytes() == blob, f"{name} not reproducible"


def test_config_file_with_flag_overrides(tmp_path):
    cfg = tmp_path / "study.json"
    cfg.write_text(json.dumps({
        "benchmark": "fcm_disk", "res": 4, "steps": 1, "p": 3,
        "epsilon": 1e-6, "depth": 2, "ranks": 2,
    }))
    out = tmp_path / "out"
    code = run_cli("run", "lshape", "--config", str(cfg),
                   "--res", "2", "--out", str(out))
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    # positional benchmark and --res override the file; p survives
    assert report["config"]["benchmark"] == "lshape"
    assert report["config"]["res"] == 2
    assert report["config"]["p"] == 3


def test_explicit_uniform_order_clears_graded_map(tmp_path):
    cfg = tmp_path / "graded.json"
    cfg.write_text(json.dumps({
        "benchmark": "lshape", "res": 2, "steps": 1,
        "p_graded": {"0": 3, "1": 2},
    }))
    out = tmp_path / "out"
    assert run_cli("run", "--config", str(cfg), "--p", "2",
                   "--out", str(out)) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["p_graded"] is None
    assert report["config"]["p"] == 2


def test_graded_flag_reaches_report(tmp_path):
    assert run_cli("run", "lshape", "--res", "2", "--steps", "1",
                   "--p-graded", "l0:3,l1:2", "--ranks", "2",
                   "--out", str(tmp_path)) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["config"]["p_graded"] == {"0": 3, "1": 2}


def test_validation_failure_exits_2(tmp_path, capsys):
    assert run_cli("run", "lshape", "--res", "0", "--out", str(tmp_path)) == 2
    assert "error" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path, capsys):
    assert run_cli("run", "--config", str(tmp_path / "nope.json")) == 2
    assert "error" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"benchmark": "lshape", "polynomial_order": 3}))
    assert run_cli("run", "--config", str(cfg)) == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_solver_failure_still_writes_report(tmp_path, monkeypatch, capsys):
    def stalled(system, rhs=None, tol=1e-10, max_iter=None):
        raise SolverError("iteration limit reached", [1.0, 0.9, 0.5])

    monkeypatch.setattr(overlayfem.distributed, "parallel_cg", stalled)
    code = run_cli("run", "lshape", "--res", "2", "--steps", "0",
                   "--out", str(tmp_path))
    assert code == 2
    assert "error" in capsys.readouterr().err
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["status"] != "ok"
    assert "iteration limit" in report["status"]


# ------------------------------------------------------------------ export


def test_export_rebuilds_artifacts(tmp_path):
    assert run_cli("run", "lshape", "--res", "2", "--steps", "1", "--p", "2",
                   "--ranks", "2", "--out", str(tmp_path)) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    leaves = report["steps"][-1]["leaves"]

    (tmp_path / "mesh.xml").unlink()
    (tmp_path / "solution.csv").unlink()
    (tmp_path / "partition.csv").unlink()
    assert run_cli("export", "--out", str(tmp_path)) == 0

    import xml.etree.ElementTree as ET
    grid = ET.parse(tmp_path / "mesh.xml").getroot()
    assert int(grid.get("cells")) == leaves
    part = (tmp_path / "partition.csv").read_text().strip().splitlines()
    assert len(part) == 1 + leaves
    ranks = {int(line.split(",")[1]) for line in part[1:]}
    assert ranks <= {0, 1}
    assert (tmp_path / "solution.csv").exists()


def test_export_without_run_exits_2(tmp_path, capsys):
    assert run_cli("export", "--out", str(tmp_path / "empty")) == 2
    assert "no prior run" in capsys.readouterr().err


# ------------------------------------------------------------------- scale


def test_scale_writes_table(tmp_path, capsys):
    code = run_cli("scale", "lshape", "--res", "2", "--steps", "1", "--p", "2",
                   "--ranks", "1,2", "--out", str(tmp_path))
    assert code == 0
    lines = (tmp_path / "scaling.csv").read_text().strip().splitlines()
    header = lines[0].split(",")
    assert header == ["ranks", "integrate", "solve", "total",
                      "integrate_speedup", "solve_speedup", "total_speedup",
                      "element_integrations", "sent_triplets", "comm_share",
                      "cg_iterations"]
    assert len(lines) == 3
    rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
    assert [r["ranks"] for r in rows] == ["1", "2"]
    # the same problem is integrated and solved at every rank count
    assert rows[0]["element_integrations"] == rows[1]["element_integrations"]
    assert rows[0]["cg_iterations"] == rows[1]["cg_iterations"]
    assert rows[0]["sent_triplets"] == "0"
    assert float(rows[1]["comm_share"]) > 0.0
    assert float(rows[0]["integrate_speedup"]) == 1.0


# ------------------------------------------------------------- packaging


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "overlayfem.cli", "run", "lshape", "--res", "2",
         "--steps", "0", "--dry-run", "--out", str(tmp_path)],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "12 leaves" in proc.stdout
