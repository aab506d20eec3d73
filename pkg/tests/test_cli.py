"""End-to-end CLI behavior: artifacts, determinism, exit codes."""

import json

import pytest

from spinsteer.cli import main
from spinsteer.reports import SWEEP_HEADER, TRAJECTORY_HEADER


def write_config(tmp_path, doc, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def simulate_doc(**overrides):
    doc = {
        "params": {"n_atoms": 4, "G": 1e-4, "A": 0.04, "eta": 1.0,
                   "dt": 0.01, "t_final": 1.0, "seed": 7},
        "engine": "moment",
        "stride": 10,
    }
    doc.update(overrides)
    return doc


def test_simulate_writes_csv_and_metadata(tmp_path, capsys):
    cfg = write_config(tmp_path, simulate_doc())
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "# master_seed: 7"
    assert lines[1] == TRAJECTORY_HEADER
    assert len(lines) == 2 + 11  # 100 steps at stride 10, plus t = 0
    assert all(len(row.split(",")) == 19 for row in lines[2:])
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["command"] == "simulate"
    assert meta["master_seed"] == 7
    assert meta["artifacts"] == ["trajectory.csv", "metadata.json"]
    assert meta["config"]["params"]["n_atoms"] == 4
    stdout = capsys.readouterr().out
    assert "simulate: engine=moment N=4" in stdout


def test_simulate_sme_appends_purity_column(tmp_path):
    cfg = write_config(tmp_path, simulate_doc(engine="sme"))
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[1] == TRAJECTORY_HEADER + ", purity"
    assert all(len(row.split(",")) == 20 for row in lines[2:])


def test_simulate_rerun_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path, simulate_doc())
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(b)]) == 0
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
    assert (a / "metadata.json").read_bytes() == (b / "metadata.json").read_bytes()


def test_metadata_reingestion_reproduces_csv(tmp_path):
    cfg = write_config(tmp_path, simulate_doc())
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["simulate", "--config", str(a / "metadata.json"),
                 "--out", str(b)]) == 0
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()


def test_seed_override_lands_everywhere(tmp_path):
    cfg = write_config(tmp_path, simulate_doc())
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out),
                 "--seed", "42"]) == 0
    first = (out / "trajectory.csv").read_text().splitlines()[0]
    assert first == "# master_seed: 42"
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["master_seed"] == 42
    assert meta["config"]["params"]["seed"] == 42


def test_config_error_exits_2(tmp_path, capsys):
    doc = simulate_doc()
    del doc["params"]["A"]
    cfg = write_config(tmp_path, doc)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "config error: missing field params.A" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "absent.json"),
                 "--out", str(tmp_path)]) == 2
    assert "cannot read config" in capsys.readouterr().err


def test_divergence_exits_3(tmp_path, capsys):
    doc = simulate_doc(law={"beta_xz": -14.5}, target=[0.0, 1.0, 0.0])
    doc["params"].update(n_atoms=100, t_final=20.0)
    cfg = write_config(tmp_path, doc)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert "numerical abort" in capsys.readouterr().err


def test_check_pass_and_fail(tmp_path, capsys):
    cfg = write_config(tmp_path, simulate_doc())
    ok = write_config(tmp_path, {"checks": [
        {"name": "final_sz", "op": "abs_max", "value": 1.0}]}, "ok.json")
    bad = write_config(tmp_path, {"checks": [
        {"name": "final_sz", "op": "abs_max", "value": 1e-9}]}, "bad.json")
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out),
                 "--check", str(ok)]) == 0
    assert "... ok" in capsys.readouterr().out
    assert main(["simulate", "--config", str(cfg), "--out", str(out),
                 "--check", str(bad)]) == 4
    assert "... FAILED" in capsys.readouterr().out


def test_check_unknown_name_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, simulate_doc())
    chk = write_config(tmp_path, {"checks": [
        {"name": "bogus", "op": "min", "value": 0.0}]}, "chk.json")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path),
                 "--check", str(chk)]) == 2
    assert "unknown value 'bogus'" in capsys.readouterr().err


def test_plot_flag_writes_svg(tmp_path):
    cfg = write_config(tmp_path, simulate_doc())
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out),
                 "--plot"]) == 0
    svg = (out / "trajectory.svg").read_text()
    assert svg.lstrip().startswith("<?xml")
    assert "<svg" in svg
    meta = json.loads((out / "metadata.json").read_text())
    assert "trajectory.svg" in meta["artifacts"]


def test_sweep_cli_csv_and_determinism(tmp_path, capsys):
    doc = {
        "params": {"n_atoms": 4, "G": 1e-4, "A": 0.04, "eta": 1.0,
                   "dt": 0.01, "t_final": 30.0, "seed": 3},
        "sweep": {"entry": "beta_xz", "grid": [-1.0, 0.0, 1.0],
                  "repetitions": 2},
    }
    cfg = write_config(tmp_path, doc)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["sweep", "--config", str(cfg), "--out", str(b)]) == 0
    lines = (a / "sweep.csv").read_text().splitlines()
    assert lines[0] == "# master_seed: 3"
    assert lines[1] == SWEEP_HEADER
    assert len(lines) == 2 + 3
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    meta = json.loads((a / "metadata.json").read_text())
    assert meta["report"]["entry"] == "beta_xz"
    assert "sweep: beta_xz over 3 points" in capsys.readouterr().out


def test_tune_cli_writes_report(tmp_path, capsys):
    doc = {
        "params": {"n_atoms": 4, "G": 1e-4, "A": 0.04, "eta": 1.0,
                   "dt": 0.01, "t_final": 20.0, "seed": 13},
        "target": [0.0, 1.0, 0.0],
        "tune": {"bounds": {"beta_xz": [-1.0, 0.0]}, "budget": 4,
                 "method": "grid", "repetitions": 2},
    }
    cfg = write_config(tmp_path, doc)
    out = tmp_path / "out"
    assert main(["tune", "--config", str(cfg), "--out", str(out)]) == 0
    doc = json.loads((out / "tune.json").read_text())
    report = doc["report"]
    assert set(report) >= {"law", "residual", "n_evaluations", "history"}
    assert report["n_evaluations"] <= 4
    assert "tune: best" in capsys.readouterr().out


def test_compare_cli_writes_artifacts(tmp_path, capsys):
    doc = {
        "params": {"n_atoms": 2, "G": 1e-4, "A": 0.04, "eta": 1.0,
                   "dt": 0.01, "t_final": 2.0, "seed": 5},
        "compare": {"n_trajectories": 2},
    }
    cfg = write_config(tmp_path, doc)
    out = tmp_path / "out"
    assert main(["compare", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "compare.csv").read_text().splitlines()
    assert lines[1] == "t, dev_sx, dev_sy, dev_sz, res_xy, res_yz, res_xz"
    doc = json.loads((out / "compare.json").read_text())
    assert doc["report"]["n_trajectories"] == 2
    assert "compare: 2 matched trajectories" in capsys.readouterr().out


def test_collapse_cli_writes_histogram(tmp_path, capsys):
    doc = {
        "params": {"n_atoms": 4, "G": 1e-4, "A": 0.04, "eta": 1.0,
                   "dt": 0.01, "t_final": 30.0, "seed": 9},
        "collapse": {"n_trajectories": 10},
    }
    cfg = write_config(tmp_path, doc)
    out = tmp_path / "out"
    assert main(["collapse", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "collapse.csv").read_text().splitlines()
    assert lines[1] == "k, eigenvalue, count, born"
    assert len(lines) == 2 + 5
    doc = json.loads((out / "collapse.json").read_text())
    counts = doc["report"]["counts"]
    assert sum(counts) + doc["report"]["uncollapsed"] == 10
    assert "collapse: 10 trajectories" in capsys.readouterr().out
