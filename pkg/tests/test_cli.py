import json
import math

import numpy as np
import pytest

from dampedkam.cli import run
from dampedkam.flow import example_system
from dampedkam.serialize import read_csv, write_csv
from dampedkam.solver import PeriodicGrid, SolverParams, stationary


def _json(path):
    return json.loads(path.read_text())


def test_csv_roundtrip_is_bitwise(tmp_path):
    vals = np.array([1 / 3, -0.0, 5e-324, 1e308, math.pi, -2.5e-17])
    write_csv(tmp_path / "a.csv", ["x", "flag"], [vals, [True, False, True, False, True, False]])
    header, data = read_csv(tmp_path / "a.csv")
    assert header == ["x", "flag"]
    assert data["x"].tobytes() == vals.tobytes()
    assert data["flag"].tolist() == [1, 0, 1, 0, 1, 0]


def test_verify_kam(tmp_path, capsys):
    assert run(["verify-kam", "--example", "fig1", "--graph", "sin", "--out", str(tmp_path)]) == 0
    out = _json(tmp_path / "verify-kam.json")
    assert out["residual"] <= 1e-12
    assert out["exactness_constant"] == 0.0
    assert out["rotation_number"] == pytest.approx(math.sqrt(3), abs=1e-9)
    assert "rotation number" in capsys.readouterr().err


def test_configuration_errors_exit_2(tmp_path, capsys):
    assert run(["solve", "--config", str(tmp_path / "missing.json")]) == 2
    assert "not found" in capsys.readouterr().err
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"N": 64, "grid_size": 3}))
    assert run(["solve", "--config", str(cfg)]) == 2
    assert run(["solve", "--example", "nope", "--out", str(tmp_path)]) == 2
    assert run(["bogus-command"]) == 2
    assert run(["solve", "--N", "64", "--dt", "0.001", "--v-max", "1", "--out", str(tmp_path)]) == 2


def test_non_convergence_exits_1(tmp_path):
    argv = ["evolve", "--N", "64", "--dt", "0.01", "--v-max", "20", "--psi", '{"cos": [0, 50]}', "--t", "0.05",
            "--out", str(tmp_path)]
    assert run(argv) == 1


def test_solve_csv_reloads_bitwise(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"N": 64, "dt": 0.01, "tol": 1e-3, "example": "pendulum"}))
    assert run(["solve", "--config", str(cfg), "--out", str(tmp_path), "--svg"]) == 0
    _, data = read_csv(tmp_path / "solve.csv")
    direct = stationary(example_system("pendulum"), PeriodicGrid(64), SolverParams(dt=0.01), tol=1e-3)
    assert data["u"].tobytes() == direct.solution.values.tobytes()
    assert (tmp_path / "solve.svg").read_text().startswith("<svg")


def test_thread_count_does_not_change_results(tmp_path):
    outs = []
    for k in ("1", "2"):
        d = tmp_path / k
        assert run(["evolve", "--N", "128", "--dt", "0.005", "--t", "0.5", "--threads", k, "--out", str(d)]) == 0
        outs.append((d / "evolve.csv").read_bytes())
    assert outs[0] == outs[1]


def test_thread_env_variable(tmp_path, monkeypatch):
    monkeypatch.setenv("DAMPEDKAM_THREADS", "zero")
    assert run(["verify-kam", "--out", str(tmp_path)]) == 2


def test_rate_format(tmp_path):
    argv = ["rate", "--N", "64", "--dt", "0.01", "--t-max", "6", "--ref-tol", "1e-8", "--out", str(tmp_path)]
    assert run(argv) == 0
    header, data = read_csv(tmp_path / "rate.csv")
    assert header == ["t", "c0_error", "w1inf_error"]
    assert data["t"][0] == 0.5 and data["t"][-1] == 6.0
    summary = _json(tmp_path / "rate.json")
    assert {"C", "rate", "r2"} <= set(summary)
    assert summary["rate"] > 0


def test_other_subcommands_smoke(tmp_path):
    assert run(["flow", "--t", "1", "--out", str(tmp_path)]) == 0
    flow = _json(tmp_path / "flow.json")
    assert flow["det_final"] == pytest.approx(flow["det_expected"], rel=1e-9)
    assert run(["splitting", "--n-theta", "64", "--horizon", "5", "--out", str(tmp_path)]) == 0
    split = _json(tmp_path / "splitting.json")
    assert split["es_residual"] < 1e-6
    header, _ = read_csv(tmp_path / "splitting.csv")
    assert header[0] == "theta" and "B" in header
    assert run(["attractor", "--T", "10", "--out", str(tmp_path), "--svg"]) == 0
    header, _ = read_csv(tmp_path / "attractor.csv")
    assert header == ["x", "p"]
    assert run(["perturb", "--eps", "0.01", "--T", "10", "--nx", "16", "--np", "2", "--out", str(tmp_path)]) == 0
    assert _json(tmp_path / "perturb.json")["runs"][0]["eps"] == 0.01
    assert run(["bifurcate", "--example", "fig1", "--coarse", "3", "--T", "10", "--out", str(tmp_path)]) == 0
    assert _json(tmp_path / "bifurcate.json")["message"] == "no bifurcation in range"
    header, _ = read_csv(tmp_path / "bifurcate.csv")
    assert header == ["alpha", "is_graph", "spread"]
