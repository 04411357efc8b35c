"""End-to-end command tests, run in process against the shipped config."""
import json
from pathlib import Path

import numpy as np
import pytest

from condiff import cli

DEFAULT_CONFIG = Path(__file__).parent.parent / "configs" / "default.json"

# shrink the shipped config so every command finishes in well under a second
SMALL = ["sim.n_particles=400", "sim.dt=0.005", "sim.grid.step=0.05",
         "sim.seed=77"]


def run(cmd, out, *extra, config=DEFAULT_CONFIG):
    argv = [cmd, "--config", str(config), "--out", str(out)]
    for item in (*SMALL, *extra):
        argv += ["--override", item]
    return cli.main(argv)


def read_manifest(out):
    return json.loads((Path(out) / "manifest.json").read_text())


def test_simulate_artifacts_and_paths_layout(tmp_path):
    rc = run("simulate", tmp_path, "model.drift.mf_gain=0",
             "sim.store_paths=true")
    assert rc == 0
    man = read_manifest(tmp_path)
    assert man["command"] == "simulate"
    assert man["seed"] == 77
    assert len(man["config_hash"]) == 64
    assert "numpy" in man["versions"]
    assert man["runtime_seconds"] >= 0.0
    assert 0.0 < man["result"]["survival_end"] < 1.0

    survival_lines = (tmp_path / "survival.csv").read_text().splitlines()
    n_nodes = len(survival_lines) - 1
    blob = (tmp_path / "paths.bin").read_bytes()
    assert len(blob) == 400 * n_nodes * 8
    paths = np.frombuffer(blob, dtype="<f8").reshape(400, n_nodes, 1)

    # at t=0 every particle is alive, so flow.csv starts with all of them
    flow_lines = (tmp_path / "flow.csv").read_text().splitlines()
    first = [line.split(",") for line in flow_lines[1:401]]
    assert [int(row[1]) for row in first] == list(range(400))
    assert np.array_equal([float(row[2]) for row in first], paths[:, 0, 0])


def test_simulate_rejects_coupled_drift(tmp_path, capsys):
    rc = run("simulate", tmp_path)
    assert rc == 2
    assert "mf_gain" in capsys.readouterr().err


def test_missing_seed_is_named(tmp_path, capsys):
    cfg = json.loads(DEFAULT_CONFIG.read_text())
    del cfg["sim"]["seed"]
    path = tmp_path / "noseed.json"
    path.write_text(json.dumps(cfg))
    rc = cli.main(["picard", "--config", str(path), "--out",
                   str(tmp_path / "out")])
    assert rc == 2
    assert "sim.seed" in capsys.readouterr().err


def test_picard_reruns_are_byte_identical(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run("picard", out1) == 0
    assert run("picard", out2) == 0
    for name in ("iterations.csv", "flow.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    man = read_manifest(out1)
    assert man["result"]["converged"] is True


def test_manifest_replay_reproduces_artifacts(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run("fv", out1) == 0
    # a manifest doubles as a config: replay it with no overrides
    rc = cli.main(["fv", "--config", str(out1 / "manifest.json"),
                   "--out", str(out2)])
    assert rc == 0
    for name in ("f_curve.csv", "events.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_fv_finite_variant_and_validation(tmp_path, capsys):
    assert run("fv", tmp_path / "fin", "fv.variant=finite") == 0
    assert (tmp_path / "fin" / "events.csv").exists()
    assert (tmp_path / "fin" / "f_curve.csv").exists()

    rc = run("fv", tmp_path / "bad", "fv.variant=both")
    assert rc == 2
    assert "fv.variant" in capsys.readouterr().err


def test_renewal_command(tmp_path, capsys):
    rc = run("renewal", tmp_path, "renewal.n_paths=300", "renewal.dt_r=0.1")
    assert rc == 0
    assert (tmp_path / "kernel.csv").exists()
    assert (tmp_path / "f_volterra.csv").exists()
    man = read_manifest(tmp_path)
    assert man["result"]["max_residual"] < 0.2
    assert man["result"]["p_hat_horizon"] < 1.0

    rc = run("renewal", tmp_path / "late",
             "sim.grid={\"times\": [0.5, 1.0]}")
    assert rc == 2
    assert "grid" in capsys.readouterr().err


def test_mimic_command(tmp_path):
    rc = run("mimic", tmp_path, "mimic.time_bins=4", "mimic.space_bins=8")
    assert rc == 0
    compare = (tmp_path / "compare.csv").read_text().splitlines()
    assert compare[0] == "J_open,J_closed,delta,se"
    assert len(compare) == 2
    grid_lines = (tmp_path / "policy_grid.csv").read_text().splitlines()
    assert len(grid_lines) == 1 + 4 * 8


def test_optimize_command(tmp_path):
    rc = run("optimize", tmp_path, "optimize.method=nelder-mead",
             "optimize.budget=5")
    assert rc == 0
    best = json.loads((tmp_path / "best.json").read_text())
    assert best["method"] == "nelder-mead"
    assert np.isfinite(best["best_value"])
    trace = (tmp_path / "trace.csv").read_text().splitlines()
    assert len(trace) == 1 + best["n_evals"]


def test_runtime_failure_exit_code(tmp_path, capsys):
    rc = run("simulate", tmp_path, "model.drift.mf_gain=0",
             "sim.n_particles=30", "sim.min_survivors=25")
    assert rc == 3
    assert "SurvivorDepletion" in capsys.readouterr().err


def test_unreadable_config(tmp_path, capsys):
    rc = cli.main(["simulate", "--config", str(tmp_path / "missing.json"),
                   "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "not found" in capsys.readouterr().err
