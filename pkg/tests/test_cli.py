"""Command-line runner: smoke runs, reproducibility, and error reporting."""

import csv
import json
from collections import defaultdict

import numpy as np
import pytest
from click.testing import CliRunner

from slowfastsde import derive_seed
from slowfastsde.cli import main

LINEAR_CFG = """
[system]
name = "linear_test"
epsilon = 0.05
[budgets]
n_samples = 16
k_max = 15
tol = 1e-3
T_erg = 20.0
burn_in = 2.0
n_mc = 30
n_sections = 10
m_max = 4
n_orbits = 32
n_pairs = 120
[study]
epsilons = [0.2, 0.1]
T = 0.3
[slow]
x0 = [0.0]
x_grid = [-0.5, 0.0, 0.5]
"""

SUBCOMMANDS = ("simulate", "pullback", "measure", "ergodicity", "diagnose",
               "average", "verify-averaging", "example")


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def linear_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "linear.toml"
    p.write_text(LINEAR_CFG)
    return str(p)


def invoke(runner, cfg, out, command, *extra):
    args = [command, "--config", cfg, "--out", str(out), *extra]
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def read_json(out, name):
    with open(out / name) as fh:
        return json.load(fh)


def read_rows(out, name):
    with open(out / name, newline="") as fh:
        return list(csv.reader(fh))


def test_help_screens(runner):
    top = runner.invoke(main, ["--help"])
    assert top.exit_code == 0
    for cmd in SUBCOMMANDS:
        assert cmd in top.output
        sub = runner.invoke(main, [cmd, "--help"])
        assert sub.exit_code == 0
        assert "--seed-offset" in sub.output


def test_simulate_writes_paths_and_summary(runner, linear_cfg, tmp_path):
    out = tmp_path / "out"
    result = invoke(runner, linear_cfg, out, "simulate")
    assert "6000 steps" in result.output
    rows = read_rows(out, "slow_path.csv")
    assert rows[0] == ["t", "x_1"]
    assert len(rows) == 6002  # header plus 6001 grid states
    assert float(rows[1][0]) == 0.0
    assert float(rows[-1][0]) == 6.0
    doc = read_json(out, "simulate_summary.json")
    assert doc["command"] == "simulate"
    assert doc["results"]["horizon"] == pytest.approx(6.0)
    assert doc["config"]["seeds"]["simulate"] == \
        derive_seed(1234, "stage", "simulate")
    assert len(read_rows(out, "fast_path.csv")) == 6002


def test_identical_invocations_are_byte_identical(runner, linear_cfg,
                                                  tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    invoke(runner, linear_cfg, out1, "simulate")
    invoke(runner, linear_cfg, out2, "simulate")
    for name in ("slow_path.csv", "fast_path.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    # summaries embed out_dir, so compare their parsed results instead
    assert read_json(out1, "simulate_summary.json")["results"] == \
        read_json(out2, "simulate_summary.json")["results"]


def test_seed_offset_changes_the_run(runner, linear_cfg, tmp_path):
    base, moved = tmp_path / "a", tmp_path / "b"
    invoke(runner, linear_cfg, base, "simulate")
    invoke(runner, linear_cfg, moved, "simulate", "--seed-offset", "1")
    assert (base / "fast_path.csv").read_bytes() != \
        (moved / "fast_path.csv").read_bytes()


def test_pullback_command(runner, linear_cfg, tmp_path):
    out = tmp_path / "out"
    result = invoke(runner, linear_cfg, out, "pullback")
    assert "converged=True" in result.output
    doc = read_json(out, "pullback_summary.json")["results"]
    assert doc["converged"] is True
    assert doc["periodicity_passed"] is True
    assert doc["k_used"] <= 15
    iters = read_rows(out, "pullback_iterates.csv")
    assert iters[0] == ["k", "sup_diff"]
    assert len(iters) == doc["k_used"]  # header + one row per comparison
    sol = read_rows(out, "pullback_solution.csv")
    assert len(sol) == 1002  # header + tau/dt + 1 grid points


def test_measure_command(runner, linear_cfg, tmp_path):
    out = tmp_path / "out"
    invoke(runner, linear_cfg, out, "measure")
    rows = read_rows(out, "measures.csv")
    assert rows[0] == ["s", "y_1", "weight"]
    assert len(rows) == 1 + 10 * 16
    mass = defaultdict(float)
    for s, _, w in rows[1:]:
        mass[s] += float(w)
    assert len(mass) == 10
    assert all(abs(total - 1.0) < 1e-12 for total in mass.values())
    dists = read_rows(out, "bl_distances.csv")
    assert len(dists) == 1 + 45  # header + C(10, 2) pairs
    doc = read_json(out, "measure_summary.json")["results"]
    assert doc["n_sections"] == 10
    assert 0.0 < doc["max_pairwise_d_bl"] <= 2.0


def test_ergodicity_command(runner, linear_cfg, tmp_path):
    out = tmp_path / "out"
    invoke(runner, linear_cfg, out, "ergodicity")
    doc = read_json(out, "ergodicity_summary.json")["results"]
    assert len(doc["box_masses"]) == 2
    assert all(0.0 <= m <= 1.0 for m in doc["box_masses"])
    assert len(doc["final_gaps"]) == 2
    rows = read_rows(out, "kb_curve.csv")
    assert rows[0] == ["box", "m", "gap", "se"]
    assert len(rows) > 2


def test_diagnose_command(runner, linear_cfg, tmp_path):
    out = tmp_path / "out"
    result = invoke(runner, linear_cfg, out, "diagnose")
    doc = read_json(out, "diagnose_summary.json")["results"]
    assert -1.15 < doc["coupling"]["beta_hat"] < -0.85
    assert doc["coupling"]["converged"] is True
    assert doc["hormander"]["full_rank"] is True
    assert doc["dissipativity"]["L_max"] < 1e-9  # constant noise
    assert read_rows(out, "dissipativity.csv")[0] == \
        ["t", "K_hat", "L_hat", "lam_hat"]
    assert "rank=1/1" in result.output


def test_average_command_and_worker_invariance(runner, linear_cfg, tmp_path):
    serial, pooled = tmp_path / "w1", tmp_path / "w2"
    result = invoke(runner, linear_cfg, serial, "average", "--workers", "1")
    invoke(runner, linear_cfg, pooled, "average", "--workers", "2")
    for name in ("drift_ergodic.csv", "drift_measure.csv",
                 "averaged_path.csv"):
        assert (serial / name).read_bytes() == (pooled / name).read_bytes()
    doc = read_json(serial, "average_summary.json")["results"]
    assert doc == read_json(pooled, "average_summary.json")["results"]
    assert doc["max_gap_over_se"] < 6.0
    assert len(doc["route_gap_over_se"]) == 3
    rows = read_rows(serial, "drift_ergodic.csv")
    assert rows[0] == ["x", "fbar", "se"]
    assert [float(r[0]) for r in rows[1:]] == [-0.5, 0.0, 0.5]
    assert "two-route gap" in result.output


def test_verify_averaging_command(runner, tmp_path):
    cfg = tmp_path / "toy.toml"
    cfg.write_text(LINEAR_CFG.replace('name = "linear_test"',
                                      'name = "toy_turbulence"'))
    out = tmp_path / "out"
    result = invoke(runner, str(cfg), out, "verify-averaging")
    assert "mean sup-errors" in result.output
    rows = read_rows(out, "error_study.csv")
    assert rows[0] == ["epsilon", "mean_sup_error", "se", "n_mc"]
    assert [float(r[0]) for r in rows[1:]] == [0.2, 0.1]
    assert all(int(r[3]) == 30 for r in rows[1:])
    doc = read_json(out, "verify_summary.json")["results"]
    assert doc["decreasing_ok"] == [None, doc["decreasing_ok"][1]]
    assert set(doc["sup_error_quantiles"]) == {"0.2", "0.1"}
    assert "all_decreasing" in doc


def test_example_command_checks_the_oracle(runner, tmp_path):
    cfg = tmp_path / "ou.toml"
    cfg.write_text(LINEAR_CFG.replace('name = "linear_test"',
                                      'name = "ou_periodic"'))
    out = tmp_path / "out"
    result = invoke(runner, str(cfg), out, "example")
    doc = read_json(out, "example_summary.json")["results"]
    assert doc["system"] == "ou_periodic"
    assert doc["pullback"]["converged"] is True
    assert doc["pullback"]["oracle_sup_error"] < 0.05
    assert doc["averaged_drift"]["route_gap_over_se"] < 6.0
    assert "two-route gap" in result.output


def test_invalid_configuration_exits_nonzero(runner, tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[system]\ntau = 1.0005\n")
    result = runner.invoke(main, ["simulate", "--config", str(cfg)])
    assert result.exit_code != 0
    assert "configuration invalid" in result.output
    assert "system.tau" in result.output


def test_stage_failures_name_the_stage(runner, tmp_path):
    cfg = tmp_path / "hard.toml"
    cfg.write_text(LINEAR_CFG.replace("k_max = 15", "k_max = 2")
                   .replace("tol = 1e-3", "tol = 1e-12"))
    out = tmp_path / "out"
    result = runner.invoke(main, ["measure", "--config", str(cfg),
                                  "--out", str(out)])
    assert result.exit_code != 0
    assert "stage 'measure' failed" in result.output
