#!/usr/bin/env python3
"""
End-to-end tests of the command-line interface
"""
import csv
import json
import os

import pytest

from app import EXIT_ERROR, EXIT_OK, run_cli
from main import main
from services.region_io import read_vertices
from conftest import scenario_doc


def _k1_doc(name="cli_k1"):
    return scenario_doc(name, rates={"r1": 200.0, "r2": 200.0, "k": 1})


def _mu_doc(name="cli_mu"):
    return scenario_doc(name, kind="mu", sweep={"grid": 3, "epsilon": 0.05})


def test_validate_config(write_doc, capsys):
    path = write_doc(_k1_doc())
    assert main(["validate-config", path]) == EXIT_OK
    assert "OK cli_k1 (ss)" in capsys.readouterr().out


def test_invalid_config_is_an_error(write_doc, tmp_path):
    doc = _k1_doc("broken")
    doc["rates"] = {"r1": 400.0, "r2": 150.0, "k": 2}
    assert run_cli(["validate-config", write_doc(doc)]) == EXIT_ERROR
    assert run_cli(["validate-config", str(tmp_path / "missing.json")]) == EXIT_ERROR


def test_region_writes_vertices_and_summary(write_doc, tmp_path):
    out = str(tmp_path / "out")
    assert run_cli(["region", write_doc(_k1_doc()), "--mode", "approx", "--out", out]) == EXIT_OK

    with open(os.path.join(out, "cli_k1_approx_summary.json")) as f:
        summary = json.load(f)
    assert summary["mode"] == "approx"
    assert summary["unit"] == "kbps/RB"

    coset, records = read_vertices(os.path.join(out, "cli_k1_approx_vertices.csv"))
    assert len(records) == summary["vertex_count"]
    assert coset.dim == 2
    assert all(len(r.alpha) == 4 and r.policy.startswith("G") for r in records)


def test_exact_region_with_grid_override(write_doc, tmp_path):
    out = str(tmp_path / "out")
    assert run_cli(["region", write_doc(_k1_doc()), "--mode", "exact", "--grid", "3", "--out", out]) == EXIT_OK
    with open(os.path.join(out, "cli_k1_exact_summary.json")) as f:
        summary = json.load(f)
    assert summary["points_evaluated"] == 6 * 3 ** 4


def test_region_errors_map_to_exit_code(write_doc, tmp_path):
    path = write_doc(_k1_doc())
    out = str(tmp_path / "out")
    assert run_cli(["region", path, "--mode", "reduced", "--out", out]) == EXIT_ERROR
    assert run_cli(["region", path, "--mode", "exact", "--budget", "10", "--out", out]) == EXIT_ERROR


def test_compare_reports_containment(write_doc, tmp_path):
    out = str(tmp_path / "out")
    assert run_cli(["compare", write_doc(_k1_doc()), "--out", out]) == EXIT_OK
    with open(os.path.join(out, "cli_k1_compare_report.json")) as f:
        report = json.load(f)
    assert report["verdict"] == "pass"
    assert report["reports"][0]["outer_holds"]
    assert report["reports"][0]["inner_holds"]
    assert report["reports"][0]["bound_holds"]
    with open(os.path.join(out, "cli_k1_compare_overlay.csv"), newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["distance", "source", "policy", "mu_s", "mu_u"]
    assert {r[1] for r in rows[1:]} == {"exact", "approx"}


def test_invalid_override_is_a_config_error(write_doc, tmp_path, caplog):
    path = write_doc(_k1_doc())
    out = str(tmp_path / "out")
    with caplog.at_level("ERROR"):
        assert run_cli(["region", path, "--mode", "exact", "--grid", "1", "--out", out]) == EXIT_ERROR
    assert "sweep.grid" in caplog.text
    assert run_cli(["region", write_doc(_mu_doc()), "--mode", "epsilon", "--epsilon", "-0.1", "--out", out]) == EXIT_ERROR
    assert run_cli(["compare", path, "--grid", "0", "--out", out]) == EXIT_ERROR


def test_compare_checks_every_policy_for_k2(write_doc, tmp_path):
    out = str(tmp_path / "out")
    doc = scenario_doc("cli_k2")
    assert run_cli(["compare", write_doc(doc), "--out", out]) == EXIT_OK
    with open(os.path.join(out, "cli_k2_compare_report.json")) as f:
        report = json.load(f)
    entry = report["reports"][0]
    assert report["verdict"] == "pass"
    assert entry["outer_holds"] and entry["inner_holds"] and entry["bound_holds"]
    assert entry["measured_gap"] <= entry["epsilon_bound"] + entry["gap_tolerance"]


def test_multi_user_region_modes(write_doc, tmp_path):
    path = write_doc(_mu_doc())
    out = str(tmp_path / "out")
    for mode in ("exact", "reduced", "epsilon"):
        assert run_cli(["region", path, "--mode", mode, "--out", out]) == EXIT_OK
    with open(os.path.join(out, "cli_mu_epsilon_summary.json")) as f:
        summary = json.load(f)
    assert summary["k0"] == 3
    assert summary["canonical"] is False
    assert summary["average_service_rate"] > 0
    assert run_cli(["region", path, "--mode", "approx", "--out", out]) == EXIT_ERROR


def test_multi_user_compare(write_doc, tmp_path):
    out = str(tmp_path / "out")
    assert run_cli(["compare", write_doc(_mu_doc()), "--out", out]) == EXIT_OK
    with open(os.path.join(out, "cli_mu_compare_report.json")) as f:
        report = json.load(f)
    assert report["verdict"] == "pass"
    assert report["k0"] == 3


def test_k0_profile(write_doc, tmp_path):
    doc = _mu_doc("cli_k0")
    doc["sweep"] = {"distances": [100.0, 350.0], "epsilons": [0.01, 0.1]}
    out = str(tmp_path / "out")
    assert run_cli(["k0", write_doc(doc), "--out", out]) == EXIT_OK
    with open(os.path.join(out, "cli_k0_k0_profile.csv"), newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["distance", "epsilon", "p_s", "p_d", "k0"]
    assert len(rows) == 5


def test_simulate_coupling_comparison(write_doc, tmp_path):
    doc = scenario_doc(
        "cli_sim",
        simulation={"policy": 1, "alpha": [0.5, 0.5, 0.5, 0.5], "coupling": "both"},
    )
    out = str(tmp_path / "out")
    code = run_cli(["simulate", write_doc(doc), "--seeds", "1", "2", "--horizon", "20000", "--out", out])
    assert code == EXIT_OK
    with open(os.path.join(out, "cli_sim_simulate_report.json")) as f:
        report = json.load(f)
    assert report["coupling_gain"] > 0
    assert len(report["runs"]["relayed"]) == 2
    assert os.path.exists(os.path.join(out, "cli_sim_full_buffer_simulation.csv"))


def test_unknown_command_exits():
    with pytest.raises(SystemExit):
        run_cli(["fly"])
