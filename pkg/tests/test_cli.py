from __future__ import annotations

import json

import pytest

from dauval import __version__
from dauval.cli import main
from dauval.synthetic import bundled_paths

BUNDLED_INI = bundled_paths()[0].with_name("synthetic.ini")


@pytest.fixture
def small_ini(tmp_path):
    dau, fin = bundled_paths()
    ini = tmp_path / "small.ini"
    ini.write_text(f"[paths]\ndau_csv = {dau}\nfinancials_csv = {fin}\n[simulation]\nn_scenarios = 20\n")
    return ini


def test_run_and_report(small_ini, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", "--config", str(small_ini), "--out", str(out)]) == 0
    assert "Base case" in capsys.readouterr().out
    assert (out / "report.md").is_file()
    assert main(["report", "--config", str(small_ini), "--out", str(out), "--quiet"]) == 0


def test_global_flags_either_side(small_ini, tmp_path):
    out = tmp_path / "o"
    assert main(["--seed", "7", "--config", str(small_ini), "simulate", "--out", str(out), "--quiet"]) == 0
    assert json.loads((out / "simulate" / "scenarios.json").read_text())["master_seed"] == 7
    assert main(["simulate", "--config", str(small_ini), "--seed", "8", "--out", str(out), "--quiet"]) == 0
    assert json.loads((out / "simulate" / "scenarios.json").read_text())["master_seed"] == 8


def test_simulate_flags(small_ini, tmp_path):
    out = tmp_path / "o"
    args = ["simulate", "--config", str(small_ini), "--out", str(out), "--quiet",
            "--horizon", "7400", "--scenarios", "3", "--lambda", "0.1", "--full-csv"]
    assert main(args) == 0
    meta = json.loads((out / "simulate" / "scenarios.json").read_text())
    assert (meta["horizon_days"], meta["n_scenarios"], meta["lambda_per_day"]) == (7400, 3, 0.1)
    lines = (out / "simulate" / "trajectories.csv").read_text().splitlines()
    assert lines[0] == "scenario_index,day,dau" and len(lines) == 3 * 7400 + 1


def test_direct_value(small_ini, tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", str(small_ini), "--out", str(out), "--quiet"]) == 0
    direct = tmp_path / "v"
    args = ["value", "--scenario-set", str(out / "simulate"), "--revenue-fit", str(out / "fit_revenue" / "revenue_fit.json"),
            "--out", str(direct), "--quiet"]
    assert main(args) == 0
    assert (direct / "valuation.json").read_bytes() == (out / "value" / "valuation.json").read_bytes()
    assert main(args[:-1] + ["--margin", "0.3", "--quiet"]) == 0
    doubled = json.loads((direct / "valuation.json").read_text())["scenarios"]["base"]["mean"]
    base = json.loads((out / "value" / "valuation.json").read_text())["scenarios"]["base"]["mean"]
    assert doubled == pytest.approx(2 * base, rel=1e-12)


def test_validation_exit_code(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == 1
    assert "validation error" in capsys.readouterr().err
    assert main(["value", "--scenario-set", str(tmp_path), "--quiet"]) == 1
    assert main(["report", "--out", str(tmp_path / "nothing"), "--quiet"]) == 1


def test_stage_failure_exit_code(tmp_path, capsys):
    dau, _ = bundled_paths()
    fin = tmp_path / "fin.csv"
    fin.write_text("quarter_end,revenue_usd,net_income_usd\n2011-03-31,1,0\n")
    ini = tmp_path / "c.ini"
    ini.write_text(f"[paths]\ndau_csv = {dau}\nfinancials_csv = {fin}\n[simulation]\nn_scenarios = 2\n")
    assert main(["fit-revenue", "--config", str(ini), "--out", str(tmp_path / "o"), "--quiet"]) == 2
    assert "fit_revenue" in capsys.readouterr().err


def test_env_config(small_ini, tmp_path, monkeypatch):
    monkeypatch.setenv("DAUVAL_CONFIG", str(small_ini))
    out = tmp_path / "o"
    assert main(["diagnose-innovation", "--out", str(out), "--quiet", "--max-lag", "3"]) == 0
    report = json.loads((out / "diagnose_innovation" / "innovation.json").read_text())["reports"]["top_n"]
    assert len(report["autocorr"]) == 4


def test_stage_subcommands(small_ini, tmp_path, capsys):
    out = tmp_path / "o"
    for cmd in ("ingest", "fit-tails", "fit-revenue"):
        assert main([cmd, "--config", str(small_ini), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "fit_tails" in text and "cached" in text


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert __version__ in capsys.readouterr().out
