import json
import os
import subprocess
import sys

import numpy as np
import pytest

from repmart import cli
from repmart.metrics import METHOD_COLUMNS, read_report_rows


def run(*argv):
    return cli.main([str(a) for a in argv])


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture
def call_data(tmp_path):
    out = tmp_path / "data"
    assert run("simulate", "--portfolio", "european_call", "--T", 5, "--n", 1000, "--seed", 3, "--out", out) == 0
    return out


def test_simulate_is_deterministic_and_shaped(tmp_path, call_data):
    again = tmp_path / "again"
    assert run("simulate", "--portfolio", "european_call", "--T", 5, "--n", 1000, "--seed", 3, "--out", again) == 0
    for name in ("drivers.csv", "cashflows.csv", "manifest.json"):
        assert _read(call_data / name) == _read(again / name)
    x = np.loadtxt(call_data / "drivers.csv", delimiter=",", skiprows=1)
    assert x.shape == (1000, 15)
    head = (call_data / "drivers.csv").read_text().splitlines()[0].split(",")
    assert head[:4] == ["x_t1_d1", "x_t1_d2", "x_t1_d3", "x_t2_d1"]
    cf = (call_data / "cashflows.csv").read_text().splitlines()[0]
    assert cf == "path_id,zeta_t1,zeta_t2,zeta_t3,zeta_t4,zeta_t5,terminal"


def test_config_hash_tracks_esg_parameters(tmp_path, call_data):
    cfg = tmp_path / "esg.json"
    cfg.write_text(json.dumps({"sigma_eq": 0.25}))
    out = tmp_path / "other"
    assert run("simulate", "--portfolio", "european_call", "--config", cfg, "--n", 10, "--seed", 3, "--out", out) == 0
    a = json.loads((call_data / "manifest.json").read_text())
    b = json.loads((out / "manifest.json").read_text())
    assert a["config_hash"] != b["config_hash"]
    assert b["esg"]["sigma_eq"] == 0.25


def test_fit_evaluate_and_warm_start(tmp_path, call_data):
    cfg = tmp_path / "fit.json"
    cfg.write_text(json.dumps({"family": "poly_ldr", "p": 3, "delta": 3}))
    m1 = tmp_path / "m1"
    assert run("fit", "--data", call_data, "--config", cfg, "--out", m1) == 0
    info1 = json.loads((m1 / "fit_manifest.json").read_text())
    log_lines = (m1 / "training_log.csv").read_text().splitlines()
    assert log_lines[0] == "iteration,loss" and len(log_lines) > 2
    m2 = tmp_path / "m2"
    assert run("fit", "--data", call_data, "--config", cfg, "--warm-start", m1 / "model.json", "--out", m2) == 0
    info2 = json.loads((m2 / "fit_manifest.json").read_text())
    assert info2["diagnostics"]["residual"] == pytest.approx(info1["diagnostics"]["residual"], rel=1e-6)
    ev = tmp_path / "ev"
    assert run("evaluate", "--model", m1 / "model.json", "--data", call_data, "--t", 1, "--out", ev) == 0
    risk = json.loads((ev / "risk.json").read_text())
    assert risk["es"] >= risk["var"]
    assert (ev / "values.csv").read_text().startswith("path_id,value\n")
    assert run("evaluate", "--model", m1 / "model.json", "--data", call_data, "--t", 9, "--out", ev) == 2


def test_corrupt_csv_names_row_and_column(tmp_path, call_data, capsys):
    lines = (call_data / "drivers.csv").read_text().splitlines()
    cells = lines[2].split(",")
    cells[0] = "abc"
    lines[2] = ",".join(cells)
    (call_data / "drivers.csv").write_text("\n".join(lines) + "\n")
    assert run("fit", "--data", call_data, "--out", tmp_path / "m") == 2
    err = capsys.readouterr().err
    assert "row 3, column x_t1_d1" in err


def test_basis_cap_refuses_huge_full_hermite(tmp_path, capsys):
    data = tmp_path / "d40"
    assert run("simulate", "--portfolio", "european_call", "--T", 40, "--n", 20, "--out", data) == 0
    assert run("fit", "--data", data, "--out", tmp_path / "m") == 2
    err = capsys.readouterr().err
    assert "302,621" in err and "20,000" in err


def test_dimension_mismatch_is_validation_error(tmp_path, call_data):
    cfg = tmp_path / "fit.json"
    cfg.write_text(json.dumps({"dims": {"T": 4, "d": 3}}))
    assert run("fit", "--data", call_data, "--config", cfg, "--out", tmp_path / "m") == 2


def test_numerical_failure_exit_code(tmp_path):
    data = tmp_path / "small"
    assert run("simulate", "--portfolio", "european_call", "--n", 20, "--out", data) == 0
    # 816 features from 20 samples: underdetermined without the override
    assert run("fit", "--data", data, "--out", tmp_path / "m") == 3


def _plan(tmp_path, methods, R=1, sizes=(300,)):
    plan = dict(portfolio="european_call", T=5, R=R, sample_sizes=list(sizes), seed=11, methods=methods,
                benchmark=dict(kind="closed_form", n_validation=5000, t=1))
    path = tmp_path / "plan.json"
    path.write_text(json.dumps(plan))
    return path


def test_experiment_single_method(tmp_path):
    plan = _plan(tmp_path, [dict(name="regress-later poly", kind="regress_later", family="full_hermite",
                                 fit={"delta": 2})])
    out = tmp_path / "exp"
    assert run("experiment", "--plan", plan, "--out", out) == 0
    rows = read_report_rows(out / "report.csv")
    assert {(r["method"], r["samples"]) for r in rows} == {("regress-later poly", 300)}
    assert (out / "boxplot.csv").read_text().startswith("method,maturity,samples,repetition,rel_es_error")
    assert "mape_es" in (out / "tables.txt").read_text()
    assert run("report", "--out", out) == 0


def _stable_rows(out):
    # wall-clock seconds are the only non-reproducible column
    return [dict(r, value=repr(r["value"])) for r in read_report_rows(out / "report.csv") if r["metric"] != "seconds"]


def test_experiment_resume_reproduces_report(tmp_path):
    methods = [dict(name=n, kind=k, family=f, fit=fit) for n, k, f, fit in [
        ("nMC", "nested_mc", "full_hermite", {}),
        ("regress-now poly", "regress_now", "full_hermite", {"delta": 2}),
        ("regress-later poly", "regress_later", "full_hermite", {"delta": 2}),
    ]]
    plan = _plan(tmp_path, methods, R=2, sizes=(300, 600))
    out = tmp_path / "exp"
    assert run("experiment", "--plan", plan, "--out", out, "--threads", 2) == 0
    first = _stable_rows(out)
    for name in sorted(os.listdir(out / "cells"))[:3]:
        os.remove(out / "cells" / name)
    assert run("experiment", "--plan", plan, "--out", out, "--resume") == 0
    second = _stable_rows(out)
    assert first == second
    head = (out / "tables.txt").read_text().splitlines()[1]
    present = [c for c in METHOD_COLUMNS if c in head]
    assert present == ["nMC", "regress-now poly", "regress-later poly"]
    assert [head.index(c) for c in present] == sorted(head.index(c) for c in present)


def test_experiment_partial_failure_exit_code(tmp_path):
    plan = _plan(tmp_path, [dict(name="regress-later poly", kind="regress_later", family="full_hermite")],
                 sizes=(50,))
    assert run("experiment", "--plan", plan, "--out", tmp_path / "exp") == 4


def test_resume_rejects_changed_plan(tmp_path):
    m = [dict(name="regress-later poly", kind="regress_later", family="full_hermite", fit={"delta": 1})]
    out = tmp_path / "exp"
    assert run("experiment", "--plan", _plan(tmp_path, m), "--out", out) == 0
    assert run("experiment", "--plan", _plan(tmp_path, m, R=2), "--out", out, "--resume") == 2


def test_bad_plan_and_threads_env(tmp_path, monkeypatch):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"portfolio": "bond"}))
    assert run("experiment", "--plan", bad, "--out", tmp_path / "x") == 2
    monkeypatch.setenv("REPMART_THREADS", "3")
    assert cli.resolve_threads(None) == 3
    assert cli.resolve_threads(2) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "repmart", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("simulate", "fit", "evaluate", "experiment", "report"):
        assert sub in proc.stdout
