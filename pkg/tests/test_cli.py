"""Command-line interface: CSV round trips, config precedence, exit codes,
and byte-stable outputs."""
import json

import numpy as np
import pytest

from itrshift.calibrate import MomentMap
from itrshift.cli import INVALID, NUMERICAL, OK, main
from itrshift.crossfit import NuisanceSpec, fit_nuisances, required_nuisances
from itrshift.data import (
    LinearRule,
    SourceSample,
    TargetSample,
    write_source_csv,
    write_target_csv,
)
from itrshift.value import Horizon, build_decompositions

ETA = "0.3,1.0,-0.4,0.2"


@pytest.fixture(scope="module")
def csv_pair(pair, tmp_path_factory):
    source, target = pair
    root = tmp_path_factory.mktemp("cli_data")
    src, tgt = str(root / "source.csv"), str(root / "target.csv")
    write_source_csv(src, source)
    write_target_csv(tgt, target)
    return source, target, src, tgt


@pytest.fixture(scope="module")
def ga_ini(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli_cfg") / "run.ini"
    path.write_text("[run]\nseed = 11\n\n[ga]\npopulation = 18\ngenerations = 6\nbound = 6\n")
    return str(path)


def load_report(path):
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def test_fit_reproduces_the_in_memory_estimate(csv_pair, tmp_path):
    source, target, src, tgt = csv_pair
    report = str(tmp_path / "fit.json")
    rc = main([
        "fit", "--source", src, "--target", tgt, "--eta", ETA,
        "--measure", "survival", "--horizon", "1.5",
        "--estimators", "acw,naive", "--report", report,
    ])
    assert rc == OK
    payload = load_report(report)

    spec = NuisanceSpec(calibration_moments=MomentMap())
    nuis = fit_nuisances(source, target, spec, required_nuisances(("acw", "naive")))
    decs = build_decompositions(source, target, nuis, Horizon(1.5), ("acw", "naive"))
    rule = LinearRule(np.array([0.3, 1.0, -0.4, 0.2]))
    d_src, d_tgt = rule.decide(source.x), rule.decide(target.x)
    for kind in ("acw", "naive"):
        want = decs[kind].estimate(d_src, d_tgt)
        body = payload["estimates"][kind]
        assert body["value"] == pytest.approx(want.value, abs=1e-12)
        assert body["se"] == pytest.approx(want.se, abs=1e-12)
        assert body["ci"][0] <= body["value"] <= body["ci"][1]
        assert 0.0 <= body["reported"] <= 1.0
    assert payload["rule"]["searched"] is False
    assert payload["data"] == {"n": source.n, "m": target.m, "p": 3}


def test_fit_prints_a_table(csv_pair, tmp_path, capsys):
    _, _, src, tgt = csv_pair
    rc = main([
        "fit", "--source", src, "--target", tgt, "--eta", ETA,
        "--measure", "survival", "--horizon", "1.5", "--estimators", "naive",
    ])
    out = capsys.readouterr().out
    assert rc == OK
    assert "rule coefficients:" in out and "(given)" in out
    assert "estimator" in out and "naive" in out


def test_searched_fit_report_is_reproducible(csv_pair, ga_ini, tmp_path):
    _, _, src, tgt = csv_pair
    argv = [
        "fit", "--source", src, "--target", tgt, "--config", ga_ini,
        "--measure", "rmst", "--horizon", "2.0", "--estimators", "acw",
    ]
    reports = []
    for name in ("a.json", "b.json"):
        path = str(tmp_path / name)
        assert main(argv + ["--report", path]) == OK
        payload = load_report(path)
        payload.pop("runtime_seconds")
        payload.pop("created_utc")
        reports.append(payload)
    assert reports[0] == reports[1]
    assert reports[0]["rule"]["searched"] is True
    # restricted-mean values are reported as-is, with no probability clipping
    body = reports[0]["estimates"]["acw"]
    assert body["reported"] == body["value"]


def test_flags_override_the_config_file(csv_pair, ga_ini, tmp_path):
    _, _, src, tgt = csv_pair
    base = [
        "fit", "--source", src, "--target", tgt, "--config", ga_ini,
        "--eta", ETA, "--measure", "survival", "--horizon", "1.0",
        "--estimators", "naive",
    ]
    first = str(tmp_path / "ini_seed.json")
    assert main(base + ["--report", first]) == OK
    assert load_report(first)["config"]["run.seed"] == "11"
    second = str(tmp_path / "flag_seed.json")
    assert main(base + ["--seed", "9", "--report", second]) == OK
    config = load_report(second)["config"]
    assert config["run.seed"] == "9"
    assert config["run.horizon"] == "1.0"
    assert config["run.estimators"] == "naive"
    assert config["crossfit.k"] == "1"


def test_search_command_reports_the_learned_rule(csv_pair, ga_ini, tmp_path, capsys):
    _, _, src, tgt = csv_pair
    report = str(tmp_path / "search.json")
    rc = main([
        "search", "--source", src, "--target", tgt, "--config", ga_ini,
        "--kind", "dr_source", "--measure", "rmst", "--horizon", "2.0",
        "--report", report,
    ])
    assert rc == OK
    assert "best rule for dr_source" in capsys.readouterr().out
    payload = load_report(report)
    eta = payload["rule"]["eta"]
    assert len(eta) == 4 and abs(eta[-1]) == 1.0
    assert payload["search"]["n_evaluations"] == 18 + 6 * (18 - 2)
    assert np.isfinite(payload["estimates"]["dr_source"]["value"])


def test_bootstrap_command_bookkeeping(csv_pair, tmp_path):
    _, _, src, tgt = csv_pair
    report = str(tmp_path / "boot.json")
    rc = main([
        "bootstrap", "--source", src, "--target", tgt, "--kind", "naive",
        "--eta", ETA, "--b", "4", "--measure", "survival", "--horizon", "1.5",
        "--boot-seed", "9", "--workers", "1", "--report", report,
    ])
    assert rc == OK
    payload = load_report(report)
    boot = payload["bootstrap"]
    assert boot["replicates"] == 4
    assert boot["completed"] + boot["dropped"] == 4
    assert len(boot["percentile_ci"]) == 2
    body = payload["estimates"]["naive"]
    assert body["se"] > 0.0
    assert body["ci"][0] < body["ci"][1]


def test_fit_accepts_cross_fitting(csv_pair, tmp_path):
    _, _, src, tgt = csv_pair
    report = str(tmp_path / "folds.json")
    rc = main([
        "fit", "--source", src, "--target", tgt, "--eta", ETA,
        "--measure", "survival", "--horizon", "1.5", "--estimators", "dr_source",
        "--folds", "2", "--seed", "3", "--report", report,
    ])
    assert rc == OK
    payload = load_report(report)
    assert payload["config"]["crossfit.k"] == "2"
    assert np.isfinite(payload["estimates"]["dr_source"]["value"])


def test_simulate_writes_stable_tables(ga_ini, tmp_path):
    out_a, rep_a = str(tmp_path / "a.csv"), str(tmp_path / "a_reps.csv")
    out_b, rep_b = str(tmp_path / "b.csv"), str(tmp_path / "b_reps.csv")
    argv = [
        "simulate", "--scenario", "tttt", "--reps", "1", "--seed", "7",
        "--population", "20000", "--target-size", "400", "--oracle-size", "4000",
        "--estimators", "naive,acw", "--measure", "survival", "--horizon", "2.0",
        "--workers", "1", "--config", ga_ini,
    ]
    report = str(tmp_path / "sim.json")
    assert main(argv + ["--out", out_a, "--replicates-out", rep_a, "--report", report]) == OK

    with open(out_a, encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    assert lines[0] == "scenario,estimator,bias,sd,mean_se,coverage_pct,pcd_pct,n_reps"
    assert len(lines) == 3
    assert lines[1].startswith("tttt,naive,") and lines[2].startswith("tttt,acw,")
    assert all(line.endswith(",1") for line in lines[1:])

    with open(rep_a, encoding="utf-8") as handle:
        rep_lines = handle.read().splitlines()
    assert rep_lines[0] == (
        "replicate,estimator,value,se,true_value,covered,pcd,eta_0,eta_1,eta_2,eta_3"
    )
    assert len(rep_lines) == 3

    table = load_report(report)["table"]
    assert set(table) == {"naive", "acw"}
    for body in table.values():
        assert body["n_reps"] == 1
        assert 0.0 <= body["pcd_pct"] <= 100.0

    # same seed, fresh output paths: the tables come back byte for byte
    assert main(argv + ["--out", out_b, "--replicates-out", rep_b]) == OK
    with open(out_a, "rb") as a, open(out_b, "rb") as b:
        assert a.read() == b.read()
    with open(rep_a, "rb") as a, open(rep_b, "rb") as b:
        assert a.read() == b.read()


def test_unknown_scenario_is_invalid(capsys):
    rc = main(["simulate", "--scenario", "zz", "--reps", "1"])
    assert rc == INVALID
    assert "scenario" in capsys.readouterr().err


def test_missing_column_is_named(csv_pair, tmp_path, capsys):
    _, _, src, _ = csv_pair
    bad = tmp_path / "target.csv"
    bad.write_text("x1,x2,x3,weight\n0.1,0.2,0.3,2.0\n")
    rc = main([
        "fit", "--source", src, "--target", str(bad), "--eta", ETA,
        "--measure", "survival", "--horizon", "1.0", "--estimators", "naive",
    ])
    assert rc == INVALID
    assert "design_weight" in capsys.readouterr().err


def test_infeasible_calibration_exits_numerical(tmp_path, capsys):
    rng = np.random.default_rng(5)
    n = 60
    t = rng.exponential(size=n)
    c = rng.exponential(size=n) * 2.0
    source = SourceSample(
        rng.normal(size=(n, 3)),
        (rng.random(n) < 0.5).astype(float),
        np.minimum(t, c),
        (t <= c).astype(float),
    )
    # target covariates sit 60 standard deviations away: no reweighting of the
    # source can match those moments
    target = TargetSample(rng.normal(loc=60.0, size=(40, 3)), np.ones(40))
    src, tgt = str(tmp_path / "s.csv"), str(tmp_path / "t.csv")
    write_source_csv(src, source)
    write_target_csv(tgt, target)
    rc = main([
        "fit", "--source", src, "--target", tgt, "--eta", ETA,
        "--measure", "survival", "--horizon", "1.0", "--estimators", "acw",
    ])
    assert rc == NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.startswith("itr ")
