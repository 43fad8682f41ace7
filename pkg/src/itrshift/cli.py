"""Command-line entry points.

Four subcommands cover the workflow: ``simulate`` runs a replication study on
the synthetic generative model, ``fit`` evaluates estimators on CSV data,
``search`` learns a treatment rule from CSV data, and ``bootstrap`` attaches
resampling uncertainty to a fitted value. Options can come from an INI config
file, with command-line flags taking precedence; every run echoes the
settings it actually used so a report can be reproduced byte for byte (the
``runtime_seconds`` and ``created_utc`` fields are the only volatile ones).

Exit codes: 0 on success, 2 for bad input or configuration, 3 when a
numerical routine fails (separation, infeasible calibration, a singular
solve, and similar).
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
import time
from dataclasses import fields as _dc_fields

import numpy as np

from . import __version__
from .calibrate import MomentMap
from .crossfit import (
    NuisanceSpec,
    PipelineValue,
    crossfit_decompositions,
    fit_nuisances,
    required_nuisances,
)
from .data import (
    DegenerateWeights,
    FoldFitFailure,
    InfeasibleCalibration,
    ItrError,
    LinearRule,
    ReplicateFailure,
    Separation,
    SingularHessian,
    SourceSample,
    TargetSample,
    ZeroSurvival,
    read_source_csv,
    read_target_csv,
    with_intercept,
)
from .inference import bootstrap_value, wald_ci
from .search import SearchConfig, search_rule
from .simulate import SCENARIOS, StudyConfig, StudyResult, run_study
from .value import ALL_KINDS, Horizon, build_decompositions

OK = 0
INVALID = 2
NUMERICAL = 3

# Failures of the numerics themselves, as opposed to bad input. Checked before
# the generic ItrError clause so the exit code distinguishes the two.
_NUMERICAL_ERRORS = (
    Separation,
    SingularHessian,
    InfeasibleCalibration,
    DegenerateWeights,
    ZeroSurvival,
    FoldFitFailure,
    ReplicateFailure,
    np.linalg.LinAlgError,
    FloatingPointError,
)

_DEFAULT_SEED = 1729
_TABLE_KINDS = "naive,ipsw,cw_ipw,cw_or,or_target,acw"


# ---------------------------------------------------------------------------
# settings: config file merged with flags, with an echo of what was used
# ---------------------------------------------------------------------------


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


class Settings:
    """Dotted-key option store.

    Values arrive as strings (INI section.key entries, then flag overrides)
    and are pulled out through :meth:`get`, which casts, validates, and keeps
    a record of every resolved value for the config echo in reports.
    """

    def __init__(self) -> None:
        self._raw: dict[str, str] = {}
        self.used: dict[str, str] = {}

    def load_file(self, path: str) -> None:
        parser = configparser.ConfigParser()
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
        for section in parser.sections():
            for key, value in parser.items(section):
                self._raw[f"{section}.{key}".lower()] = value

    def set_flag(self, key: str, value) -> None:
        if value is None:
            return
        if isinstance(value, bool):
            value = "true" if value else "false"
        self._raw[key] = str(value)

    def get(self, key, default=None, cast=str, choices=None):
        raw = self._raw.get(key)
        if raw is None:
            value = default
        else:
            try:
                value = cast(raw)
            except ValueError as exc:
                raise ValueError(f"bad value for {key}: {raw!r} ({exc})") from exc
        if value is not None:
            if choices is not None and value not in choices:
                raise ValueError(
                    f"{key} must be one of {', '.join(map(str, choices))}; got {value!r}"
                )
            self.used[key] = str(value)
        return value

    def note(self, key: str, value) -> None:
        """Record a resolved value that did not come through :meth:`get`."""
        self.used[key] = str(value)


def _split_csv_list(raw: str) -> tuple[str, ...]:
    items = tuple(part.strip() for part in raw.split(",") if part.strip())
    if not items:
        raise ValueError("empty list")
    return items


def _parse_eta(raw: str) -> np.ndarray:
    try:
        values = [float(part) for part in raw.split(",")]
    except ValueError as exc:
        raise ValueError(f"--eta expects comma-separated numbers: {exc}") from exc
    return np.asarray(values, dtype=np.float64)


def _resolve_workers(settings: Settings) -> int:
    workers = settings.get("run.workers", cast=int)
    if workers is None:
        env = os.environ.get("ITR_WORKERS", "").strip()
        workers = int(env) if env else (os.cpu_count() or 1)
    workers = max(1, workers)
    settings.note("run.workers", workers)
    return workers


def _resolve_measure(settings: Settings, default_horizon: float | None = None) -> Horizon:
    measure = settings.get(
        "run.measure", default="rmst", choices=("rmst", "survival")
    )
    horizon = settings.get("run.horizon", default=default_horizon, cast=float)
    if horizon is None:
        raise ValueError("a horizon is required; pass --horizon or set run.horizon")
    settings.note("run.horizon", horizon)
    return Horizon(time=horizon, rmst=measure == "rmst")


def _resolve_kinds(settings: Settings, default: str = "acw") -> tuple[str, ...]:
    kinds = settings.get("run.estimators", default=default, cast=_split_csv_list)
    if isinstance(kinds, str):
        kinds = _split_csv_list(kinds)
    unknown = [k for k in kinds if k not in ALL_KINDS]
    if unknown:
        raise ValueError(
            f"unknown estimator(s) {', '.join(unknown)}; options: {', '.join(ALL_KINDS)}"
        )
    settings.note("run.estimators", ",".join(kinds))
    return kinds


_BINARY_LEARNERS = ("logistic", "kernel")
_SURVIVAL_LEARNERS = ("cox", "kernel")


def _resolve_spec(settings: Settings) -> NuisanceSpec:
    """Nuisance recipe for CSV-data commands, from calibration/crossfit keys."""
    base = settings.get(
        "calibration.moments", default="first", choices=("first", "first2", "none")
    )
    transforms_raw = settings.get("calibration.transforms", cast=_split_csv_list)
    transforms = tuple(transforms_raw) if transforms_raw else ()
    moments = MomentMap(base=base, transforms=transforms)

    family = settings.get(
        "crossfit.learners", default="parametric", choices=("parametric", "kernel")
    )
    kern = family == "kernel"
    spec = NuisanceSpec(
        calibration_moments=moments,
        propensity_learner=settings.get(
            "crossfit.learners.propensity",
            default="kernel" if kern else "logistic",
            choices=_BINARY_LEARNERS,
        ),
        sampling_learner=settings.get(
            "crossfit.learners.sampling",
            default="kernel" if kern else "logistic",
            choices=_BINARY_LEARNERS,
        ),
        censoring_learner=settings.get(
            "crossfit.learners.censoring",
            default="kernel" if kern else "cox",
            choices=_SURVIVAL_LEARNERS,
        ),
        outcome_learner=settings.get(
            "crossfit.learners.outcome",
            default="kernel" if kern else "cox",
            choices=_SURVIVAL_LEARNERS,
        ),
        bandwidth_scale=settings.get("crossfit.bandwidth_scale", default=1.0, cast=float),
    )
    return spec


def _resolve_search(settings: Settings) -> SearchConfig:
    kwargs = {}
    for field in _dc_fields(SearchConfig):
        raw = settings.get(f"ga.{field.name}", cast=str)
        if raw is None:
            continue
        caster = int if isinstance(getattr(SearchConfig, field.name, field.default), int) else float
        try:
            kwargs[field.name] = caster(raw)
        except ValueError as exc:
            raise ValueError(f"bad value for ga.{field.name}: {raw!r}") from exc
    return SearchConfig(**kwargs)


# ---------------------------------------------------------------------------
# report output
# ---------------------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _write_report(path: str | None, payload: dict) -> None:
    if not path:
        return
    text = json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)


def _print_table(header: list[str], rows: list[list[str]]) -> None:
    widths = [len(h) for h in header]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]
    line = "  ".join(h.ljust(w) for h, w in zip(header, widths))
    print(line.rstrip())
    for row in rows:
        cells = [row[0].ljust(widths[0])]
        cells += [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        print("  ".join(cells).rstrip())


def _reported(value: float, horizon: Horizon) -> float:
    """Clip survival probabilities into [0, 1] for display; keep raw otherwise."""
    if horizon.rmst:
        return value
    return min(max(value, 0.0), 1.0)


def _estimate_payload(est, horizon: Horizon, level: float, se=None) -> dict:
    se = est.se if se is None else se
    lo, hi = wald_ci(est.value, se, level)
    return {
        "value": est.value,
        "reported": _reported(est.value, horizon),
        "se": se,
        "ci": [lo, hi],
        "ci_level": level,
    }


def _base_payload(command: str, settings: Settings, started: float) -> dict:
    return {
        "command": command,
        "version": __version__,
        "config": dict(sorted(settings.used.items())),
        "runtime_seconds": round(time.time() - started, 3),
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }


# ---------------------------------------------------------------------------
# shared CSV-data plumbing for fit / search / bootstrap
# ---------------------------------------------------------------------------


def _load_samples(args) -> tuple[SourceSample, TargetSample]:
    source = read_source_csv(args.source)
    target = read_target_csv(args.target, p=source.p)
    return source, target


def _decompositions(source, target, spec, horizon, kinds, n_folds, seed):
    if n_folds > 1:
        return crossfit_decompositions(
            source, target, spec, horizon, kinds, n_folds=n_folds, seed=seed
        )
    nuis = fit_nuisances(source, target, spec, required_nuisances(kinds))
    return build_decompositions(source, target, nuis, horizon, kinds)


def _search_on(dec, source, target, config, seed):
    xs = with_intercept(source.x)
    xt = with_intercept(target.x)

    def value_fn(h: np.ndarray) -> np.ndarray:
        d_src = (xs @ h.T >= 0.0).T.astype(np.float64)
        d_tgt = (xt @ h.T >= 0.0).T.astype(np.float64)
        return dec.batch_values(d_src, d_tgt)

    return search_rule(value_fn, source.p, config, seed)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_fit(args, settings: Settings, started: float) -> int:
    source, target = _load_samples(args)
    horizon = _resolve_measure(settings)
    kinds = _resolve_kinds(settings)
    spec = _resolve_spec(settings)
    seed = settings.get("run.seed", default=_DEFAULT_SEED, cast=int)
    n_folds = settings.get("crossfit.k", default=1, cast=int)
    level = settings.get("bootstrap.level", default=0.95, cast=float)

    decs = _decompositions(source, target, spec, horizon, kinds, n_folds, seed)

    searched = args.eta is None
    if searched:
        ga = _resolve_search(settings)
        rule = _search_on(decs[kinds[0]], source, target, ga, seed).rule
    else:
        rule = LinearRule(_parse_eta(args.eta))

    d_src = rule.decide(source.x)
    d_tgt = rule.decide(target.x)
    estimates = {k: decs[k].estimate(d_src, d_tgt) for k in kinds}

    payload = _base_payload("fit", settings, started)
    payload.update(
        {
            "data": {"n": source.n, "m": target.m, "p": source.p},
            "measure": {"kind": "rmst" if horizon.rmst else "survival", "horizon": horizon.time},
            "rule": {"eta": list(rule.eta), "searched": searched},
            "estimates": {
                k: _estimate_payload(est, horizon, level) for k, est in estimates.items()
            },
        }
    )
    _write_report(args.report, payload)

    print(f"rule coefficients: {', '.join(f'{v:.6g}' for v in rule.eta)}"
          + ("  (searched)" if searched else "  (given)"))
    rows = []
    for k in kinds:
        body = payload["estimates"][k]
        rows.append(
            [
                k,
                f"{body['reported']:.4f}",
                f"{body['se']:.4f}",
                f"[{body['ci'][0]:.4f}, {body['ci'][1]:.4f}]",
            ]
        )
    _print_table(["estimator", "value", "se", f"{int(level * 100)}% ci"], rows)
    return OK


def _cmd_search(args, settings: Settings, started: float) -> int:
    source, target = _load_samples(args)
    horizon = _resolve_measure(settings)
    kind = settings.get("run.kind", default="acw", choices=ALL_KINDS)
    spec = _resolve_spec(settings)
    seed = settings.get("run.seed", default=_DEFAULT_SEED, cast=int)
    n_folds = settings.get("crossfit.k", default=1, cast=int)
    level = settings.get("bootstrap.level", default=0.95, cast=float)
    ga = _resolve_search(settings)

    decs = _decompositions(source, target, spec, horizon, (kind,), n_folds, seed)
    result = _search_on(decs[kind], source, target, ga, seed)
    rule = result.rule
    est = decs[kind].estimate(rule.decide(source.x), rule.decide(target.x))

    payload = _base_payload("search", settings, started)
    payload.update(
        {
            "data": {"n": source.n, "m": target.m, "p": source.p},
            "measure": {"kind": "rmst" if horizon.rmst else "survival", "horizon": horizon.time},
            "rule": {"eta": list(rule.eta), "searched": True},
            "search": {
                "kind": kind,
                "value": result.value,
                "n_evaluations": result.n_evaluations,
                "generations": len(result.history),
            },
            "estimates": {kind: _estimate_payload(est, horizon, level)},
        }
    )
    _write_report(args.report, payload)

    print(f"best rule for {kind}: {', '.join(f'{v:.6g}' for v in rule.eta)}")
    print(
        f"value {payload['estimates'][kind]['reported']:.4f}"
        f"  se {est.se:.4f}"
        f"  after {result.n_evaluations} evaluations"
    )
    return OK


def _cmd_bootstrap(args, settings: Settings, started: float) -> int:
    source, target = _load_samples(args)
    horizon = _resolve_measure(settings)
    kind = settings.get("run.kind", default="acw", choices=ALL_KINDS)
    spec = _resolve_spec(settings)
    seed = settings.get("run.seed", default=_DEFAULT_SEED, cast=int)
    n_folds = settings.get("crossfit.k", default=1, cast=int)
    n_boot = settings.get("bootstrap.b", default=200, cast=int)
    level = settings.get("bootstrap.level", default=0.95, cast=float)
    boot_seed = settings.get("bootstrap.seed", default=seed, cast=int)
    research = settings.get("bootstrap.research_rule", default=False, cast=_bool)
    workers = _resolve_workers(settings)
    ga = _resolve_search(settings)

    decs = _decompositions(source, target, spec, horizon, (kind,), n_folds, seed)
    searched = args.eta is None
    if searched:
        rule = _search_on(decs[kind], source, target, ga, seed).rule
    else:
        rule = LinearRule(_parse_eta(args.eta))
    est = decs[kind].estimate(rule.decide(source.x), rule.decide(target.x))

    pipeline = PipelineValue(
        horizon=horizon,
        kind=kind,
        spec=spec,
        eta=None if research else tuple(rule.eta),
        search=ga if research else None,
        n_folds=n_folds,
        seed=seed,
    )
    boot = bootstrap_value(
        source,
        target,
        pipeline,
        n_boot=n_boot,
        seed=boot_seed,
        level=level,
        workers=workers,
    )
    lo, hi = wald_ci(est.value, boot.se, level)

    payload = _base_payload("bootstrap", settings, started)
    payload.update(
        {
            "data": {"n": source.n, "m": target.m, "p": source.p},
            "measure": {"kind": "rmst" if horizon.rmst else "survival", "horizon": horizon.time},
            "rule": {"eta": list(rule.eta), "searched": searched},
            "estimates": {
                kind: {
                    "value": est.value,
                    "reported": _reported(est.value, horizon),
                    "se": boot.se,
                    "ci": [lo, hi],
                    "ci_level": level,
                }
            },
            "bootstrap": {
                "kind": kind,
                "replicates": n_boot,
                "completed": boot.n_effective,
                "dropped": boot.n_dropped,
                "percentile_ci": list(boot.ci),
                "rule_research": research,
            },
        }
    )
    _write_report(args.report, payload)

    body = payload["estimates"][kind]
    print(
        f"{kind}: value {body['reported']:.4f}, bootstrap se {boot.se:.4f} "
        f"({boot.n_effective} of {n_boot} replicates)"
    )
    print(
        f"{int(level * 100)}% wald ci [{lo:.4f}, {hi:.4f}]; "
        f"percentile ci [{boot.ci[0]:.4f}, {boot.ci[1]:.4f}]"
    )
    return OK


def _summary_rows(result: StudyResult) -> list[list[str]]:
    rows = []
    for kind, summary in result.summary().items():
        rows.append(
            [
                result.config.scenario,
                kind,
                repr(summary.bias),
                repr(summary.sd),
                repr(summary.mean_se),
                repr(summary.coverage),
                repr(summary.agreement),
                str(summary.n_reps),
            ]
        )
    return rows


_TABLE_HEADER = [
    "scenario",
    "estimator",
    "bias",
    "sd",
    "mean_se",
    "coverage_pct",
    "pcd_pct",
    "n_reps",
]


def _write_table_csv(path: str, result: StudyResult) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(_TABLE_HEADER)
        writer.writerows(_summary_rows(result))


def _write_replicates_csv(path: str, result: StudyResult) -> None:
    n_eta = len(result.records[0][0].eta) if result.records else 0
    header = ["replicate", "estimator", "value", "se", "true_value", "covered", "pcd"]
    header += [f"eta_{i}" for i in range(n_eta)]
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for rep_id, records in enumerate(result.records):
            for rec in records:
                row = [
                    str(rep_id),
                    rec.kind,
                    repr(rec.value),
                    repr(rec.se),
                    repr(rec.true_value),
                    str(int(rec.covered)),
                    repr(rec.agreement),
                ]
                row += [repr(float(v)) for v in rec.eta]
                writer.writerow(row)


def _cmd_simulate(args, settings: Settings, started: float) -> int:
    scenario = settings.get("simulate.scenario", choices=SCENARIOS)
    if scenario is None:
        raise ValueError(
            f"a scenario is required; pass --scenario with one of {', '.join(SCENARIOS)}"
        )
    kinds = _resolve_kinds(settings, default=_TABLE_KINDS)
    horizon = _resolve_measure(settings, default_horizon=4.0)
    seed = settings.get("run.seed", default=_DEFAULT_SEED, cast=int)
    workers = _resolve_workers(settings)
    learners = settings.get(
        "simulate.learners", default="parametric", choices=("parametric", "kernel")
    )
    default_folds = 2 if learners == "kernel" else 1
    cfg = StudyConfig(
        scenario=scenario,
        learners=learners,
        kinds=kinds,
        n_reps=settings.get("simulate.reps", default=10, cast=int),
        n_population=settings.get("simulate.population", default=200_000, cast=int),
        m_target=settings.get("simulate.target_size", default=8_000, cast=int),
        censoring_scale=settings.get("simulate.censoring_scale", default=0.04, cast=float),
        horizon=horizon,
        n_folds=settings.get("crossfit.k", default=default_folds, cast=int),
        search=_resolve_search(settings),
        oracle_size=settings.get("simulate.oracle_size", default=100_000, cast=int),
        seed=seed,
        workers=workers,
        ci_level=settings.get("bootstrap.level", default=0.95, cast=float),
        bootstrap_se=settings.get("simulate.bootstrap_se", default=0, cast=int),
    )
    result = run_study(cfg)

    out = settings.get("simulate.out", default="study_table.csv")
    settings.note("simulate.out", out)
    _write_table_csv(out, result)
    stem, ext = os.path.splitext(out)
    replicates_out = settings.get(
        "simulate.replicates_out", default=f"{stem}_replicates{ext or '.csv'}"
    )
    settings.note("simulate.replicates_out", replicates_out)
    _write_replicates_csv(replicates_out, result)

    payload = _base_payload("simulate", settings, started)
    payload.update(
        {
            "measure": {"kind": "rmst" if horizon.rmst else "survival", "horizon": horizon.time},
            "table": {
                kind: {
                    "bias": s.bias,
                    "sd": s.sd,
                    "mean_se": s.mean_se,
                    "coverage_pct": s.coverage,
                    "pcd_pct": s.agreement,
                    "n_reps": s.n_reps,
                }
                for kind, s in result.summary().items()
            },
        }
    )
    _write_report(args.report, payload)

    measure_label = f"rmst({horizon.time:g})" if horizon.rmst else f"S({horizon.time:g})"
    print(
        f"scenario {scenario}, {cfg.n_reps} replicates, {measure_label}, "
        f"{learners} learners, seed {seed}"
    )
    rows = []
    for kind, s in result.summary().items():
        pcd = "" if np.isnan(s.agreement) else f"{s.agreement:.1f}"
        rows.append(
            [
                kind,
                f"{s.bias:+.4f}",
                f"{s.sd:.4f}",
                f"{s.mean_se:.4f}",
                f"{s.coverage:.1f}",
                pcd,
            ]
        )
    _print_table(["estimator", "bias", "sd", "mean_se", "coverage%", "pcd%"], rows)
    print(f"table written to {out}; per-replicate rows in {replicates_out}")
    return OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI file with [section] key = value options")
    parser.add_argument("--seed", type=int, help="master random seed")
    parser.add_argument("--workers", type=int, help="process count (ITR_WORKERS also works)")
    parser.add_argument(
        "--measure", choices=("rmst", "survival"), help="estimand: restricted mean or survival probability"
    )
    parser.add_argument("--horizon", type=float, help="time horizon for the estimand")
    parser.add_argument("--report", help="write a JSON report here")


def _add_data(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--source", required=True, help="source cohort CSV")
    parser.add_argument("--target", required=True, help="target sample CSV")
    parser.add_argument("--folds", type=int, help="cross-fitting folds (1 disables)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="itr",
        description="Learn and evaluate individualized treatment rules for "
        "censored survival data when the deployment population differs from "
        "the study sample.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a synthetic replication study")
    _add_common(sim)
    sim.add_argument("--scenario", help=f"one of {', '.join(SCENARIOS)}")
    sim.add_argument("--reps", type=int, help="number of replicates")
    sim.add_argument("--estimators", help="comma-separated estimator names")
    sim.add_argument("--out", help="summary table CSV path")
    sim.add_argument("--replicates-out", help="per-replicate CSV path")
    sim.add_argument("--population", type=int, help="population size per replicate")
    sim.add_argument("--target-size", type=int, help="target subsample size")
    sim.add_argument("--censoring-scale", type=float, help="censoring hazard scale")
    sim.add_argument("--learners", choices=("parametric", "kernel"), help="nuisance family")
    sim.add_argument("--folds", type=int, help="cross-fitting folds (1 disables)")
    sim.add_argument("--oracle-size", type=int, help="oracle draw for true values")
    sim.add_argument(
        "--bootstrap-se", type=int, help="per-replicate bootstrap SE replicates (0 disables)"
    )
    sim.set_defaults(func=_cmd_simulate)

    fit = sub.add_parser("fit", help="evaluate estimators on CSV data")
    _add_common(fit)
    _add_data(fit)
    fit.add_argument("--estimators", help="comma-separated estimator names")
    fit.add_argument("--eta", help="fixed rule coefficients a0,a1,...,ap (searched if omitted)")
    fit.set_defaults(func=_cmd_fit)

    sea = sub.add_parser("search", help="learn a treatment rule from CSV data")
    _add_common(sea)
    _add_data(sea)
    sea.add_argument("--kind", help="estimator the search maximizes")
    sea.set_defaults(func=_cmd_search)

    boo = sub.add_parser("bootstrap", help="bootstrap uncertainty for a fitted value")
    _add_common(boo)
    _add_data(boo)
    boo.add_argument("--kind", help="estimator to bootstrap")
    boo.add_argument("--eta", help="fixed rule coefficients (searched once if omitted)")
    boo.add_argument("--b", type=int, help="bootstrap replicates")
    boo.add_argument("--level", type=float, help="confidence level")
    boo.add_argument("--boot-seed", type=int, help="resampling seed (defaults to run.seed)")
    boo.add_argument(
        "--research-rule",
        action="store_true",
        default=None,
        help="re-learn the rule inside every replicate",
    )
    boo.set_defaults(func=_cmd_bootstrap)
    return parser


_FLAG_KEYS = {
    "seed": "run.seed",
    "workers": "run.workers",
    "measure": "run.measure",
    "horizon": "run.horizon",
    "estimators": "run.estimators",
    "kind": "run.kind",
    "folds": "crossfit.k",
    "scenario": "simulate.scenario",
    "reps": "simulate.reps",
    "out": "simulate.out",
    "replicates_out": "simulate.replicates_out",
    "population": "simulate.population",
    "target_size": "simulate.target_size",
    "censoring_scale": "simulate.censoring_scale",
    "learners": "simulate.learners",
    "oracle_size": "simulate.oracle_size",
    "bootstrap_se": "simulate.bootstrap_se",
    "b": "bootstrap.b",
    "level": "bootstrap.level",
    "boot_seed": "bootstrap.seed",
    "research_rule": "bootstrap.research_rule",
}


def _collect_settings(args: argparse.Namespace) -> Settings:
    settings = Settings()
    if getattr(args, "config", None):
        settings.load_file(args.config)
    for attr, key in _FLAG_KEYS.items():
        if hasattr(args, attr):
            settings.set_flag(key, getattr(args, attr))
    return settings


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        settings = _collect_settings(args)
        return args.func(args, settings, started)
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL
    except (ItrError, ValueError, OSError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID


if __name__ == "__main__":
    sys.exit(main())
