"""Synthetic studies: data generation, oracle truths, replication harness.

The generative model draws three correlated, truncated-normal covariates for
a large population; a logistic sampling mechanism picks the (shifted,
relatively sick) source cohort, treatment follows a logistic propensity, and
event and censoring times come from proportional-hazards models with a
Gompertz-type baseline, so all conditional survival curves have closed forms.
That makes exact rule values computable on a large oracle draw, which is what
bias, coverage, and correct-decision rates are measured against.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .calibrate import second_order_moments
from .crossfit import (
    NuisanceSpec,
    PipelineValue,
    crossfit_decompositions,
    fit_nuisances,
    required_nuisances,
)
from .data import LinearRule, SourceSample, TargetSample, with_intercept
from .inference import bootstrap_value, wald_ci
from .search import SearchConfig, SearchResult, search_rule
from .value import ALL_KINDS, Horizon, build_decompositions


# ---------------------------------------------------------------------------
# generative model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dgp:
    """Closed-form generative model for one synthetic study.

    Hazards are lambda(t) = exp(t) * rate(x), so the cumulative hazard is
    (exp(t) - 1) * rate(x) and survival has a closed form. ``censoring_scale``
    multiplies both censoring rates; 0.04 gives light censoring (about 21%),
    0.2 heavier (about 33%).
    """

    sampling_coef: tuple = (-4.5, -0.5, -0.5, -0.4)
    propensity_coef: tuple = (0.5, 0.8, -0.5, 0.0)
    censoring_scale: float = 0.04
    constant_sampling: float | None = None  # overrides the logistic mechanism
    truncation: float = 4.0
    corr_13: float = 0.2

    @property
    def n_covariates(self) -> int:
        return 3

    def sample_covariates(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Trivariate normal, corr(X1, X3) fixed, resampled into the box."""
        c = self.corr_13
        chol = np.linalg.cholesky(
            np.array([[1.0, 0.0, c], [0.0, 1.0, 0.0], [c, 0.0, 1.0]])
        )
        out = np.empty((size, 3))
        need = np.arange(size)
        while need.size:
            z = rng.standard_normal((need.size, 3)) @ chol.T
            ok = np.all(np.abs(z) <= self.truncation, axis=1)
            out[need[ok]] = z[ok]
            need = need[~ok]
        return out

    def sampling_prob(self, x: np.ndarray) -> np.ndarray:
        if self.constant_sampling is not None:
            return np.full(x.shape[0], self.constant_sampling)
        b = np.asarray(self.sampling_coef)
        return _expit(with_intercept(x) @ b)

    def propensity(self, x: np.ndarray) -> np.ndarray:
        b = np.asarray(self.propensity_coef)
        return _expit(with_intercept(x) @ b)

    def event_rate(self, arm: int, x: np.ndarray) -> np.ndarray:
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        if arm == 0:
            lin = -2.5 - 1.5 * x1 - x2 - 0.7 * x3
        else:
            lin = -1.0 - x1 - 0.9 * x2 - x3 - 2.0 * x2**2 + x1 * x3
        return np.exp(lin)

    def censoring_rate(self, arm: int, x: np.ndarray) -> np.ndarray:
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        if arm == 0:
            lin = -1.6 + 0.8 * x1 - 1.1 * x2 - 0.7 * x3
        else:
            lin = -1.8 - 0.8 * x1 - 1.7 * x2 - 1.4 * x3
        return self.censoring_scale * np.exp(lin)

    @staticmethod
    def draw_times(rng: np.random.Generator, rate: np.ndarray) -> np.ndarray:
        """Inverse-transform draw for hazard exp(t) * rate."""
        e = rng.exponential(size=rate.shape)
        return np.log1p(e / rate)

    @staticmethod
    def survival(t: np.ndarray | float, rate: np.ndarray) -> np.ndarray:
        return np.exp(-np.expm1(np.asarray(t, dtype=np.float64)) * rate)

    def conditional_value(self, arm_rates: np.ndarray, horizon: Horizon) -> np.ndarray:
        """E[outcome | rate] under the horizon, exactly (to quadrature)."""
        if not horizon.rmst:
            return self.survival(horizon.time, arm_rates)
        nodes, weights = np.polynomial.legendre.leggauss(64)
        t = 0.5 * horizon.time * (nodes + 1.0)
        w = 0.5 * horizon.time * weights
        return self.survival(t[None, :], arm_rates[:, None]) @ w


def _expit(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def draw_study_sample(
    dgp: Dgp,
    rng: np.random.Generator,
    n_population: int = 200_000,
    m_target: int = 8_000,
) -> tuple[SourceSample, TargetSample]:
    """One source cohort (sampled from a population draw) and target survey."""
    xpop = dgp.sample_covariates(rng, n_population)
    selected = rng.random(n_population) < dgp.sampling_prob(xpop)
    xs = xpop[selected]
    n = xs.shape[0]

    a = (rng.random(n) < dgp.propensity(xs)).astype(np.int64)
    t = np.empty(n)
    c = np.empty(n)
    for arm in (0, 1):
        rows = np.flatnonzero(a == arm)
        t[rows] = dgp.draw_times(rng, dgp.event_rate(arm, xs[rows]))
        c[rows] = dgp.draw_times(rng, dgp.censoring_rate(arm, xs[rows]))
    u = np.minimum(t, c)
    delta = (t <= c).astype(np.int64)
    source = SourceSample(xs, a, u, delta)

    xt = dgp.sample_covariates(rng, m_target)
    # simple random sample of the population: constant design weight N / m
    target = TargetSample(xt, np.full(m_target, n_population / m_target))
    return source, target


# ---------------------------------------------------------------------------
# oracle: exact values on a large reference draw
# ---------------------------------------------------------------------------


@dataclass
class Oracle:
    """Exact rule values over a frozen reference draw of the population.

    ``value`` averages closed-form conditional outcome values, so its only
    noise comes from the covariate draw; ``empirical_value`` averages drawn
    potential outcome times instead, which is noisier but model-free.
    """

    x: np.ndarray
    v0: np.ndarray  # conditional value under control, per row
    v1: np.ndarray
    t0: np.ndarray  # drawn potential outcome times
    t1: np.ndarray
    horizon: Horizon
    optimal: SearchResult | None = None

    @classmethod
    def build(
        cls, dgp: Dgp, horizon: Horizon, size: int = 100_000, seed: int = 977,
    ) -> "Oracle":
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        x = dgp.sample_covariates(rng, size)
        r0 = dgp.event_rate(0, x)
        r1 = dgp.event_rate(1, x)
        return cls(
            x=x,
            v0=dgp.conditional_value(r0, horizon),
            v1=dgp.conditional_value(r1, horizon),
            t0=dgp.draw_times(rng, r0),
            t1=dgp.draw_times(rng, r1),
            horizon=horizon,
        )

    def batch_values(self, h: np.ndarray) -> np.ndarray:
        d = (with_intercept(self.x) @ h.T >= 0.0).T.astype(np.float64)
        return self.v0.mean() + d @ (self.v1 - self.v0) / self.x.shape[0]

    def value(self, rule: LinearRule) -> float:
        d = rule.decide(self.x)
        return float(np.mean(self.v0 + (self.v1 - self.v0) * d))

    def empirical_value(self, rule: LinearRule) -> float:
        """Value measured on the drawn potential outcomes themselves."""
        d = rule.decide(self.x)
        t = np.where(d == 1, self.t1, self.t0)
        if self.horizon.rmst:
            return float(np.minimum(t, self.horizon.time).mean())
        return float(np.mean(t >= self.horizon.time))

    def find_optimal(
        self, config: SearchConfig | None = None, seed: int = 1389
    ) -> SearchResult:
        if self.optimal is None:
            self.optimal = search_rule(
                self.batch_values, self.x.shape[1], config, seed
            )
        return self.optimal

    def agreement(self, rule: LinearRule) -> float:
        """Share of the reference draw where ``rule`` matches the best rule."""
        return correct_decision_rate(rule, self.find_optimal().rule, self.x)


def correct_decision_rate(
    rule: LinearRule, reference: LinearRule, x: np.ndarray
) -> float:
    """Fraction of rows where two rules choose the same treatment."""
    return float(np.mean(rule.decide(x) == reference.decide(x)))


@dataclass
class SmoothSurvival:
    """The generative model's own conditional survival, protocol-compatible.

    Continuous curves have no jumps; a fine pseudo-grid stands in so the
    discretized martingale integral approximates the continuous one.
    """

    rate_fn: object  # callable x -> rate
    grid: np.ndarray

    def survival_grid(self, x: np.ndarray, times: np.ndarray) -> np.ndarray:
        r = self.rate_fn(np.atleast_2d(x))
        return np.exp(
            -np.outer(r, np.expm1(np.asarray(times, dtype=np.float64)))
        )

    def survival_at(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        r = self.rate_fn(np.atleast_2d(x))
        return np.exp(-np.expm1(np.asarray(t, dtype=np.float64)) * r)

    def jump_times(self) -> np.ndarray:
        return self.grid


def oracle_nuisances(dgp: Dgp, t_max: float, grid_size: int = 2_000):
    """True nuisance functions wrapped as fitted-model lookalikes."""
    from .nuisance import ArmSpecificSurvival
    from .value import Nuisances

    grid = np.linspace(0.0, t_max, grid_size + 1)[1:]

    class _Prob:
        def __init__(self, fn):
            self.fn = fn

        def predict_proba(self, x):
            return self.fn(np.atleast_2d(x))

    return Nuisances(
        propensity=_Prob(dgp.propensity),
        sampling=_Prob(dgp.sampling_prob),
        censoring=ArmSpecificSurvival(
            arm0=SmoothSurvival(lambda x: dgp.censoring_rate(0, x), grid),
            arm1=SmoothSurvival(lambda x: dgp.censoring_rate(1, x), grid),
        ),
        outcome=ArmSpecificSurvival(
            arm0=SmoothSurvival(lambda x: dgp.event_rate(0, x), grid),
            arm1=SmoothSurvival(lambda x: dgp.event_rate(1, x), grid),
        ),
    )


# ---------------------------------------------------------------------------
# scenario wiring: which nuisances are deliberately misspecified
# ---------------------------------------------------------------------------


def _exp_all(x: np.ndarray) -> np.ndarray:
    return np.exp(np.atleast_2d(x))


def _exp_third(x: np.ndarray) -> np.ndarray:
    return np.exp(np.atleast_2d(x)[:, 2:3])


def _exp_first(x: np.ndarray) -> np.ndarray:
    return np.exp(np.atleast_2d(x)[:, 0:1])


def _outcome_truth_features(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    return np.concatenate(
        [x, (x[:, 1] ** 2)[:, None], (x[:, 0] * x[:, 2])[:, None]], axis=1
    )


SCENARIOS = ("tttt", "tw", "wt", "ww")


def scenario_spec(scenario: str, learners: str = "parametric") -> NuisanceSpec:
    """Nuisance recipe for a study scenario.

    The first letter covers the weighting side (sampling model, calibration
    moments, treatment propensity, censoring model), the second the outcome
    models; "tttt" is everything correct. With kernel learners the feature
    maps stay raw, since the smoothers are form-free.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; options: {SCENARIOS}")
    if learners == "kernel":
        return NuisanceSpec(
            propensity_learner="kernel",
            sampling_learner="kernel",
            censoring_learner="kernel",
            outcome_learner="kernel",
            calibration_moments=second_order_moments,
        )
    if learners != "parametric":
        raise ValueError(f"learners must be 'parametric' or 'kernel', got {learners!r}")

    weight_ok = scenario in ("tttt", "tw")
    outcome_ok = scenario in ("tttt", "wt")
    spec = NuisanceSpec()
    if not weight_ok:
        spec = replace(
            spec,
            propensity_features=_exp_third,
            sampling_features=_exp_third,
            censoring_features=_exp_all,
            calibration_moments=_exp_first,
        )
    spec = replace(
        spec,
        outcome_features=_outcome_truth_features if outcome_ok else _exp_all,
    )
    return spec


# ---------------------------------------------------------------------------
# replication studies
# ---------------------------------------------------------------------------


@dataclass
class StudyConfig:
    scenario: str = "tttt"
    learners: str = "parametric"
    kinds: tuple = ALL_KINDS
    n_reps: int = 500
    n_population: int = 200_000
    m_target: int = 8_000
    censoring_scale: float = 0.04
    horizon: Horizon = field(default_factory=lambda: Horizon(2.0))
    n_folds: int = 1
    search: SearchConfig = field(default_factory=SearchConfig)
    oracle_size: int = 100_000
    seed: int = 20240  # master seed; replicates use spawned streams
    workers: int = 1
    fixed_rule: tuple | None = None  # skip the search, evaluate this rule
    constant_sampling: float | None = None  # shift-free selection when set
    ci_level: float = 0.95
    # When positive, confidence intervals for the kinds below use a resampling
    # standard error with this many replicates (rule held at the learned one);
    # everything else keeps the influence-function standard error.
    bootstrap_se: int = 0
    bootstrap_se_kinds: tuple = ("acw",)

    def dgp(self) -> Dgp:
        return Dgp(
            censoring_scale=self.censoring_scale,
            constant_sampling=self.constant_sampling,
        )


@dataclass
class ReplicateRecord:
    kind: str
    value: float
    se: float
    true_value: float
    covered: bool
    agreement: float
    eta: np.ndarray


def run_replicate(
    cfg: StudyConfig, oracle: Oracle, seed: np.random.SeedSequence
) -> list[ReplicateRecord]:
    rng = np.random.default_rng(seed)
    dgp = cfg.dgp()
    source, target = draw_study_sample(dgp, rng, cfg.n_population, cfg.m_target)
    spec = scenario_spec(cfg.scenario, cfg.learners)
    kinds = tuple(cfg.kinds)

    if cfg.n_folds > 1:
        decs = crossfit_decompositions(
            source, target, spec, cfg.horizon, kinds, cfg.n_folds, rng
        )
    else:
        nuis = fit_nuisances(source, target, spec, required_nuisances(kinds))
        decs = build_decompositions(source, target, nuis, cfg.horizon, kinds)

    xs = with_intercept(source.x)
    xt = with_intercept(target.x)
    records = []
    for kind in kinds:
        dec = decs[kind]
        if cfg.fixed_rule is not None:
            rule = LinearRule(np.asarray(cfg.fixed_rule, dtype=np.float64))
        else:

            def value_fn(h: np.ndarray) -> np.ndarray:
                d_src = (xs @ h.T >= 0.0).T.astype(np.float64)
                d_tgt = (xt @ h.T >= 0.0).T.astype(np.float64)
                return dec.batch_values(d_src, d_tgt)

            rule = search_rule(value_fn, source.p, cfg.search, rng).rule
        est = dec.estimate(rule.decide(source.x), rule.decide(target.x))
        truth = oracle.value(rule)
        se = est.se
        if cfg.bootstrap_se > 0 and kind in cfg.bootstrap_se_kinds:
            pipeline = PipelineValue(
                horizon=cfg.horizon,
                kind=kind,
                spec=spec,
                eta=tuple(rule.eta),
                n_folds=cfg.n_folds,
                seed=int(rng.integers(2**31)),
            )
            boot = bootstrap_value(
                source,
                target,
                pipeline,
                n_boot=cfg.bootstrap_se,
                seed=int(rng.integers(2**31)),
            )
            se = boot.se
        lo, hi = wald_ci(est.value, se, cfg.ci_level)
        records.append(
            ReplicateRecord(
                kind=kind,
                value=est.value,
                se=se,
                true_value=truth,
                covered=lo <= truth <= hi,
                agreement=(
                    math.nan if cfg.fixed_rule is not None else oracle.agreement(rule)
                ),
                eta=rule.eta,
            )
        )
    return records


@dataclass
class KindSummary:
    kind: str
    bias: float
    sd: float
    mean_se: float
    coverage: float  # percent
    agreement: float  # percent
    n_reps: int


@dataclass
class StudyResult:
    config: StudyConfig
    records: list[list[ReplicateRecord]]

    def summary(self) -> dict[str, KindSummary]:
        out = {}
        for kind in self.config.kinds:
            rows = [r for rep in self.records for r in rep if r.kind == kind]
            err = np.array([r.value - r.true_value for r in rows])
            vals = np.array([r.value for r in rows])
            out[kind] = KindSummary(
                kind=kind,
                bias=float(err.mean()),
                sd=float(vals.std(ddof=1)) if len(rows) > 1 else 0.0,
                mean_se=float(np.mean([r.se for r in rows])),
                coverage=100.0 * float(np.mean([r.covered for r in rows])),
                agreement=100.0 * float(np.mean([r.agreement for r in rows])),
                n_reps=len(rows),
            )
        return out

    def errors(self, kind: str) -> np.ndarray:
        return np.array(
            [r.value - r.true_value for rep in self.records for r in rep if r.kind == kind]
        )


def _replicate_star(args):
    return run_replicate(*args)


def run_study(cfg: StudyConfig) -> StudyResult:
    """Full replication study; deterministic for a fixed config and seed."""
    oracle = Oracle.build(cfg.dgp(), cfg.horizon, cfg.oracle_size)
    if cfg.fixed_rule is None:
        oracle.find_optimal(cfg.search)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_reps)

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(
                pool.map(
                    _replicate_star,
                    [(cfg, oracle, s) for s in seeds],
                    chunksize=max(1, cfg.n_reps // (8 * cfg.workers)),
                )
            )
    else:
        records = [run_replicate(cfg, oracle, s) for s in seeds]
    return StudyResult(config=cfg, records=records)
