"""Nuisance orchestration: feature maps, learner choice, cross-fitting.

A NuisanceSpec says how each nuisance is built: which transformation of the
covariates it sees and whether it is a parametric fit or a kernel smoother.
``fit_nuisances`` runs the chosen fits on one training split; the cross-fitted
variant rotates K folds, fits every nuisance on each fold's complement, and
splices the per-fold estimator pieces back together in original row order so
downstream code cannot tell the difference.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .calibrate import Calibration, entropy_balance, first_moments
from .data import BadK, FoldFitFailure, ItrError, LinearRule, SourceSample, TargetSample, ValueEstimate
from .nuisance import (
    ArmSpecificSurvival,
    fit_arm_cox,
    fit_arm_kernel_survival,
    fit_kernel_logistic,
    fit_logistic,
    fit_sampling_score,
)
from .value import Horizon, Nuisances, ValueDecomposition, build_from_grid, evaluation_grid

FeatureMap = Callable[[np.ndarray], np.ndarray]


def identity(x: np.ndarray) -> np.ndarray:
    return np.atleast_2d(x)


@dataclass
class MappedClassifier:
    model: object
    features: FeatureMap

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.model.predict_proba(self.features(x))


@dataclass
class MappedSurvival:
    model: object
    features: FeatureMap

    def survival_grid(self, x: np.ndarray, times: np.ndarray) -> np.ndarray:
        return self.model.survival_grid(self.features(x), times)

    def survival_at(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        if not hasattr(self.model, "survival_at"):
            raise AttributeError("survival_at")
        return self.model.survival_at(self.features(x), t)

    def jump_times(self) -> np.ndarray:
        return self.model.jump_times()


def _wrap_arms(models: ArmSpecificSurvival, features: FeatureMap) -> ArmSpecificSurvival:
    return ArmSpecificSurvival(
        arm0=MappedSurvival(models.arm0, features),
        arm1=MappedSurvival(models.arm1, features),
    )


@dataclass
class NuisanceSpec:
    """Recipe for every nuisance fit.

    Learners are "cox"/"kernel" for the survival models and
    "logistic"/"kernel" for the binary ones. Feature maps take the raw
    covariate matrix; calibration_moments feeds entropy balancing directly.
    """

    propensity_features: FeatureMap = identity
    sampling_features: FeatureMap = identity
    censoring_features: FeatureMap = identity
    outcome_features: FeatureMap = identity
    calibration_moments: FeatureMap = first_moments
    propensity_learner: str = "logistic"
    sampling_learner: str = "logistic"
    censoring_learner: str = "cox"
    outcome_learner: str = "cox"
    bandwidth_scale: float = 1.0
    # The censoring smoother feeds hazard increments into an accumulated
    # correction term, so its local fits need more mass behind them than a
    # plain curve estimate; None inherits bandwidth_scale.
    censoring_bandwidth_scale: float | None = None


NEEDS = {
    "naive": {"propensity", "censoring"},
    "ipsw": {"propensity", "censoring", "sampling"},
    "cw_ipw": {"propensity", "censoring", "calibration"},
    "cw_or": {"outcome", "calibration"},
    "or_target": {"outcome"},
    "acw": {"propensity", "censoring", "outcome", "calibration"},
    "dr_source": {"propensity", "censoring", "outcome"},
}


def required_nuisances(kinds: tuple[str, ...]) -> set[str]:
    need: set[str] = set()
    for k in kinds:
        need |= NEEDS[k]
    return need


def fit_nuisances(
    source: SourceSample,
    target: TargetSample,
    spec: NuisanceSpec | None = None,
    need: set[str] | None = None,
) -> Nuisances:
    """Fit the requested nuisances (all of them by default) on full samples."""
    spec = spec or NuisanceSpec()
    if need is None:
        need = {"propensity", "sampling", "censoring", "outcome", "calibration"}
    nuis = Nuisances()

    if "propensity" in need:
        feats = spec.propensity_features(source.x)
        if spec.propensity_learner == "kernel":
            model = fit_kernel_logistic(
                feats, source.a, bandwidth_scale=spec.bandwidth_scale
            )
        else:
            model = fit_logistic(feats, source.a)
        nuis.propensity = MappedClassifier(model, spec.propensity_features)

    if "sampling" in need:
        model = fit_sampling_score(
            spec.sampling_features(source.x),
            spec.sampling_features(target.x),
            target.design_weight,
            kernel=spec.sampling_learner == "kernel",
            bandwidth_scale=spec.bandwidth_scale,
        )
        nuis.sampling = MappedClassifier(model, spec.sampling_features)

    if "censoring" in need:
        feats = spec.censoring_features(source.x)
        if spec.censoring_learner == "kernel":
            cens_scale = (
                spec.bandwidth_scale
                if spec.censoring_bandwidth_scale is None
                else spec.censoring_bandwidth_scale
            )
            fitted = fit_arm_kernel_survival(
                feats, source.a, source.u, 1 - source.delta,
                bandwidth_scale=cens_scale,
            )
        else:
            fitted = fit_arm_cox(feats, source.a, source.u, 1 - source.delta)
        nuis.censoring = _wrap_arms(fitted, spec.censoring_features)

    if "outcome" in need:
        feats = spec.outcome_features(source.x)
        if spec.outcome_learner == "kernel":
            # outcome curves feed weighted averages and bounded ratios, never
            # raw denominators, so sharpness beats the sparse-region guard;
            # widening them drags up-weighted tail subjects toward the
            # marginal curve and biases the value backbone
            fitted = fit_arm_kernel_survival(
                feats, source.a, source.u, source.delta,
                bandwidth_scale=spec.bandwidth_scale,
                min_ess=0.0,
            )
        else:
            fitted = fit_arm_cox(feats, source.a, source.u, source.delta)
        nuis.outcome = _wrap_arms(fitted, spec.outcome_features)

    if "calibration" in need:
        nuis.calibration = entropy_balance(
            source.x, target.x, target.design_weight,
            moments=spec.calibration_moments,
        )
    return nuis


def fold_labels(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Random fold assignment with sizes differing by at most one."""
    return rng.permutation(n) % k


def make_folds(
    n: int, m: int, n_folds: int, seed: int | np.random.Generator | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Balanced random fold labels for both samples, deterministic given seed."""
    if n_folds < 2:
        raise BadK(f"need at least 2 folds, got {n_folds}")
    if n_folds > min(n, m):
        raise BadK(
            f"{n_folds} folds cannot be filled from samples of size {n} and {m}"
        )
    rng = (
        seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    )
    return fold_labels(n, n_folds, rng), fold_labels(m, n_folds, rng)


def _rebind_calibration(cal: Calibration, x_eval: np.ndarray) -> Calibration:
    """Calibration object whose stored weights live on evaluation rows."""
    q = cal.weights_for(x_eval)
    q = q / q.sum()
    return replace(cal, q=q)


def crossfit_decompositions(
    source: SourceSample,
    target: TargetSample,
    spec: NuisanceSpec | None = None,
    horizon: Horizon = None,  # type: ignore[assignment]
    kinds: tuple[str, ...] = ("acw",),
    n_folds: int = 2,
    seed: int | np.random.Generator | None = None,
    *,
    ipsw_normalized: bool = True,
) -> dict[str, ValueDecomposition]:
    """K-fold cross-fitted estimator pieces, spliced into original row order.

    Every nuisance for fold j is fit on the complement of fold j in both
    samples; fold j's rows are then weighted by their own fold's fit. The
    combined object averages the per-fold estimators, so its weights are the
    fold weights divided by K, and standard errors center within folds.
    """
    if horizon is None:
        raise ValueError("horizon is required")
    spec = spec or NuisanceSpec()
    need = required_nuisances(kinds)
    times, weights, const = evaluation_grid(source, horizon)

    src_fold, tgt_fold = make_folds(source.n, target.m, n_folds, seed)

    fields = ("src_w", "src_h0", "src_h1", "tgt_f0", "tgt_f1", "tgt_w")
    acc = {
        kind: {
            f: np.zeros(source.n if f.startswith("src") else target.m)
            for f in fields
        }
        for kind in kinds
    }

    for j in range(n_folds):
        s_rows = np.flatnonzero(src_fold == j)
        t_rows = np.flatnonzero(tgt_fold == j)
        s_fit = source.subset(src_fold != j)
        t_fit = target.subset(tgt_fold != j)
        try:
            nuis = fit_nuisances(s_fit, t_fit, spec, need)
            if nuis.calibration is not None:
                nuis.calibration = _rebind_calibration(
                    nuis.calibration, source.x[s_rows]
                )
            decs = build_from_grid(
                source.subset(src_fold == j),
                target.subset(tgt_fold == j),
                nuis,
                times,
                weights,
                const,
                kinds,
                ipsw_normalized=ipsw_normalized,
            )
        except ItrError as exc:
            raise FoldFitFailure(f"fold {j}: {exc}") from exc
        for kind, dec in decs.items():
            a = acc[kind]
            a["src_w"][s_rows] = dec.src_w / n_folds
            a["src_h0"][s_rows] = dec.src_h0
            a["src_h1"][s_rows] = dec.src_h1
            a["tgt_w"][t_rows] = dec.tgt_w / n_folds
            a["tgt_f0"][t_rows] = dec.tgt_f0
            a["tgt_f1"][t_rows] = dec.tgt_f1

    return {
        kind: ValueDecomposition(
            kind,
            const,
            a["src_w"],
            a["src_h0"],
            a["src_h1"],
            a["tgt_w"],
            a["tgt_f0"],
            a["tgt_f1"],
            src_fold=src_fold,
            tgt_fold=tgt_fold,
        )
        for kind, a in acc.items()
    }


def crossfit_value(
    source: SourceSample,
    target: TargetSample,
    rule: LinearRule,
    horizon: Horizon,
    spec: NuisanceSpec | None = None,
    kind: str = "acw",
    n_folds: int = 2,
    seed: int | np.random.Generator | None = None,
) -> ValueEstimate:
    """Cross-fitted value of one rule: the mean of the per-fold estimates,
    with a standard error from fold-centered influence values."""
    dec = crossfit_decompositions(
        source, target, spec, horizon, (kind,), n_folds=n_folds, seed=seed
    )[kind]
    return dec.estimate(rule.decide(source.x), rule.decide(target.x))


def crossfit_search(
    source: SourceSample,
    target: TargetSample,
    spec: NuisanceSpec | None = None,
    horizon: Horizon = None,  # type: ignore[assignment]
    kind: str = "acw",
    n_folds: int = 2,
    config=None,
    seed: int | np.random.Generator | None = None,
    fold_seed: int | np.random.Generator | None = None,
):
    """Policy search over the cross-fitted value surface.

    The K fold-complement nuisance fits happen once, up front; the search
    then prices every candidate rule off the combined per-row pieces, so its
    thousands of evaluations cost one matrix product each.
    """
    from .data import with_intercept
    from .search import search_rule

    dec = crossfit_decompositions(
        source, target, spec, horizon, (kind,), n_folds=n_folds, seed=fold_seed
    )[kind]
    xs = with_intercept(source.x)
    xt = with_intercept(target.x)

    def value_fn(h: np.ndarray) -> np.ndarray:
        d_src = (xs @ h.T >= 0.0).T.astype(np.float64)
        d_tgt = (xt @ h.T >= 0.0).T.astype(np.float64)
        return dec.batch_values(d_src, d_tgt)

    return search_rule(value_fn, source.p, config, seed)


@dataclass(frozen=True)
class PipelineValue:
    """The whole estimation pipeline as a picklable (source, target) -> value.

    Bootstrap resampling hands each replicate to one of these: nuisances are
    refit from scratch (cross-fitted when ``n_folds`` > 1), and the rule is
    either held fixed at ``eta`` or re-searched when ``eta`` is None. All
    internal randomness comes from ``seed``, so replicates differ only through
    their data.
    """

    horizon: Horizon
    kind: str = "acw"
    spec: NuisanceSpec | None = None
    eta: tuple | None = None
    search: object | None = None  # SearchConfig when re-searching
    n_folds: int = 1
    seed: int = 0

    def __call__(self, source: SourceSample, target: TargetSample) -> float:
        from .value import build_decompositions

        if self.n_folds > 1:
            dec = crossfit_decompositions(
                source, target, self.spec, self.horizon, (self.kind,),
                n_folds=self.n_folds, seed=self.seed,
            )[self.kind]
        else:
            nuis = fit_nuisances(
                source, target, self.spec, required_nuisances((self.kind,))
            )
            dec = build_decompositions(
                source, target, nuis, self.horizon, (self.kind,)
            )[self.kind]
        if self.eta is not None:
            rule = LinearRule(np.asarray(self.eta, dtype=np.float64))
        else:
            from .search import search_rule
            from .data import with_intercept

            xs = with_intercept(source.x)
            xt = with_intercept(target.x)

            def value_fn(h: np.ndarray) -> np.ndarray:
                d_src = (xs @ h.T >= 0.0).T.astype(np.float64)
                d_tgt = (xt @ h.T >= 0.0).T.astype(np.float64)
                return dec.batch_values(d_src, d_tgt)

            rule = search_rule(value_fn, source.p, self.search, self.seed).rule
        return dec.value(rule.decide(source.x), rule.decide(target.x))
