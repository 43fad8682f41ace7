"""Cross-fitting: fold assignment, out-of-fold discipline, aggregation
linearity, and the picklable whole-pipeline closure."""
import pickle
from dataclasses import replace

import numpy as np
import pytest

import itrshift.crossfit as cf
from itrshift.crossfit import (
    NuisanceSpec,
    PipelineValue,
    crossfit_decompositions,
    crossfit_search,
    crossfit_value,
    fit_nuisances,
    make_folds,
    required_nuisances,
)
from itrshift.data import BadK, FoldFitFailure, LinearRule, NoEvents
from itrshift.nuisance import ArmSpecificSurvival
from itrshift.search import SearchConfig, optimize_rule
from itrshift.value import (
    Horizon,
    Nuisances,
    build_decompositions,
    build_from_grid,
    estimate_value,
    evaluation_grid,
)

RULE = LinearRule(np.array([0.3, 1.0, -0.4, 0.2]))


class FlatSurvival:
    def __init__(self, level):
        self.level = float(level)

    def survival_grid(self, x, times):
        return np.full((x.shape[0], len(times)), self.level)

    def survival_at(self, x, t):
        return np.full(x.shape[0], self.level)

    def jump_times(self):
        return np.zeros(0)


class FixedProb:
    def __init__(self, p):
        self.p = float(p)

    def predict_proba(self, x):
        return np.full(x.shape[0], self.p)


CONSTANT_NUIS = Nuisances(
    propensity=FixedProb(0.55),
    censoring=ArmSpecificSurvival(FlatSurvival(0.9), FlatSurvival(0.9)),
    outcome=ArmSpecificSurvival(FlatSurvival(0.6), FlatSurvival(0.65)),
)


# ---------------------------------------------------------------------------
# fold assignment
# ---------------------------------------------------------------------------


def test_fold_sizes_differ_by_at_most_one():
    src, tgt = make_folds(11, 10, 2, seed=0)
    assert sorted(np.bincount(src).tolist()) == [5, 6]
    assert sorted(np.bincount(tgt).tolist()) == [5, 5]
    assert src.size == 11 and tgt.size == 10

    src, tgt = make_folds(300, 500, 7, seed=1)
    for labels, total in ((src, 300), (tgt, 500)):
        sizes = np.bincount(labels, minlength=7)
        assert sizes.sum() == total
        assert sizes.max() - sizes.min() <= 1


def test_unfillable_fold_counts_are_rejected():
    for bad in (0, 1):
        with pytest.raises(BadK):
            make_folds(10, 10, bad)
    with pytest.raises(BadK):
        make_folds(5, 20, 6)
    with pytest.raises(BadK):
        make_folds(20, 3, 4)


def test_fold_assignment_is_deterministic_given_the_seed():
    a = make_folds(40, 30, 3, seed=9)
    b = make_folds(40, 30, 3, seed=9)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    c = make_folds(40, 30, 3, seed=10)
    assert not np.array_equal(a[0], c[0])

    g = make_folds(40, 30, 3, seed=np.random.default_rng(9))
    assert np.array_equal(a[0], g[0]) and np.array_equal(a[1], g[1])


# ---------------------------------------------------------------------------
# aggregation and out-of-fold discipline
# ---------------------------------------------------------------------------


def test_combined_pieces_match_a_manual_fold_by_fold_rebuild(pair):
    source, target = pair
    horizon, seed, k = Horizon(1.0), 11, 2
    combined = crossfit_decompositions(
        source, target, None, horizon, ("acw", "naive"), n_folds=k, seed=seed
    )

    times, weights, const = evaluation_grid(source, horizon)
    src_fold, tgt_fold = make_folds(source.n, target.m, k, seed)
    d_s, d_t = RULE.decide(source.x), RULE.decide(target.x)

    for kind in ("acw", "naive"):
        fold_values = []
        for j in range(k):
            nuis = fit_nuisances(
                source.subset(src_fold != j),
                target.subset(tgt_fold != j),
                None,
                required_nuisances((kind,)),
            )
            if nuis.calibration is not None:
                q = nuis.calibration.weights_for(source.x[src_fold == j])
                nuis.calibration = replace(nuis.calibration, q=q / q.sum())
            dec = build_from_grid(
                source.subset(src_fold == j),
                target.subset(tgt_fold == j),
                nuis,
                times,
                weights,
                const,
                (kind,),
            )[kind]
            rows = np.flatnonzero(src_fold == j)
            assert np.array_equal(combined[kind].src_h1[rows], dec.src_h1)
            assert np.array_equal(combined[kind].src_w[rows], dec.src_w / k)
            fold_values.append(dec.value(d_s[src_fold == j], d_t[tgt_fold == j]))
        assert combined[kind].value(d_s, d_t) == pytest.approx(
            np.mean(fold_values), abs=1e-12
        )


def test_constant_nuisances_make_cross_fitting_invisible(pair, monkeypatch):
    source, target = pair
    monkeypatch.setattr(cf, "fit_nuisances", lambda *a, **kw: CONSTANT_NUIS)
    kinds = ("naive", "or_target", "dr_source")
    crossed = crossfit_decompositions(
        source, target, None, Horizon(1.0), kinds, n_folds=2, seed=3
    )
    single = build_decompositions(source, target, CONSTANT_NUIS, Horizon(1.0), kinds)
    d_s, d_t = RULE.decide(source.x), RULE.decide(target.x)
    for kind in kinds:
        np.testing.assert_array_equal(crossed[kind].src_w, single[kind].src_w)
        np.testing.assert_array_equal(crossed[kind].src_h1, single[kind].src_h1)
        np.testing.assert_array_equal(crossed[kind].tgt_f0, single[kind].tgt_f0)
        assert crossed[kind].value(d_s, d_t) == single[kind].value(d_s, d_t)


def test_every_fold_is_scored_by_models_that_never_saw_it(pair, monkeypatch):
    source, target = pair
    assert len(set(source.u.tolist())) == source.n

    real = fit_nuisances
    seen = []

    def spy(s, t, spec=None, need=None):
        seen.append((set(s.u.tolist()), set(t.x[:, 0].tolist())))
        return real(s, t, spec, need)

    monkeypatch.setattr(cf, "fit_nuisances", spy)
    crossfit_decompositions(
        source, target, None, Horizon(1.0), ("acw",), n_folds=3, seed=7
    )
    src_fold, tgt_fold = make_folds(source.n, target.m, 3, 7)
    assert len(seen) == 3
    for j in range(3):
        held_u = set(source.u[src_fold == j].tolist())
        held_t = set(target.x[tgt_fold == j, 0].tolist())
        assert held_u and not held_u & seen[j][0]
        assert held_t and not held_t & seen[j][1]


def test_fold_failures_name_the_fold(pair, monkeypatch):
    source, target = pair
    real = fit_nuisances
    calls = {"n": 0}

    def flaky(s, t, spec=None, need=None):
        if calls["n"] == 1:
            calls["n"] += 1
            raise NoEvents("nothing observed in this split")
        calls["n"] += 1
        return real(s, t, spec, need)

    monkeypatch.setattr(cf, "fit_nuisances", flaky)
    with pytest.raises(FoldFitFailure, match="fold 1"):
        crossfit_decompositions(
            source, target, None, Horizon(1.0), ("acw",), n_folds=3, seed=2
        )


def test_crossfit_value_is_the_decomposition_estimate(pair):
    source, target = pair
    est = crossfit_value(source, target, RULE, Horizon(1.0), n_folds=2, seed=5)
    dec = crossfit_decompositions(
        source, target, None, Horizon(1.0), ("acw",), n_folds=2, seed=5
    )["acw"]
    again = dec.estimate(RULE.decide(source.x), RULE.decide(target.x))
    assert est.value == again.value
    assert est.se == again.se
    assert est.se > 0


def test_two_and_five_folds_tell_the_same_story(pair):
    source, target = pair
    a = crossfit_value(source, target, RULE, Horizon(1.0), n_folds=2, seed=1)
    b = crossfit_value(source, target, RULE, Horizon(1.0), n_folds=5, seed=1)
    pooled = np.sqrt(a.se**2 + b.se**2)
    assert abs(a.value - b.value) <= 3.0 * pooled


def test_crossfit_runs_are_reproducible(pair):
    source, target = pair
    a = crossfit_value(source, target, RULE, Horizon(1.0), n_folds=3, seed=21)
    b = crossfit_value(source, target, RULE, Horizon(1.0), n_folds=3, seed=21)
    assert a.value == b.value and a.se == b.se
    c = crossfit_value(source, target, RULE, Horizon(1.0), n_folds=3, seed=22)
    assert a.value != c.value


# ---------------------------------------------------------------------------
# search over the cross-fitted surface
# ---------------------------------------------------------------------------


def test_crossfit_search_with_constant_nuisances_matches_plain_search(
    pair, monkeypatch
):
    source, target = pair
    monkeypatch.setattr(cf, "fit_nuisances", lambda *a, **kw: CONSTANT_NUIS)
    cfg = SearchConfig(population=25, generations=15, bound=10.0)
    crossed = crossfit_search(
        source, target, None, Horizon(1.0), "naive",
        n_folds=2, config=cfg, seed=4, fold_seed=0,
    )
    plain = optimize_rule(
        source, target, CONSTANT_NUIS, Horizon(1.0), "naive", config=cfg, seed=4
    )
    assert np.array_equal(crossed.rule.eta, plain.rule.eta)
    assert crossed.value == plain.value


# ---------------------------------------------------------------------------
# the picklable pipeline closure
# ---------------------------------------------------------------------------


def test_pipeline_value_reproduces_the_direct_estimate(pair):
    source, target = pair
    pv = PipelineValue(horizon=Horizon(1.0), kind="acw", eta=tuple(RULE.eta))
    nuis = fit_nuisances(source, target, None, required_nuisances(("acw",)))
    direct = estimate_value(source, target, nuis, RULE, Horizon(1.0), "acw")
    assert pv(source, target) == direct.value


def test_pipeline_value_crossfits_when_asked(pair):
    source, target = pair
    pv = PipelineValue(
        horizon=Horizon(1.0), kind="acw", eta=tuple(RULE.eta), n_folds=2, seed=13
    )
    est = crossfit_value(source, target, RULE, Horizon(1.0), n_folds=2, seed=13)
    assert pv(source, target) == est.value


def test_pipeline_value_survives_pickling(pair):
    source, target = pair
    pv = PipelineValue(
        horizon=Horizon(1.0),
        kind="naive",
        spec=NuisanceSpec(),
        eta=tuple(RULE.eta),
    )
    clone = pickle.loads(pickle.dumps(pv))
    assert clone(source, target) == pv(source, target)


def test_pipeline_value_can_research_the_rule_deterministically(pair):
    source, target = pair
    pv = PipelineValue(
        horizon=Horizon(1.0),
        kind="naive",
        search=SearchConfig(population=20, generations=10, bound=10.0),
        seed=5,
    )
    assert pv(source, target) == pv(source, target)
