"""Normal quantiles, Wald intervals, and the pair bootstrap."""
import numpy as np
import pytest
import scipy.stats

from itrshift.data import NoEvents, ReplicateFailure
from itrshift.inference import (
    BootstrapResult,
    bootstrap_value,
    normal_quantile,
    wald_ci,
)


def mean_observed_time(source, target):
    return float(source.u.mean())


def target_first_mean(source, target):
    return float(target.x[:, 0].mean())


class ConstantClosure:
    def __call__(self, source, target):
        return 0.7


class AlwaysFails:
    def __call__(self, source, target):
        raise NoEvents("nothing to fit")


class NotANumber:
    def __call__(self, source, target):
        return float("nan")


class FirstRowGate:
    """Fails unless the first resampled row clears a threshold, so a known
    fraction of attempts raise and some replicates exhaust their retries."""

    def __init__(self, threshold):
        self.threshold = threshold

    def __call__(self, source, target):
        if source.u[0] < self.threshold:
            raise NoEvents("gated")
        return float(source.u.mean())


# ---------------------------------------------------------------------------
# normal quantiles and Wald intervals
# ---------------------------------------------------------------------------


def test_quantiles_match_scipy_across_the_unit_interval():
    grid = np.concatenate(
        [
            np.array([1e-12, 1e-9, 1e-6, 0.02425, 0.024251]),
            np.linspace(0.001, 0.999, 997),
            np.array([1 - 1e-6, 1 - 1e-9]),
        ]
    )
    ours = np.array([normal_quantile(p) for p in grid])
    ref = scipy.stats.norm.ppf(grid)
    assert np.max(np.abs(ours - ref)) <= 1e-9


def test_quantile_spot_values():
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-12)
    assert normal_quantile(0.95) == pytest.approx(1.6448536269514722, abs=1e-12)
    assert normal_quantile(0.0) == -np.inf
    assert normal_quantile(1.0) == np.inf
    with pytest.raises(ValueError):
        normal_quantile(-0.1)
    with pytest.raises(ValueError):
        normal_quantile(1.5)


def test_wald_interval_uses_the_right_quantile():
    lo, hi = wald_ci(0.0, 1.0, 0.95)
    assert lo == pytest.approx(-1.959963984540054, abs=1e-9)
    assert hi == pytest.approx(1.959963984540054, abs=1e-9)

    lo, hi = wald_ci(1.0, 2.0, 0.90)
    assert lo == pytest.approx(1.0 - 2.0 * 1.6448536269514722, abs=1e-9)
    assert hi == pytest.approx(1.0 + 2.0 * 1.6448536269514722, abs=1e-9)

    assert wald_ci(0.42, 0.0) == (0.42, 0.42)


# ---------------------------------------------------------------------------
# the pair bootstrap
# ---------------------------------------------------------------------------


def test_constant_closure_has_no_spread(pair):
    source, target = pair
    out = bootstrap_value(source, target, ConstantClosure(), n_boot=25, seed=1)
    assert out.se == 0.0
    assert out.ci == (0.7, 0.7)
    assert np.all(out.estimates == 0.7)
    assert out.n_dropped == 0
    assert out.n_effective == 25
    assert out.seed == 1


def test_resampled_mean_spread_matches_the_classical_formula(pair):
    source, target = pair
    out = bootstrap_value(source, target, mean_observed_time, n_boot=400, seed=3)
    ref = source.u.std(ddof=1) / np.sqrt(source.n)
    assert out.se == pytest.approx(ref, rel=0.15)
    lo, hi = out.ci
    assert lo <= np.median(out.estimates) <= hi
    assert lo < source.u.mean() < hi


def test_same_seed_reproduces_every_replicate(pair):
    source, target = pair
    a = bootstrap_value(source, target, mean_observed_time, n_boot=40, seed=11)
    b = bootstrap_value(source, target, mean_observed_time, n_boot=40, seed=11)
    assert np.array_equal(a.estimates, b.estimates)
    assert a.se == b.se and a.ci == b.ci
    c = bootstrap_value(source, target, mean_observed_time, n_boot=40, seed=12)
    assert not np.array_equal(a.estimates, c.estimates)


def test_worker_count_never_changes_the_replicates(pair):
    source, target = pair
    serial = bootstrap_value(source, target, mean_observed_time, n_boot=16, seed=7)
    pooled = bootstrap_value(
        source, target, mean_observed_time, n_boot=16, seed=7, workers=2
    )
    assert np.array_equal(serial.estimates, pooled.estimates)


def test_source_and_target_streams_are_decorrelated(pair):
    source, target = pair
    from_source = bootstrap_value(
        source, target, mean_observed_time, n_boot=200, seed=5
    )
    from_target = bootstrap_value(
        source, target, target_first_mean, n_boot=200, seed=5
    )
    corr = np.corrcoef(from_source.estimates, from_target.estimates)[0, 1]
    assert abs(corr) < 0.2


def test_failed_replicates_are_redrawn_then_dropped_with_exact_bookkeeping(pair):
    source, target = pair
    gate = FirstRowGate(float(np.quantile(source.u, 0.8)))
    out = bootstrap_value(source, target, gate, n_boot=300, seed=9)
    assert out.n_dropped > 0
    assert out.n_effective + out.n_dropped == 300
    assert np.all(out.estimates > 0)

    again = bootstrap_value(source, target, gate, n_boot=300, seed=9)
    assert again.n_dropped == out.n_dropped
    assert np.array_equal(again.estimates, out.estimates)


def test_hopeless_closures_raise_after_exhausting_retries(pair):
    source, target = pair
    with pytest.raises(ReplicateFailure, match="all 5"):
        bootstrap_value(source, target, AlwaysFails(), n_boot=5, seed=0)
    with pytest.raises(ReplicateFailure):
        bootstrap_value(source, target, NotANumber(), n_boot=5, seed=0)


def test_fewer_than_two_replicates_is_an_error(pair):
    source, target = pair
    for bad in (1, 0, -3):
        with pytest.raises(ValueError, match="at least 2"):
            bootstrap_value(source, target, ConstantClosure(), n_boot=bad)


def test_result_is_a_plain_record(pair):
    source, target = pair
    out = bootstrap_value(source, target, mean_observed_time, n_boot=10, seed=2)
    assert isinstance(out, BootstrapResult)
    assert out.level == 0.95
    assert out.ci[0] <= out.ci[1]
    assert out.estimates.size == 10
