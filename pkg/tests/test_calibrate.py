"""Entropy balancing: constraints hold, the solution is minimal, and the
moment maps parse.

The minimality check perturbs the fitted weights inside the feasible set (by
moving along the null space of the constraint matrix) and verifies none of the
perturbations has lower negative entropy, which is what the tilt is supposed
to minimize.
"""
import numpy as np
import pytest

from itrshift import (
    Calibration,
    DimensionMismatch,
    InfeasibleCalibration,
    MomentMap,
    entropy_balance,
    first_moments,
    named_transform,
    second_order_moments,
)
from itrshift.data import NonFiniteValue
from conftest import make_pair


def _standardized_residual(cal: Calibration, source_x, target_x, weights=None, moments=first_moments):
    g_src = moments(source_x)
    g_tgt = moments(target_x)
    w = np.ones(g_tgt.shape[0]) if weights is None else weights
    want = (g_tgt * (w / w.sum())[:, None]).sum(axis=0)
    got = cal.q @ g_src
    sigma = g_src.std(axis=0)
    sigma[sigma < 1e-12] = 1.0
    return np.abs((got - want) / sigma)


def test_moment_constraints_hold():
    source, target = make_pair(seed=2, n=250, m=400)
    cal = entropy_balance(source.x, target.x, target.design_weight)
    resid = _standardized_residual(cal, source.x, target.x, target.design_weight)
    assert resid.max() <= 1e-6


def test_weights_sum_to_one():
    source, target = make_pair(seed=3, n=150, m=200)
    cal = entropy_balance(source.x, target.x, target.design_weight)
    assert abs(cal.q.sum() - 1.0) <= 1e-10
    assert np.all(cal.q > 0)


def test_second_order_constraints_hold():
    source, target = make_pair(seed=4, n=400, m=500)
    cal = entropy_balance(
        source.x, target.x, target.design_weight, moments=second_order_moments
    )
    resid = _standardized_residual(
        cal, source.x, target.x, target.design_weight, moments=second_order_moments
    )
    assert resid.max() <= 1e-6


def test_solution_minimizes_negative_entropy_over_feasible_perturbations():
    source, target = make_pair(seed=5, n=120, m=150)
    cal = entropy_balance(source.x, target.x, target.design_weight)
    q = cal.q
    obj = float(np.sum(q * np.log(q)))

    # Feasible directions keep both the moment constraints and the sum: they
    # live in the null space of [g(x) | 1]^T.
    g = np.concatenate([first_moments(source.x), np.ones((q.size, 1))], axis=1)
    rng = np.random.default_rng(9)
    n_checked = 0
    while n_checked < 100:
        v = rng.normal(size=q.size)
        v -= g @ np.linalg.lstsq(g, v, rcond=None)[0]
        if np.linalg.norm(v) < 1e-12:
            continue
        v /= np.linalg.norm(v)
        eps = 0.25 * q.min()
        q2 = q + eps * v
        if np.any(q2 <= 0):
            continue
        np.testing.assert_allclose(q2.sum(), 1.0, atol=1e-9)
        np.testing.assert_allclose(q2 @ first_moments(source.x), q @ first_moments(source.x), atol=1e-9)
        assert float(np.sum(q2 * np.log(q2))) >= obj - 1e-12
        n_checked += 1


def test_uniform_weights_recovered_when_target_matches_source():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(80, 3))
    # target "sample" whose weighted mean is exactly the source mean
    cal = entropy_balance(x, x.mean(axis=0)[None, :], np.array([1.0]))
    np.testing.assert_allclose(cal.q, np.full(80, 1.0 / 80), atol=1e-9)


def test_two_point_example():
    # one balance feature taking values 0 and 1; target mean 0.75
    # forces q = (0.25, 0.75)
    src = np.array([[0.0], [1.0]])
    tgt = np.array([[0.75]])
    cal = entropy_balance(src, tgt)
    np.testing.assert_allclose(cal.q, [0.25, 0.75], atol=1e-8)


def test_infeasible_targets_raise():
    src = np.array([[0.0], [1.0], [0.5]])
    with pytest.raises(InfeasibleCalibration):
        entropy_balance(src, np.array([[2.0]]))


def test_boundary_targets_concentrate_on_the_vertex():
    # the target mean sits on the hull boundary: the solution collapses onto
    # the supporting point (and would be caught downstream by the
    # effective-sample-size guard)
    src = np.array([[0.0], [1.0], [0.5]])
    cal = entropy_balance(src, np.array([[1.0]]))
    assert cal.q[1] > 1.0 - 1e-5
    np.testing.assert_allclose(float(cal.q @ src[:, 0]), 1.0, atol=1e-5)


def test_dimension_mismatch_rejected():
    with pytest.raises(DimensionMismatch):
        entropy_balance(np.zeros((5, 2)), np.zeros((4, 3)))


def test_nonfinite_moments_rejected():
    src = np.array([[0.0], [np.inf]])
    with pytest.raises(NonFiniteValue):
        entropy_balance(src, np.array([[0.5]]))


def test_weights_for_matches_fit_rows():
    source, target = make_pair(seed=7, n=100, m=120)
    cal = entropy_balance(source.x, target.x, target.design_weight)
    np.testing.assert_allclose(cal.weights_for(source.x), cal.q, atol=1e-12)


def test_weights_for_extends_to_new_rows():
    """Fit on one half, evaluate on the other: the tilt extends smoothly and
    renormalizes to a proper weight vector."""
    source, target = make_pair(seed=8, n=200, m=150)
    half = source.x[:100]
    other = source.x[100:]
    cal = entropy_balance(half, target.x, target.design_weight)
    w = cal.weights_for(other)
    assert w.shape == (100,)
    assert abs(w.sum() - 1.0) < 1e-12
    assert np.all(w > 0)


def test_implied_sampling_score_is_positive_and_inverse_to_weight():
    source, target = make_pair(seed=9, n=100, m=200)
    cal = entropy_balance(source.x, target.x, target.design_weight)
    score = cal.implied_sampling_score(source.x)
    assert np.all(score > 0)
    np.testing.assert_allclose(
        1.0 / (cal.n_hat * cal.weights_for(source.x, renormalize=False)),
        score,
        rtol=1e-12,
    )


def test_design_weights_shift_the_target_mean():
    rng = np.random.default_rng(10)
    src = rng.normal(size=(300, 1))
    tgt = np.array([[-1.0], [1.0]])
    cal = entropy_balance(src, tgt, np.array([1.0, 3.0]))
    np.testing.assert_allclose(float(cal.q @ src[:, 0]), 0.5, atol=1e-7)


# ---------------------------------------------------------------------------
# moment maps
# ---------------------------------------------------------------------------


def test_second_order_moments_layout():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = second_order_moments(x)
    np.testing.assert_array_equal(
        out, [[1.0, 2.0, 1.0, 4.0, 2.0], [3.0, 4.0, 9.0, 16.0, 12.0]]
    )


def test_named_transform_applies_to_one_column():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_allclose(named_transform("exp(x2)", x), np.exp(x[:, 1:2]))
    np.testing.assert_allclose(named_transform("square(x1)", x), x[:, 0:1] ** 2)


def test_named_transform_rejects_unknown_or_out_of_range():
    x = np.zeros((2, 2))
    with pytest.raises(DimensionMismatch):
        named_transform("cube(x1)", x)
    with pytest.raises(DimensionMismatch):
        named_transform("exp(x9)", x)
    with pytest.raises(DimensionMismatch):
        named_transform("exp x1", x)


def test_moment_map_combines_base_and_transforms():
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    mm = MomentMap(base="first", transforms=("exp(x1)",))
    out = mm(x)
    assert out.shape == (2, 3)
    np.testing.assert_allclose(out[:, :2], x)
    np.testing.assert_allclose(out[:, 2], np.exp(x[:, 0]))


def test_moment_map_none_base_needs_transforms():
    with pytest.raises(DimensionMismatch):
        MomentMap(base="none")(np.zeros((2, 2)))


def test_moment_map_rejects_unknown_base():
    with pytest.raises(DimensionMismatch):
        MomentMap(base="third")(np.zeros((2, 2)))


def test_moment_map_pickles():
    import pickle

    mm = MomentMap(base="first2", transforms=("exp(x1)", "abs(x2)"))
    mm2 = pickle.loads(pickle.dumps(mm))
    x = np.random.default_rng(0).normal(size=(5, 2))
    np.testing.assert_array_equal(mm(x), mm2(x))
