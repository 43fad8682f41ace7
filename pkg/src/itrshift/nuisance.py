"""Nuisance models: treatment propensity, sampling score, survival curves.

Parametric route: Newton-fitted logistic regression and proportional-hazards
models (Breslow tie handling, step baseline). Flexible route: Gaussian-kernel
smoothed versions of both, for when no functional form is trusted. All
survival models expose the same two methods,

    survival_grid(x, times) -> matrix of S(t | x) values, and
    jump_times()            -> where the fitted curves actually move,

so downstream code never cares which family produced a curve.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from . import _kernels
from .data import NoEvents, Separation

PROPENSITY_FLOOR = 0.01
SURVIVAL_FLOOR = 0.05
# Minimum effective neighbour count behind any local kernel fit; queries in
# sparser regions get a widened bandwidth rather than a curve built on noise.
MIN_LOCAL_ESS = 15.0


def floor_probability(p: np.ndarray, floor: float = PROPENSITY_FLOOR) -> np.ndarray:
    return np.clip(p, floor, 1.0 - floor)


def floor_survival(s: np.ndarray, floor: float = SURVIVAL_FLOOR) -> np.ndarray:
    return np.maximum(s, floor)


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------


def _expit(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LogisticModel:
    """Binary regression fit by Newton's method on standardized features."""

    coef: np.ndarray  # raw-scale coefficients, intercept first
    mu: np.ndarray
    sigma: np.ndarray
    n_iter: int

    def linear_predictor(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return self.coef[0] + x @ self.coef[1:]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return _expit(self.linear_predictor(x))


def fit_logistic(
    x: np.ndarray,
    y: np.ndarray,
    weight: np.ndarray | None = None,
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
    coef_cap: float = 30.0,
) -> LogisticModel:
    """Weighted logistic regression; raises Separation when it diverges."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n, p = x.shape
    w = np.ones(n) if weight is None else np.asarray(weight, dtype=np.float64)

    mu = x.mean(axis=0)
    sigma = x.std(axis=0)
    sigma[sigma < 1e-12] = 1.0
    xs = np.concatenate([np.ones((n, 1)), (x - mu) / sigma], axis=1)

    beta = np.zeros(p + 1)
    wsum = w.sum()

    def nll(b: np.ndarray) -> float:
        z = xs @ b
        # -loglik with the stable log1p(exp) form
        return float(np.sum(w * (np.logaddexp(0.0, z) - y * z)) / wsum)

    val = nll(beta)
    n_iter = 0
    for it in range(max_iter):
        n_iter = it + 1
        pz = _expit(xs @ beta)
        grad = xs.T @ (w * (pz - y)) / wsum
        if np.max(np.abs(grad)) <= tol:
            break
        r = w * pz * (1.0 - pz) / wsum
        hess = (xs * r[:, None]).T @ xs
        hess[np.diag_indices(p + 1)] += 1e-10
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while t > 1e-10:
            cand = beta - t * step
            v2 = nll(cand)
            if v2 <= val:
                beta, val = cand, v2
                break
            t *= 0.5
        if p and np.max(np.abs(beta[1:])) > coef_cap:
            raise Separation(
                "logistic coefficients diverged; classes are (nearly) separated"
            )
    else:
        pz = _expit(xs @ beta)
        grad = xs.T @ (w * (pz - y)) / wsum
        if np.max(np.abs(grad)) > 1e-4:
            raise Separation(
                f"logistic fit did not converge (gradient {np.max(np.abs(grad)):.2e})"
            )

    raw = np.empty(p + 1)
    raw[1:] = beta[1:] / sigma
    raw[0] = beta[0] - float(mu @ raw[1:])
    return LogisticModel(coef=raw, mu=mu, sigma=sigma, n_iter=n_iter)


# ---------------------------------------------------------------------------
# conditional survival protocol
# ---------------------------------------------------------------------------


@runtime_checkable
class ConditionalSurvival(Protocol):
    def survival_grid(self, x: np.ndarray, times: np.ndarray) -> np.ndarray:
        """Right-continuous S(t | x): rows follow ``x``, columns ``times``."""
        ...

    def jump_times(self) -> np.ndarray:
        """Sorted times where the fitted curves can change value."""
        ...


@dataclass
class ArmSpecificSurvival:
    """Pair of conditional survival models, one per treatment arm."""

    arm0: ConditionalSurvival
    arm1: ConditionalSurvival

    def model(self, arm: int) -> ConditionalSurvival:
        return self.arm1 if arm else self.arm0

    def jump_times(self) -> np.ndarray:
        return np.union1d(self.arm0.jump_times(), self.arm1.jump_times())


# ---------------------------------------------------------------------------
# proportional hazards with Breslow baseline
# ---------------------------------------------------------------------------


@dataclass
class CoxSurvival:
    """S(t | x) = exp(-Lambda0(t) * exp(beta . x)) with a step baseline."""

    beta: np.ndarray
    knots: np.ndarray  # distinct event times, ascending
    cumhaz: np.ndarray  # Breslow cumulative baseline hazard at the knots
    mu: np.ndarray
    sigma: np.ndarray
    n_iter: int = 0

    def risk(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.beta.size == 0:
            return np.ones(x.shape[0])
        return np.exp(x @ self.beta)

    def cumhaz_at(self, times: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.knots, np.asarray(times, dtype=np.float64), "right")
        padded = np.concatenate([[0.0], self.cumhaz])
        return padded[idx]

    def survival_grid(self, x: np.ndarray, times: np.ndarray) -> np.ndarray:
        lam = self.cumhaz_at(times)
        r = self.risk(x)
        out = np.empty((r.size, lam.size))
        chunk = max(1, int(8_000_000 // max(lam.size, 1)))
        for lo in range(0, r.size, chunk):
            hi = min(r.size, lo + chunk)
            out[lo:hi] = np.exp(-np.outer(r[lo:hi], lam))
        return out

    def survival_at(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Row-paired evaluation: S(t_i | x_i)."""
        return np.exp(-self.cumhaz_at(t) * self.risk(x))

    def jump_times(self) -> np.ndarray:
        return self.knots


def fit_cox(
    x: np.ndarray,
    time: np.ndarray,
    event: np.ndarray,
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> CoxSurvival:
    """Proportional-hazards fit; with no covariate columns this reduces to the
    Nelson-Aalen cumulative hazard."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event)
    n, q = x.shape
    if event.sum() == 0:
        raise NoEvents("cannot fit a survival model with zero events")

    order = np.argsort(time, kind="stable")
    ts = time[order]
    es = event[order].astype(np.float64)
    xs_raw = x[order]

    mu = x.mean(axis=0)
    sigma = x.std(axis=0)
    sigma[sigma < 1e-12] = 1.0
    zs = (xs_raw - mu) / sigma

    beta_std = np.zeros(q)
    n_iter = 0
    if q > 0:
        loglik, grad, hess = _kernels.cox_stats(ts, es, zs, beta_std)
        for it in range(max_iter):
            n_iter = it + 1
            if np.max(np.abs(grad)) <= tol:
                break
            neg_h = -hess
            neg_h[np.diag_indices(q)] += 1e-10
            try:
                step = np.linalg.solve(neg_h, grad)
            except np.linalg.LinAlgError:
                step = grad
            t = 1.0
            improved = False
            while t > 1e-10:
                cand = beta_std + t * step
                l2, g2, h2 = _kernels.cox_stats(ts, es, zs, cand)
                if l2 >= loglik:
                    beta_std, loglik, grad, hess = cand, l2, g2, h2
                    improved = True
                    break
                t *= 0.5
            if not improved:
                break
            if np.max(np.abs(beta_std)) > 50.0:
                raise Separation(
                    "partial likelihood is monotone; hazard ratio diverged"
                )
        else:
            if np.max(np.abs(grad)) > 1e-4:
                raise Separation(
                    f"proportional-hazards fit did not converge "
                    f"(gradient {np.max(np.abs(grad)):.2e})"
                )

    beta = beta_std / sigma if q else np.zeros(0)
    # Breslow baseline on the raw scale
    w = np.exp(xs_raw @ beta) if q else np.ones(n)

    is_start = np.empty(n, dtype=bool)
    is_start[0] = True
    is_start[1:] = ts[1:] != ts[:-1]
    starts = np.flatnonzero(is_start)
    d_group = np.add.reduceat(es, starts)
    keep = d_group > 0
    knot_starts = starts[keep].astype(np.int64)
    knot_events = d_group[keep]
    knots = ts[knot_starts]

    cumhaz = _kernels.breslow_cumhaz(ts, es, w, knot_starts, knot_events)
    return CoxSurvival(
        beta=beta,
        knots=knots,
        cumhaz=np.asarray(cumhaz),
        mu=mu,
        sigma=sigma,
        n_iter=n_iter,
    )


def fit_arm_cox(
    x: np.ndarray,
    a: np.ndarray,
    time: np.ndarray,
    event: np.ndarray,
    **kwargs,
) -> ArmSpecificSurvival:
    """Separate proportional-hazards fits for the two treatment arms."""
    a = np.asarray(a).astype(bool)
    return ArmSpecificSurvival(
        arm0=fit_cox(x[~a], time[~a], event[~a], **kwargs),
        arm1=fit_cox(x[a], time[a], event[a], **kwargs),
    )


# ---------------------------------------------------------------------------
# kernel-weighted estimators (no functional form)
# ---------------------------------------------------------------------------


def default_bandwidth(n: int, p: int, scale: float = 1.0) -> float:
    """Rule-of-thumb bandwidth on standardized covariates."""
    return scale * n ** (-1.0 / (p + 4))


@dataclass
class KernelSurvival:
    """Kernel-weighted product-limit curves (local Kaplan-Meier).

    Weights are a Gaussian kernel on standardized covariates. When
    ``min_ess`` is positive, queries backed by less effective neighbour mass
    than that get a widened bandwidth (the tree-ensemble minimum-leaf idea
    translated to kernels), so no curve collapses on a couple of subjects.
    Query points whose every kernel weight underflows fall back to the
    unweighted curve; ``n_degenerate`` counts how often the last
    ``survival_grid`` call did so.
    """

    train_z: np.ndarray
    times: np.ndarray
    knots: np.ndarray
    knot_starts: np.ndarray
    ev_rows: np.ndarray
    ev_offsets: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    bandwidth: float
    n_degenerate: int = 0
    min_ess: float = 0.0

    def _curves_at_knots(self, x: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(x) - self.mu) / self.sigma
        values, ndeg = _kernels.beran_eval(
            np.ascontiguousarray(z),
            self.train_z,
            1.0 / self.bandwidth,
            self.times,
            self.knot_starts,
            self.ev_rows,
            self.ev_offsets,
            self.min_ess,
        )
        self.n_degenerate = int(ndeg)
        return values

    def survival_grid(self, x: np.ndarray, times: np.ndarray) -> np.ndarray:
        at_knots = self._curves_at_knots(x)
        padded = np.concatenate(
            [np.ones((at_knots.shape[0], 1)), at_knots], axis=1
        )
        idx = np.searchsorted(self.knots, np.asarray(times, dtype=np.float64), "right")
        return padded[:, idx]

    def survival_at(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Row-paired evaluation: S(t_i | x_i)."""
        at_knots = self._curves_at_knots(x)
        padded = np.concatenate(
            [np.ones((at_knots.shape[0], 1)), at_knots], axis=1
        )
        idx = np.searchsorted(self.knots, np.asarray(t, dtype=np.float64), "right")
        return padded[np.arange(padded.shape[0]), idx]

    def jump_times(self) -> np.ndarray:
        return self.knots


def fit_kernel_survival(
    x: np.ndarray,
    time: np.ndarray,
    event: np.ndarray,
    *,
    bandwidth_scale: float = 1.0,
    min_ess: float | None = None,
) -> KernelSurvival:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event)
    if event.sum() == 0:
        raise NoEvents("cannot fit a survival model with zero events")
    n, p = x.shape

    order = np.argsort(time, kind="stable")
    ts = time[order]
    es = event[order].astype(np.int64)
    mu = x.mean(axis=0)
    sigma = x.std(axis=0)
    sigma[sigma < 1e-12] = 1.0
    zs = np.ascontiguousarray((x[order] - mu) / sigma)

    is_start = np.empty(n, dtype=bool)
    is_start[0] = True
    is_start[1:] = ts[1:] != ts[:-1]
    starts = np.flatnonzero(is_start)
    d_group = np.add.reduceat(es.astype(np.float64), starts)
    keep = d_group > 0
    knot_starts = starts[keep].astype(np.int64)
    knots = ts[knot_starts]

    # flattened row indices of the events at each knot
    ev_rows_list = []
    ev_offsets = np.zeros(knots.size + 1, dtype=np.int64)
    starts_ext = np.concatenate([starts, [n]])
    ki = 0
    for gi, s in enumerate(starts):
        if not keep[gi]:
            continue
        rows = [r for r in range(s, starts_ext[gi + 1]) if es[r]]
        ev_rows_list.extend(rows)
        ev_offsets[ki + 1] = ev_offsets[ki] + len(rows)
        ki += 1
    ev_rows = np.asarray(ev_rows_list, dtype=np.int64)

    return KernelSurvival(
        train_z=zs,
        times=ts,
        knots=knots,
        knot_starts=knot_starts,
        ev_rows=ev_rows,
        ev_offsets=ev_offsets,
        mu=mu,
        sigma=sigma,
        bandwidth=default_bandwidth(n, p, bandwidth_scale),
        min_ess=(
            min(MIN_LOCAL_ESS, 0.5 * n) if min_ess is None else min_ess
        ),
    )


def fit_arm_kernel_survival(
    x: np.ndarray,
    a: np.ndarray,
    time: np.ndarray,
    event: np.ndarray,
    **kwargs,
) -> ArmSpecificSurvival:
    a = np.asarray(a).astype(bool)
    return ArmSpecificSurvival(
        arm0=fit_kernel_survival(x[~a], time[~a], event[~a], **kwargs),
        arm1=fit_kernel_survival(x[a], time[a], event[a], **kwargs),
    )


@dataclass
class KernelLogistic:
    """Nadaraya-Watson smoother for a binary response."""

    train_z: np.ndarray
    y: np.ndarray
    w: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    bandwidth: float
    min_ess: float = 0.0

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(x) - self.mu) / self.sigma
        inv_h = 1.0 / self.bandwidth
        n = self.train_z.shape[0]
        out = np.empty(z.shape[0])
        chunk = max(1, int(4_000_000 // max(n, 1)))
        wy = self.w * self.y
        for lo in range(0, z.shape[0], chunk):
            hi = min(z.shape[0], lo + chunk)
            d2 = (
                ((z[lo:hi, None, :] - self.train_z[None, :, :]) * inv_h) ** 2
            ).sum(axis=2)
            k = np.exp(-0.5 * d2)
            if self.min_ess > 0.0:
                kw = k * self.w
                ess = kw.sum(axis=1) ** 2
                ess2 = (kw * kw).sum(axis=1)
                scale = inv_h
                for _ in range(3):
                    thin = ess < self.min_ess * ess2
                    if not thin.any():
                        break
                    scale *= 0.5
                    rows = np.flatnonzero(thin)
                    d2_t = (
                        ((z[lo:hi][rows, None, :] - self.train_z[None, :, :]) * scale)
                        ** 2
                    ).sum(axis=2)
                    k[rows] = np.exp(-0.5 * d2_t)
                    kw = k[rows] * self.w
                    ess[rows] = kw.sum(axis=1) ** 2
                    ess2[rows] = (kw * kw).sum(axis=1)
            denom = k @ self.w
            num = k @ wy
            flat = denom < 1e-100
            if flat.any():
                num[flat] = wy.sum()
                denom[flat] = self.w.sum()
            out[lo:hi] = num / denom
        # a smoothed class probability must stay strictly inside (0, 1) even
        # when every neighbour shares one label
        return np.clip(out, 1e-12, 1.0 - 1e-12)


def fit_kernel_logistic(
    x: np.ndarray,
    y: np.ndarray,
    weight: np.ndarray | None = None,
    *,
    bandwidth_scale: float = 1.0,
) -> KernelLogistic:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n, p = x.shape
    w = np.ones(n) if weight is None else np.asarray(weight, dtype=np.float64)
    mu = x.mean(axis=0)
    sigma = x.std(axis=0)
    sigma[sigma < 1e-12] = 1.0
    return KernelLogistic(
        train_z=np.ascontiguousarray((x - mu) / sigma),
        y=y,
        w=w,
        mu=mu,
        sigma=sigma,
        bandwidth=default_bandwidth(n, p, bandwidth_scale),
        min_ess=min(MIN_LOCAL_ESS, 0.5 * n),
    )


# ---------------------------------------------------------------------------
# sampling score from a stacked source/target regression
# ---------------------------------------------------------------------------


def fit_sampling_score(
    source_x: np.ndarray,
    target_x: np.ndarray,
    target_weight: np.ndarray | None = None,
    *,
    kernel: bool = False,
    bandwidth_scale: float = 1.0,
):
    """Regression of membership (source = 1) on covariates over the stacked
    sample, target rows carrying their design weights. The fitted probability
    is the odds-scale ingredient of weighting estimators; callers floor it."""
    source_x = np.atleast_2d(source_x)
    target_x = np.atleast_2d(target_x)
    m = target_x.shape[0]
    tw = np.ones(m) if target_weight is None else np.asarray(target_weight, float)
    xx = np.concatenate([source_x, target_x], axis=0)
    yy = np.concatenate([np.ones(source_x.shape[0]), np.zeros(m)])
    ww = np.concatenate([np.ones(source_x.shape[0]), tw])
    if kernel:
        return fit_kernel_logistic(xx, yy, ww, bandwidth_scale=bandwidth_scale)
    return fit_logistic(xx, yy, ww)
