"""Hot numeric kernels, compiled with numba when available.

Three code paths live here because they dominate the runtime of replication
studies: Cox partial-likelihood accumulation, product-limit curve evaluation
for kernel-weighted survival, and the per-subject censoring-martingale curve
reduction. Each kernel has a loop implementation compiled with ``@njit`` and a
vectorized numpy fallback. Set ``ITR_PURE_NUMPY=1`` to force the fallback
(used by the benchmark and by the kernel-equivalence tests).
"""
from __future__ import annotations

import os

import numpy as np

PURE_NUMPY = os.environ.get("ITR_PURE_NUMPY", "") == "1"

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def active_backend() -> str:
    """Name of the kernel path selected at import time."""
    return "numba" if (HAVE_NUMBA and not PURE_NUMPY) else "numpy"


# ---------------------------------------------------------------------------
# Cox partial likelihood (Breslow ties)
#
# Data arrive sorted by ascending observation time. Risk sets are suffixes of
# the sorted order; tied times form groups that enter the risk set together
# before their events are scored.
# ---------------------------------------------------------------------------


def _cox_stats_loop(times, events, z, beta):
    n, q = z.shape
    eta = z @ beta
    w = np.exp(eta)

    loglik = 0.0
    grad = np.zeros(q)
    hess = np.zeros((q, q))

    s0 = 0.0
    s1 = np.zeros(q)
    s2 = np.zeros((q, q))

    i = n - 1
    while i >= 0:
        j = i
        while j >= 0 and times[j] == times[i]:
            j -= 1
        # rows j+1..i share one time; add them to the risk-set accumulators
        for r in range(j + 1, i + 1):
            s0 += w[r]
            for a in range(q):
                s1[a] += w[r] * z[r, a]
                for b in range(q):
                    s2[a, b] += w[r] * z[r, a] * z[r, b]
        d = 0
        for r in range(j + 1, i + 1):
            if events[r]:
                d += 1
                loglik += eta[r]
                for a in range(q):
                    grad[a] += z[r, a]
        if d > 0:
            loglik -= d * np.log(s0)
            for a in range(q):
                m_a = s1[a] / s0
                grad[a] -= d * m_a
                for b in range(q):
                    hess[a, b] -= d * (s2[a, b] / s0 - m_a * s1[b] / s0)
        i = j
    return loglik, grad, hess


_cox_stats_numba = njit(cache=True)(_cox_stats_loop)


def _cox_stats_numpy(times, events, z, beta):
    n, q = z.shape
    eta = z @ beta
    w = np.exp(eta)

    # suffix sums over the sorted order, one entry per row
    s0_suffix = np.cumsum(w[::-1])[::-1]
    s1_suffix = np.cumsum((w[:, None] * z)[::-1], axis=0)[::-1]
    outer = w[:, None, None] * z[:, :, None] * z[:, None, :]
    s2_suffix = np.cumsum(outer[::-1], axis=0)[::-1]

    # group starts: first row of each distinct time
    is_start = np.empty(n, dtype=bool)
    is_start[0] = True
    is_start[1:] = times[1:] != times[:-1]
    starts = np.flatnonzero(is_start)

    d_group = np.add.reduceat(events.astype(np.float64), starts)
    keep = d_group > 0
    starts_e = starts[keep]
    d_e = d_group[keep]

    s0 = s0_suffix[starts_e]
    s1 = s1_suffix[starts_e]
    s2 = s2_suffix[starts_e]

    ev = events.astype(bool)
    loglik = float(eta[ev].sum() - (d_e * np.log(s0)).sum())
    mean1 = s1 / s0[:, None]
    grad = z[ev].sum(axis=0) - (d_e[:, None] * mean1).sum(axis=0)
    hess = -(
        d_e[:, None, None]
        * (s2 / s0[:, None, None] - mean1[:, :, None] * mean1[:, None, :])
    ).sum(axis=0)
    return loglik, grad, hess


# ---------------------------------------------------------------------------
# Breslow cumulative baseline hazard at the event knots
# ---------------------------------------------------------------------------


def _breslow_loop(times, events, w, knot_starts, knot_events):
    k = knot_starts.shape[0]
    n = times.shape[0]
    cumhaz = np.empty(k)
    s0_suffix = np.empty(n + 1)
    s0_suffix[n] = 0.0
    for i in range(n - 1, -1, -1):
        s0_suffix[i] = s0_suffix[i + 1] + w[i]
    total = 0.0
    for j in range(k):
        total += knot_events[j] / s0_suffix[knot_starts[j]]
        cumhaz[j] = total
    return cumhaz


_breslow_numba = njit(cache=True)(_breslow_loop)


def _breslow_numpy(times, events, w, knot_starts, knot_events):
    s0_suffix = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
    return np.cumsum(knot_events / s0_suffix[knot_starts])


# ---------------------------------------------------------------------------
# Kernel-weighted product-limit curves (one row of survival values per query,
# evaluated at the distinct event knots of the training sample)
#
# With min_ess > 0, a query whose kernel weights carry less effective mass
# than min_ess neighbours has its bandwidth doubled (up to three times)
# before the curve is built, so no curve rests on a handful of subjects.
# Queries still short of mass at 8x the bandwidth fall back to uniform
# weights and are counted as degenerate.
# ---------------------------------------------------------------------------


def _beran_loop(zq, zt, inv_h, times, knot_starts, ev_rows, ev_offsets, min_ess=0.0):
    nq = zq.shape[0]
    n, p = zt.shape
    k = knot_starts.shape[0]
    values = np.empty((nq, k))
    n_degenerate = 0

    for iq in range(nq):
        w = np.empty(n)
        wmax = 0.0
        scale = inv_h
        for attempt in range(4):
            wmax = 0.0
            sw = 0.0
            sw2 = 0.0
            for i in range(n):
                d2 = 0.0
                for a in range(p):
                    diff = (zq[iq, a] - zt[i, a]) * scale
                    d2 += diff * diff
                w[i] = np.exp(-0.5 * d2)
                if w[i] > wmax:
                    wmax = w[i]
                sw += w[i]
                sw2 += w[i] * w[i]
            if min_ess <= 0.0:
                break
            # widen the neighbourhood until enough mass backs the curve
            if wmax >= 1e-100 and sw * sw >= min_ess * sw2:
                break
            scale *= 0.5
        if wmax < 1e-100 or (min_ess > 0.0 and sw * sw < min_ess * sw2):
            # no informative neighbours; fall back to uniform weights
            n_degenerate += 1
            for i in range(n):
                w[i] = 1.0

        suffix = np.empty(n + 1)
        suffix[n] = 0.0
        for i in range(n - 1, -1, -1):
            suffix[i] = suffix[i + 1] + w[i]

        surv = 1.0
        for j in range(k):
            at_risk = suffix[knot_starts[j]]
            dn = 0.0
            for r in range(ev_offsets[j], ev_offsets[j + 1]):
                dn += w[ev_rows[r]]
            if at_risk > 0.0:
                factor = 1.0 - dn / at_risk
                if factor < 0.0:
                    factor = 0.0
                surv *= factor
            values[iq, j] = surv
    return values, n_degenerate


_beran_numba = njit(cache=True)(_beran_loop)


def _beran_numpy(zq, zt, inv_h, times, knot_starts, ev_rows, ev_offsets, min_ess=0.0):
    nq = zq.shape[0]
    n = zt.shape[0]
    k = knot_starts.shape[0]
    values = np.empty((nq, k))
    n_degenerate = 0

    ev_counts = np.diff(ev_offsets)
    chunk = max(1, int(4_000_000 // max(n, 1)))
    for lo in range(0, nq, chunk):
        hi = min(nq, lo + chunk)
        d2 = (
            ((zq[lo:hi, None, :] - zt[None, :, :]) * inv_h) ** 2
        ).sum(axis=2)
        w = np.exp(-0.5 * d2)
        wmax = w.max(axis=1)
        if min_ess > 0.0:
            sw = w.sum(axis=1)
            sw2 = (w * w).sum(axis=1)
            scale = inv_h
            for _ in range(3):
                thin = (wmax < 1e-100) | (sw * sw < min_ess * sw2)
                if not thin.any():
                    break
                scale *= 0.5
                rows = np.flatnonzero(thin)
                d2_t = (
                    ((zq[lo:hi][rows, None, :] - zt[None, :, :]) * scale) ** 2
                ).sum(axis=2)
                w[rows] = np.exp(-0.5 * d2_t)
                wmax[rows] = w[rows].max(axis=1)
                sw[rows] = w[rows].sum(axis=1)
                sw2[rows] = (w[rows] * w[rows]).sum(axis=1)
            bad = (wmax < 1e-100) | (sw * sw < min_ess * sw2)
        else:
            bad = wmax < 1e-100
        if bad.any():
            n_degenerate += int(bad.sum())
            w[bad] = 1.0
        suffix = np.concatenate(
            [np.cumsum(w[:, ::-1], axis=1)[:, ::-1], np.zeros((hi - lo, 1))], axis=1
        )
        at_risk = suffix[:, knot_starts]
        if ev_rows.size:
            dn_all = np.add.reduceat(w[:, ev_rows], ev_offsets[:-1], axis=1)
            # reduceat yields garbage for empty slices; zero them explicitly
            dn_all[:, ev_counts == 0] = 0.0
        else:
            dn_all = np.zeros((hi - lo, k))
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(at_risk > 0.0, 1.0 - dn_all / at_risk, 1.0)
        np.clip(factor, 0.0, None, out=factor)
        values[lo:hi] = np.cumprod(factor, axis=1)
    return values, n_degenerate


# ---------------------------------------------------------------------------
# Censoring-martingale curves
#
# For subject i with censoring-model knots u_1 < ... < u_r (all <= U_i) and
# per-knot mass kappa_j, the curve at horizon t is
#     mart_i(t) = F_i(t) * sum_{u_j <= t} kappa_j / max(F_i(u_j), floor)
#               + sum_{u_j > t} kappa_j
# which is the discrete integral of Q_t(u) dM_C(u)/S_C(u) with
# Q_t(u) = min(F_i(t)/F_i(u), 1).
# ---------------------------------------------------------------------------


def _mart_curves_loop(kappa, fknot, offsets, knots, grid, fgrid, floor):
    n, g = fgrid.shape
    out = np.empty((n, g))
    for i in range(n):
        lo = offsets[i]
        hi = offsets[i + 1]
        r = hi - lo
        pref = np.empty(r + 1)
        suf = np.empty(r + 1)
        pref[0] = 0.0
        for j in range(r):
            f = fknot[lo + j]
            if f < floor:
                f = floor
            pref[j + 1] = pref[j] + kappa[lo + j] / f
        suf[r] = 0.0
        for j in range(r - 1, -1, -1):
            suf[j] = suf[j + 1] + kappa[lo + j]
        j = 0
        for kk in range(g):
            t = grid[kk]
            while j < r and knots[lo + j] <= t:
                j += 1
            out[i, kk] = fgrid[i, kk] * pref[j] + suf[j]
    return out


_mart_curves_numba = njit(cache=True)(_mart_curves_loop)


def _mart_curves_numpy(kappa, fknot, offsets, knots, grid, fgrid, floor):
    n, g = fgrid.shape
    out = np.empty((n, g))
    for i in range(n):
        lo, hi = offsets[i], offsets[i + 1]
        kap = kappa[lo:hi]
        fk = np.maximum(fknot[lo:hi], floor)
        pref = np.concatenate([[0.0], np.cumsum(kap / fk)])
        suf = np.concatenate([np.cumsum(kap[::-1])[::-1], [0.0]])
        idx = np.searchsorted(knots[lo:hi], grid, side="right")
        out[i] = fgrid[i] * pref[idx] + suf[idx]
    return out


if HAVE_NUMBA and not PURE_NUMPY:
    cox_stats = _cox_stats_numba
    breslow_cumhaz = _breslow_numba
    beran_eval = _beran_numba
    mart_curves = _mart_curves_numba
else:
    cox_stats = _cox_stats_numpy
    breslow_cumhaz = _breslow_numpy
    beran_eval = _beran_numpy
    mart_curves = _mart_curves_numpy

IMPLEMENTATIONS = {
    "cox_stats": {"numba": _cox_stats_numba, "numpy": _cox_stats_numpy},
    "breslow_cumhaz": {"numba": _breslow_numba, "numpy": _breslow_numpy},
    "beran_eval": {"numba": _beran_numba, "numpy": _beran_numpy},
    "mart_curves": {"numba": _mart_curves_numba, "numpy": _mart_curves_numpy},
}
