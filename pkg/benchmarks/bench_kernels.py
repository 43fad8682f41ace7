"""Timing comparison of the compiled and pure-numpy kernel backends.

Builds realistic inputs for each hot kernel (Cox partial-likelihood
accumulation, Breslow baseline hazard, kernel-weighted product-limit curves,
censoring-martingale curves), runs both implementations from
``itrshift._kernels.IMPLEMENTATIONS``, checks that they agree, and reports
best-of-``--repeats`` wall times. The numba path is called once per kernel
before timing so compilation is excluded.

Run as ``python benchmarks/bench_kernels.py``; ``ITR_PURE_NUMPY`` has no
effect here since both backends are driven explicitly.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from itrshift._kernels import HAVE_NUMBA, IMPLEMENTATIONS


def _survival_rows(rng: np.random.Generator, n: int, p: int):
    """Sorted synthetic follow-up data plus the knot layout kernels expect."""
    z = rng.normal(size=(n, p))
    raw = rng.exponential(scale=np.exp(0.3 * z[:, 0]))
    cens = rng.exponential(scale=1.2, size=n)
    times = np.minimum(raw, cens)
    events = raw <= cens
    order = np.argsort(times, kind="stable")
    times, events, z = times[order], events[order], z[order]

    knots = np.unique(times[events])
    knot_starts = np.searchsorted(times, knots, side="left").astype(np.int64)
    ev_rows = []
    ev_offsets = [0]
    for t in knots:
        rows = np.flatnonzero((times == t) & events)
        ev_rows.extend(rows.tolist())
        ev_offsets.append(len(ev_rows))
    return (
        times,
        events,
        z,
        knots,
        knot_starts,
        np.asarray(ev_rows, dtype=np.int64),
        np.asarray(ev_offsets, dtype=np.int64),
    )


def cox_case(rng: np.random.Generator, n: int):
    times, events, z, *_ = _survival_rows(rng, n, 4)
    beta = rng.normal(scale=0.2, size=4)
    return (times, events, z, beta)


def breslow_case(rng: np.random.Generator, n: int):
    times, events, z, knots, knot_starts, ev_rows, ev_offsets = _survival_rows(rng, n, 4)
    w = np.exp(z @ np.full(4, 0.1))
    knot_events = np.add.reduceat(
        np.concatenate([w[ev_rows], [0.0]]), ev_offsets[:-1]
    )[: knots.size]
    knot_events[np.diff(ev_offsets) == 0] = 0.0
    return (times, events, w, knot_starts, knot_events)


def beran_case(rng: np.random.Generator, n: int):
    times, events, z, knots, knot_starts, ev_rows, ev_offsets = _survival_rows(rng, n, 2)
    zq = rng.normal(size=(max(200, n // 4), 2))
    inv_h = 1.0 / 0.8
    return (zq, z, inv_h, times, knot_starts, ev_rows, ev_offsets)


def mart_case(rng: np.random.Generator, n: int):
    per = rng.integers(5, 60, size=n)
    offsets = np.concatenate([[0], np.cumsum(per)]).astype(np.int64)
    total = int(offsets[-1])
    knots = np.concatenate([np.sort(rng.uniform(0, 3, size=k)) for k in per])
    kappa = rng.normal(scale=0.02, size=total)
    fknot = rng.uniform(0.1, 1.0, size=total)
    grid = np.linspace(0.05, 3.0, 40)
    fgrid = rng.uniform(0.1, 1.0, size=(n, grid.size))
    return (kappa, fknot, offsets, knots, grid, fgrid, 0.05)


CASES = {
    "cox_stats": (cox_case, 20_000),
    "breslow_cumhaz": (breslow_case, 200_000),
    "beran_eval": (beran_case, 2_000),
    "mart_curves": (mart_case, 20_000),
}


def _flatten(result):
    if isinstance(result, tuple):
        return np.concatenate([np.ravel(np.asarray(r, dtype=np.float64)) for r in result])
    return np.ravel(np.asarray(result, dtype=np.float64))


def _best_time(fn, args, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--scale", type=float, default=1.0, help="multiply case sizes")
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    if not HAVE_NUMBA:
        print("numba is not importable; only the numpy backend will run")

    rng = np.random.default_rng(args.seed)
    header = f"{'kernel':<16}{'size':>9}{'numpy':>12}{'numba':>12}{'speedup':>9}{'max|diff|':>12}"
    print(header)
    print("-" * len(header))

    for name, (maker, base_n) in CASES.items():
        n = max(50, int(base_n * args.scale))
        case = maker(rng, n)
        impls = IMPLEMENTATIONS[name]

        ref = _flatten(impls["numpy"](*case))
        if HAVE_NUMBA:
            out = _flatten(impls["numba"](*case))  # also triggers compilation
            diff = float(np.max(np.abs(ref - out)))
        else:
            diff = float("nan")

        t_np = _best_time(impls["numpy"], case, args.repeats)
        t_nb = _best_time(impls["numba"], case, args.repeats) if HAVE_NUMBA else float("nan")
        ratio = t_np / t_nb if HAVE_NUMBA else float("nan")
        print(
            f"{name:<16}{n:>9}{t_np * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms"
            f"{ratio:>8.1f}x{diff:>12.2e}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
