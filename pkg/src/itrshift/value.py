"""Value estimation for linear treatment rules under covariate shift.

Every estimator here reduces to the same shape,

    value(rule) = const + sum_i q_i * h_i(d_i) + sum_j w_j * f_j(d_j),

where d are the rule's 0/1 decisions, h_i(d) = h0_i + (h1_i - h0_i) d over the
source rows and f_j(d) likewise over the target rows. Building those per-row
coefficients once per nuisance fit is the expensive part; evaluating a rule,
or a whole population of candidate rules, is then a matrix product. Standard
errors come from the per-row contributions, centered within each sample (and
within each cross-fitting fold when folds are present).

Supported estimator kinds:

- ``naive``      source-only inverse-propensity weighting, no shift correction
- ``ipsw``       inverse-probability-of-sampling weighting of the source
- ``cw_ipw``     calibration-weighted inverse-propensity weighting
- ``cw_or``      calibration-weighted outcome regression over the source
- ``or_target``  outcome regression averaged over the target sample
- ``acw``        calibration-weighted augmented estimator (doubly robust)
- ``dr_source``  augmented estimator over the source alone, no shift correction
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .calibrate import Calibration
from .data import (
    DegenerateWeights,
    DimensionMismatch,
    ItrError,
    LinearRule,
    MissingEIF,
    MissingNuisance,
    SourceSample,
    TargetSample,
    ValueEstimate,
    ZeroSurvival,
)
from .nuisance import (
    ArmSpecificSurvival,
    PROPENSITY_FLOOR,
    SURVIVAL_FLOOR,
    floor_probability,
    floor_survival,
)

ALL_KINDS = ("naive", "ipsw", "cw_ipw", "cw_or", "or_target", "acw", "dr_source")


@dataclass(frozen=True)
class Horizon:
    """What to estimate: P(T >= time), or E[min(T, time)] when ``rmst``."""

    time: float
    rmst: bool = False

    def __post_init__(self) -> None:
        if not np.isfinite(self.time) or self.time <= 0:
            from .data import NonPositiveTime

            raise NonPositiveTime(f"horizon must be positive, got {self.time}")


def evaluation_grid(
    source: SourceSample, horizon: Horizon
) -> tuple[np.ndarray, np.ndarray, float]:
    """Times, integration weights, and additive constant for a horizon.

    Survival probability at t needs the single time t with unit weight.
    Restricted mean life integrates the survival curve over [0, L] as a step
    function anchored at the source sample's distinct event times; the segment
    before the first event has survival one, contributing its length as a
    constant.
    """
    if not horizon.rmst:
        return np.array([horizon.time]), np.array([1.0]), 0.0
    cap = horizon.time
    ev = np.unique(source.u[source.delta == 1])
    ev = ev[ev <= cap]
    if ev.size == 0:
        return np.zeros(0), np.zeros(0), cap
    weights = np.diff(np.concatenate([ev, [cap]]))
    return ev, weights, float(ev[0])


@dataclass
class Nuisances:
    """Everything a value estimator may need, fitted elsewhere.

    Any subset may be None; each estimator kind checks for what it uses.
    """

    propensity: object | None = None  # has predict_proba(x) -> P(A=1 | x)
    censoring: ArmSpecificSurvival | None = None
    outcome: ArmSpecificSurvival | None = None
    sampling: object | None = None  # has predict_proba(x) -> P(in source | x)
    calibration: Calibration | None = None


def paired_survival(model, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """S(t_i | x_i) row by row, using a fast path when the model has one."""
    if hasattr(model, "survival_at"):
        return model.survival_at(x, t)
    distinct = np.unique(t)
    grid = model.survival_grid(x, distinct)
    return grid[np.arange(x.shape[0]), np.searchsorted(distinct, t)]


# ---------------------------------------------------------------------------
# per-subject censoring-martingale pieces
# ---------------------------------------------------------------------------


def _censoring_pieces(
    source: SourceSample, nuis: Nuisances
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-subject ingredients of the censoring-adjustment terms.

    Returns (sc_at_u, kappa, fknot, knots, offsets): the floored censoring
    survival at each subject's own time, and the flattened ragged per-subject
    knot arrays feeding the martingale-curve kernel. Knot j of subject i
    carries mass

        kappa_j = 1{censored at u_j} / S_C(u_j) - (1/S_C(u_j) - 1/S_C(u_{j-1}))

    over the censoring model's jump times up to and including U_i, so that
    with a flat transform the masses telescope to 1 - delta_i / S_C(U_i).
    """
    n = source.n
    sc_at_u = np.empty(n)
    counts = np.empty(n, dtype=np.int64)

    per_arm: dict[int, dict[str, np.ndarray]] = {}
    for arm in (0, 1):
        rows = np.flatnonzero(source.a == arm)
        cmod = nuis.censoring.model(arm)
        omod = nuis.outcome.model(arm)
        x_r = source.x[rows]
        u_r = source.u[rows]
        knots = cmod.jump_times()
        k = knots.size
        c_i = np.searchsorted(knots, u_r, side="right")

        sc = floor_survival(cmod.survival_grid(x_r, knots)) if k else np.ones((rows.size, 0))
        if k and not np.all(np.isfinite(sc)):
            raise ZeroSurvival(
                f"censoring survival for arm {arm} is not finite at some jump times"
            )
        inv = 1.0 / sc if k else sc
        kappa_m = np.empty((rows.size, k))
        if k:
            kappa_m[:, 0] = -(inv[:, 0] - 1.0)
            kappa_m[:, 1:] = -(inv[:, 1:] - inv[:, :-1])
        f_m = omod.survival_grid(x_r, knots) if k else np.ones((rows.size, 0))

        if k:
            sc_u = np.where(
                c_i > 0, sc[np.arange(rows.size), np.maximum(c_i - 1, 0)], 1.0
            )
        else:
            sc_u = np.ones(rows.size)
        f_u = paired_survival(omod, x_r, u_r)
        # final slot at U_i itself: only the censoring indicator contributes,
        # because the floored curve is flat from the last knot to U_i
        kappa_app = (1.0 - source.delta[rows]) / sc_u

        sc_at_u[rows] = sc_u
        counts[rows] = c_i + 1
        cols = np.arange(k)
        keep = (cols[None, :] < c_i[:, None]) if k else np.zeros((rows.size, 0), bool)
        keep = np.concatenate([keep, np.ones((rows.size, 1), bool)], axis=1)
        per_arm[arm] = {
            "rows": rows,
            "kappa": np.concatenate([kappa_m, kappa_app[:, None]], axis=1)[keep],
            "fknot": np.concatenate([f_m, f_u[:, None]], axis=1)[keep],
            "knots": np.concatenate(
                [np.broadcast_to(knots, (rows.size, k)), u_r[:, None]], axis=1
            )[keep],
            "counts": c_i + 1,
        }

    offsets = np.zeros(n + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(counts)
    total = offsets[-1]
    kappa = np.empty(total)
    fknot = np.empty(total)
    knots_flat = np.empty(total)
    for arm in (0, 1):
        d = per_arm[arm]
        rows, cts = d["rows"], d["counts"]
        starts = np.concatenate([[0], np.cumsum(cts)[:-1]])
        within = np.arange(cts.sum()) - np.repeat(starts, cts)
        dest = np.repeat(offsets[rows], cts) + within
        kappa[dest] = d["kappa"]
        fknot[dest] = d["fknot"]
        knots_flat[dest] = d["knots"]
    return sc_at_u, kappa, fknot, knots_flat, offsets


def censoring_martingale_term(
    u: float,
    delta: int,
    knots: np.ndarray,
    sc_at_knots: np.ndarray,
    q,
) -> float:
    """Discrete censoring-martingale integral for a single subject.

    ``knots`` are the jump times of the subject's censoring survival curve,
    ``sc_at_knots`` the curve's values there (floored by the caller), and
    ``q`` maps a time to the transform applied inside the integral. Two parts
    accumulate: the counting jump at the subject's own time ``u``, worth
    (1 - delta) / S_C(u), and compensator increments at curve knots up to
    ``u``, each worth the telescoping difference of -1/S_C. With ``q``
    constantly one the sum collapses to 1 - delta / S_C(u).

    This is the readable one-subject reference for the vectorized kernel used
    by the estimators; tests hold the two together.
    """
    knots = np.asarray(knots, dtype=np.float64)
    sc = np.asarray(sc_at_knots, dtype=np.float64)
    if knots.shape != sc.shape:
        raise DimensionMismatch("knots and survival values must align")
    if sc.size and (not np.all(np.isfinite(sc)) or np.any(sc <= 0.0)):
        raise ZeroSurvival("censoring survival must be positive and finite")
    total = 0.0
    prev = 1.0
    for t_j, s_j in zip(knots, sc):
        if t_j > u:
            break
        total -= (1.0 / s_j - 1.0 / prev) * q(t_j)
        prev = s_j
    # the step curve is flat from the last knot at or before u, so S_C(u) = prev
    total += (1.0 - delta) / prev * q(u)
    return total


def _own_arm_grid(
    source: SourceSample, models: ArmSpecificSurvival, times: np.ndarray
) -> np.ndarray:
    """S(t_k | A_i, x_i) for every subject at every grid time, (n, G)."""
    out = np.empty((source.n, times.size))
    for arm in (0, 1):
        rows = np.flatnonzero(source.a == arm)
        out[rows] = models.model(arm).survival_grid(source.x[rows], times)
    return out


@dataclass
class SourceTerms:
    """Grid-contracted per-subject pieces of the source-side estimators."""

    ipcw: np.ndarray  # weighted observed-survival transform
    resid: np.ndarray | None  # ipcw - model + martingale, None without models
    s1: np.ndarray | None  # outcome model under treatment 1
    s0: np.ndarray | None
    pi1: np.ndarray | None  # floored propensity


def source_terms(
    source: SourceSample,
    nuis: Nuisances,
    times: np.ndarray,
    weights: np.ndarray,
    *,
    need_ipcw: bool,
    need_resid: bool,
    need_outcome: bool,
) -> SourceTerms:
    n = source.n
    g = times.size

    pi1 = None
    if nuis.propensity is not None:
        pi1 = floor_probability(nuis.propensity.predict_proba(source.x))

    if g == 0:
        z = np.zeros(n)
        return SourceTerms(
            ipcw=z,
            resid=z if need_resid else None,
            s1=z if need_outcome else None,
            s0=z if need_outcome else None,
            pi1=pi1,
        )

    if (need_ipcw or need_resid) and nuis.censoring is None:
        raise MissingNuisance("this estimator needs a censoring model")
    if (need_resid or need_outcome) and nuis.outcome is None:
        raise MissingNuisance("this estimator needs outcome survival models")
    sc_at_u, kappa, fknot, knots_flat, offsets = (
        _censoring_pieces(source, nuis) if need_resid else (None,) * 5
    )
    ipcw = np.zeros(n)
    if need_ipcw or need_resid:
        if sc_at_u is None:
            # ipcw only needs the subject's own censoring survival
            sc_at_u = np.empty(n)
            for arm in (0, 1):
                rows = np.flatnonzero(source.a == arm)
                sc_at_u[rows] = floor_survival(
                    paired_survival(
                        nuis.censoring.model(arm), source.x[rows], source.u[rows]
                    )
                )
        # sum of weights over grid times at or before U_i
        wcum = np.concatenate([[0.0], np.cumsum(weights)])
        ipcw = source.delta / sc_at_u * wcum[np.searchsorted(times, source.u, "right")]

    resid = None
    s1 = s0 = None
    if need_resid:
        fgrid = _own_arm_grid(source, nuis.outcome, times)
        mart = np.asarray(
            _kernels.mart_curves(
                kappa, fknot, offsets, knots_flat, times, fgrid, SURVIVAL_FLOOR
            )
        )
        resid = ipcw - fgrid @ weights + mart @ weights
    if need_outcome:
        s1 = nuis.outcome.model(1).survival_grid(source.x, times) @ weights
        s0 = nuis.outcome.model(0).survival_grid(source.x, times) @ weights
    return SourceTerms(ipcw=ipcw, resid=resid, s1=s1, s0=s0, pi1=pi1)


def target_terms(
    target: TargetSample,
    nuis: Nuisances,
    times: np.ndarray,
    weights: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Grid-contracted outcome-model values over the target, per arm."""
    if nuis.outcome is None:
        raise MissingNuisance("this estimator needs outcome survival models")
    m = target.m
    if times.size == 0:
        return np.zeros(m), np.zeros(m)
    f0 = np.empty(m)
    f1 = np.empty(m)
    chunk = max(1, int(4_000_000 // max(times.size, 1)))
    for lo in range(0, m, chunk):
        hi = min(m, lo + chunk)
        f0[lo:hi] = nuis.outcome.model(0).survival_grid(target.x[lo:hi], times) @ weights
        f1[lo:hi] = nuis.outcome.model(1).survival_grid(target.x[lo:hi], times) @ weights
    return f0, f1


# ---------------------------------------------------------------------------
# the linear-in-decisions decomposition
# ---------------------------------------------------------------------------


@dataclass
class ValueDecomposition:
    """A value estimator frozen at fitted nuisances, linear in the decisions.

    ``src_fold``/``tgt_fold`` mark cross-fitting folds for the standard
    error's centering; all zeros when there is no cross-fitting.
    """

    kind: str
    const: float
    src_w: np.ndarray
    src_h0: np.ndarray
    src_h1: np.ndarray
    tgt_w: np.ndarray
    tgt_f0: np.ndarray
    tgt_f1: np.ndarray
    src_fold: np.ndarray = field(default=None)  # type: ignore[assignment]
    tgt_fold: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.src_fold is None:
            self.src_fold = np.zeros(self.src_w.size, dtype=np.int64)
        if self.tgt_fold is None:
            self.tgt_fold = np.zeros(self.tgt_w.size, dtype=np.int64)

    def value(self, d_src: np.ndarray, d_tgt: np.ndarray) -> float:
        h = self.src_h0 + (self.src_h1 - self.src_h0) * d_src
        f = self.tgt_f0 + (self.tgt_f1 - self.tgt_f0) * d_tgt
        return float(self.const + self.src_w @ h + self.tgt_w @ f)

    def batch_values(self, d_src: np.ndarray, d_tgt: np.ndarray) -> np.ndarray:
        """Values for many rules at once; rows of d_* are rules."""
        base = (
            self.const
            + float(self.src_w @ self.src_h0)
            + float(self.tgt_w @ self.tgt_f0)
        )
        out = np.full(d_src.shape[0], base)
        out += d_src @ (self.src_w * (self.src_h1 - self.src_h0))
        out += d_tgt @ (self.tgt_w * (self.tgt_f1 - self.tgt_f0))
        return out

    def estimate(self, d_src: np.ndarray, d_tgt: np.ndarray) -> ValueEstimate:
        h = self.src_h0 + (self.src_h1 - self.src_h0) * d_src
        f = self.tgt_f0 + (self.tgt_f1 - self.tgt_f0) * d_tgt
        val = float(self.const + self.src_w @ h + self.tgt_w @ f)

        hc = _center_within(self.src_w, h, self.src_fold)
        fc = _center_within(self.tgt_w, f, self.tgt_fold)
        n_tot = self.src_w.size + self.tgt_w.size
        phi = n_tot * np.concatenate([self.src_w * hc, self.tgt_w * fc])
        se = float(np.sqrt(np.mean(phi**2) / n_tot))
        return ValueEstimate(value=val, se=se, kind=self.kind, influence=phi)


def _center_within(w: np.ndarray, h: np.ndarray, fold: np.ndarray) -> np.ndarray:
    """Subtract the w-weighted mean of h within each fold label."""
    if w.size == 0:
        return h
    nf = int(fold.max()) + 1
    wsum = np.bincount(fold, weights=w, minlength=nf)
    whsum = np.bincount(fold, weights=w * h, minlength=nf)
    center = np.where(wsum != 0, whsum / np.where(wsum == 0, 1.0, wsum), 0.0)
    return h - center[fold]


def build_decompositions(
    source: SourceSample,
    target: TargetSample,
    nuis: Nuisances,
    horizon: Horizon,
    kinds: tuple[str, ...] = ("acw",),
    *,
    ipsw_normalized: bool = True,
) -> dict[str, ValueDecomposition]:
    """Per-row coefficients of each requested estimator at one nuisance fit."""
    times, weights, const = evaluation_grid(source, horizon)
    return build_from_grid(
        source, target, nuis, times, weights, const, kinds,
        ipsw_normalized=ipsw_normalized,
    )


def build_from_grid(
    source: SourceSample,
    target: TargetSample,
    nuis: Nuisances,
    times: np.ndarray,
    weights: np.ndarray,
    const: float,
    kinds: tuple[str, ...],
    *,
    ipsw_normalized: bool = True,
) -> dict[str, ValueDecomposition]:
    """Same as ``build_decompositions`` but on an externally fixed time grid,
    which is what cross-fitting needs to keep folds comparable."""
    for k in kinds:
        if k not in ALL_KINDS:
            raise ItrError(f"unknown estimator kind {k!r}; options: {ALL_KINDS}")

    n, m = source.n, target.m

    need_resid = any(k in ("acw", "dr_source") for k in kinds)
    need_ipcw = any(k in ("naive", "ipsw", "cw_ipw") for k in kinds)
    need_outcome = any(k in ("cw_or", "dr_source") for k in kinds)
    need_src = any(k != "or_target" for k in kinds)
    need_tgt_outcome = any(k in ("or_target", "acw") for k in kinds)

    st = (
        source_terms(
            source, nuis, times, weights,
            need_ipcw=need_ipcw, need_resid=need_resid, need_outcome=need_outcome,
        )
        if need_src
        else None
    )
    if need_tgt_outcome:
        f0, f1 = target_terms(target, nuis, times, weights)
    zeros_n = np.zeros(n)
    zeros_m = np.zeros(m)

    def masked(vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if st.pi1 is None:
            raise MissingNuisance("this estimator needs a propensity model")
        m1 = (source.a == 1) / st.pi1
        m0 = (source.a == 0) / (1.0 - st.pi1)
        return vals * m0, vals * m1

    tgt_design = target.design_weight / target.design_weight.sum()

    out: dict[str, ValueDecomposition] = {}
    for kind in kinds:
        if kind == "naive":
            h0, h1 = masked(st.ipcw)
            dec = ValueDecomposition(
                kind, const, np.full(n, 1.0 / n), h0, h1, zeros_m, zeros_m, zeros_m
            )
        elif kind == "ipsw":
            if nuis.sampling is None:
                raise MissingNuisance("ipsw needs a sampling-score model")
            e = 1.0 / floor_probability(nuis.sampling.predict_proba(source.x))
            q = e / e.sum() if ipsw_normalized else e / target.design_weight.sum()
            h0, h1 = masked(st.ipcw)
            dec = ValueDecomposition(kind, const, q, h0, h1, zeros_m, zeros_m, zeros_m)
        elif kind == "cw_ipw":
            q = _calibration_weights(nuis, source)
            h0, h1 = masked(st.ipcw)
            dec = ValueDecomposition(kind, const, q, h0, h1, zeros_m, zeros_m, zeros_m)
        elif kind == "cw_or":
            q = _calibration_weights(nuis, source)
            dec = ValueDecomposition(
                kind, const, q, st.s0, st.s1, zeros_m, zeros_m, zeros_m
            )
        elif kind == "or_target":
            dec = ValueDecomposition(
                kind, const, zeros_n, zeros_n, zeros_n, tgt_design, f0, f1
            )
        elif kind == "acw":
            q = _calibration_weights(nuis, source)
            h0, h1 = masked(st.resid)
            dec = ValueDecomposition(kind, const, q, h0, h1, tgt_design, f0, f1)
        else:  # dr_source
            r0, r1 = masked(st.resid)
            dec = ValueDecomposition(
                kind,
                const,
                np.full(n, 1.0 / n),
                st.s0 + r0,
                st.s1 + r1,
                zeros_m,
                zeros_m,
                zeros_m,
            )
        for side, w in (("source", dec.src_w), ("target", dec.tgt_w)):
            total = w.sum()
            if total > 0:
                ess = total**2 / np.sum(w**2)
                if ess < 5.0:
                    raise DegenerateWeights(
                        f"{kind}: {side} weights concentrate on too few subjects "
                        f"(effective sample size {ess:.2f} < 5)"
                    )
        out[kind] = dec
    return out


def _calibration_weights(nuis: Nuisances, source: SourceSample) -> np.ndarray:
    if nuis.calibration is None:
        raise MissingNuisance("this estimator needs calibration weights")
    if nuis.calibration.q.size == source.n:
        return nuis.calibration.q
    return nuis.calibration.weights_for(source.x)


def estimate_value(
    source: SourceSample,
    target: TargetSample,
    nuis: Nuisances,
    rule: LinearRule,
    horizon: Horizon,
    kind: str = "acw",
    **opts,
) -> ValueEstimate:
    """Point estimate and standard error of one rule's value."""
    dec = build_decompositions(source, target, nuis, horizon, (kind,), **opts)[kind]
    return dec.estimate(rule.decide(source.x), rule.decide(target.x))


def value_curve(
    source: SourceSample,
    target: TargetSample,
    nuis: Nuisances,
    rule: LinearRule,
    times: np.ndarray,
    kind: str = "acw",
    **opts,
) -> np.ndarray:
    """Estimated survival value of one rule at several horizons.

    The curve is the raw pointwise estimator, not corrected for monotonicity.
    """
    times = np.asarray(times, dtype=np.float64)
    out = np.empty(times.size)
    for i, t in enumerate(times):
        if t == 0.0:
            # surviving past time zero is certain; the estimator's horizon
            # machinery only makes sense for strictly positive times
            out[i] = 1.0
            continue
        out[i] = estimate_value(
            source, target, nuis, rule, Horizon(float(t)), kind, **opts
        ).value
    return out


def rmst_from_curve(times: np.ndarray, values: np.ndarray, horizon: float) -> float:
    """Integrate a right-continuous step survival curve over [0, horizon].

    The curve is one before the first grid time, equals ``values[k]`` on
    [times[k], times[k+1]), and holds its last value out to the horizon, so
    the integral is an exact sum of segment widths times values.
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if times.shape != values.shape or times.ndim != 1:
        raise DimensionMismatch("curve times and values must be equal-length vectors")
    if horizon <= 0:
        from .data import NonPositiveTime

        raise NonPositiveTime(f"horizon must be positive, got {horizon}")
    if times.size == 0:
        return float(horizon)
    if np.any(np.diff(times) <= 0):
        raise DimensionMismatch("curve times must be strictly increasing")
    if times[0] < 0 or times[-1] > horizon:
        raise DimensionMismatch("curve times must lie within [0, horizon]")
    widths = np.diff(np.concatenate([times, [horizon]]))
    return float(times[0] + widths @ values)


def eif_variance(
    estimate: ValueEstimate, n_total: int | None = None
) -> tuple[float, float]:
    """Plug-in variance and standard error from stored influence values.

    The variance is the mean squared influence value; the standard error
    divides by the combined sample size, which defaults to the number of
    stored values (source plus target rows).
    """
    if estimate.influence is None:
        raise MissingEIF(
            f"estimator {estimate.kind!r} did not record influence values"
        )
    phi = np.asarray(estimate.influence, dtype=np.float64)
    total = phi.size if n_total is None else int(n_total)
    variance = float(np.mean(phi**2))
    return variance, float(np.sqrt(variance / total))
