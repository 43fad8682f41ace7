"""Data containers, validation, and linear decision rules.

Two samples drive everything in this package: a source sample with observed
treatments and right-censored follow-up, and a target sample that carries only
covariates and design weights. Both are plain dataclasses over numpy arrays;
validation happens once, at construction or load time, so the numeric code can
assume clean inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ItrError(Exception):
    """Base class for all package-specific errors."""


class NonFiniteValue(ItrError):
    """An input array contains NaN or infinity."""


class DimensionMismatch(ItrError):
    """Array shapes are inconsistent with each other or with expectations."""


class EmptyArm(ItrError):
    """One treatment arm has no observations."""


class NoEvents(ItrError):
    """No uncensored events are available to fit a survival model."""


class NonPositiveTime(ItrError):
    """A follow-up time or evaluation horizon is zero or negative."""


class NonPositiveWeight(ItrError):
    """A design weight is zero or negative."""


class DegenerateRule(ItrError):
    """A rule coefficient vector cannot be normalized."""


class Separation(ItrError):
    """A binary regression is perfectly separated; coefficients diverge."""


class SingularHessian(ItrError):
    """A Newton step failed because the Hessian is singular."""


class InfeasibleCalibration(ItrError):
    """Calibration constraints cannot be met over the source sample."""


class MissingNuisance(ItrError):
    """An estimator was asked to run without a nuisance model it needs."""


class DegenerateWeights(ItrError):
    """A weight vector has collapsed onto too few subjects to be usable."""


class MissingEIF(ItrError):
    """Per-subject influence values were requested but not computed."""


class ZeroSurvival(ItrError):
    """A censoring-survival evaluation is unusable even after flooring."""


class BadK(ItrError):
    """The number of folds is out of range for the sample sizes."""


class FoldFitFailure(ItrError):
    """Nuisance fitting failed inside one cross-fitting fold."""


class ReplicateFailure(ItrError):
    """A bootstrap replicate could not be evaluated."""


def _require_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} contains non-finite entries")


@dataclass
class SourceSample:
    """Observational sample: covariates, binary treatment, censored follow-up.

    Attributes
    ----------
    x : (n, p) float array of covariates.
    a : (n,) integer array of treatments in {0, 1}.
    u : (n,) float array of observed times, min(event, censoring).
    delta : (n,) integer array, 1 if the event was observed, 0 if censored.
    """

    x: np.ndarray
    a: np.ndarray
    u: np.ndarray
    delta: np.ndarray

    def __post_init__(self) -> None:
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.a = np.asarray(self.a)
        self.u = np.asarray(self.u, dtype=np.float64)
        self.delta = np.asarray(self.delta)
        n = self.x.shape[0]
        if self.a.shape != (n,) or self.u.shape != (n,) or self.delta.shape != (n,):
            raise DimensionMismatch(
                f"source arrays disagree on length: x has {n} rows, "
                f"a {self.a.shape}, u {self.u.shape}, delta {self.delta.shape}"
            )
        _require_finite("x", self.x)
        _require_finite("u", self.u)
        af = np.asarray(self.a, dtype=np.float64)
        _require_finite("a", af)
        df = np.asarray(self.delta, dtype=np.float64)
        _require_finite("delta", df)
        if not np.all((af == 0) | (af == 1)):
            raise DimensionMismatch("treatment must be coded 0/1")
        if not np.all((df == 0) | (df == 1)):
            raise DimensionMismatch("event indicator must be coded 0/1")
        self.a = af.astype(np.int64)
        self.delta = df.astype(np.int64)
        if np.any(self.u <= 0):
            raise NonPositiveTime("observed times must be positive")
        if self.a.sum() == 0 or self.a.sum() == n:
            raise EmptyArm("both treatment arms must be present in the source sample")
        if self.delta.sum() == 0:
            raise NoEvents("source sample has no observed events")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, idx: np.ndarray) -> "SourceSample":
        return SourceSample(self.x[idx], self.a[idx], self.u[idx], self.delta[idx])


@dataclass
class TargetSample:
    """Survey of the deployment population: covariates plus design weights."""

    x: np.ndarray
    design_weight: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        m = self.x.shape[0]
        if self.design_weight is None:
            self.design_weight = np.ones(m)
        self.design_weight = np.asarray(self.design_weight, dtype=np.float64)
        if self.design_weight.shape != (m,):
            raise DimensionMismatch(
                f"design_weight has shape {self.design_weight.shape}, expected ({m},)"
            )
        _require_finite("x", self.x)
        _require_finite("design_weight", self.design_weight)
        if np.any(self.design_weight <= 0):
            raise NonPositiveWeight("design weights must be strictly positive")

    @property
    def m(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, idx: np.ndarray) -> "TargetSample":
        return TargetSample(self.x[idx], self.design_weight[idx])


def with_intercept(x: np.ndarray) -> np.ndarray:
    """Prepend a column of ones: (n, p) -> (n, p + 1)."""
    x = np.atleast_2d(x)
    return np.concatenate([np.ones((x.shape[0], 1)), x], axis=1)


def normalize_eta(raw: np.ndarray) -> np.ndarray:
    """Scale a rule coefficient vector so its last entry has magnitude one.

    The decision I{eta . (1, x) >= 0} is invariant to positive scaling, so we
    fix the scale by the last covariate's coefficient. A vector whose last
    entry is zero has no well-defined representative and is rejected.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.size < 2:
        raise DimensionMismatch("rule coefficients must be a vector of length >= 2")
    _require_finite("eta", raw)
    scale = abs(raw[-1])
    if scale == 0.0:
        raise DegenerateRule("last coefficient is zero; cannot normalize")
    return raw / scale


@dataclass(frozen=True)
class LinearRule:
    """Linear treatment rule: treat when eta . (1, x) >= 0.

    ``eta`` is stored in normalized form (last entry is +1 or -1). Points on
    the decision boundary are assigned treatment 1.
    """

    eta: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "eta", normalize_eta(self.eta))

    @property
    def n_covariates(self) -> int:
        return self.eta.size - 1

    def decide(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if x.shape[1] != self.n_covariates:
            raise DimensionMismatch(
                f"rule expects {self.n_covariates} covariates, got {x.shape[1]}"
            )
        score = with_intercept(x) @ self.eta
        return (score >= 0.0).astype(np.int64)


def apply_rule(rule: LinearRule, x: np.ndarray) -> np.ndarray:
    """Treatment assignment of ``rule`` over rows of ``x`` (boundary treats)."""
    return rule.decide(x)


@dataclass
class ValueEstimate:
    """A point estimate of a rule's population value with its standard error.

    ``influence`` holds the per-subject contributions used for the standard
    error (source rows first, target rows after); it is None for estimators
    that do not admit one.
    """

    value: float
    se: float | None = None
    kind: str = ""
    influence: np.ndarray | None = field(default=None, repr=False)

    def ci(self, level: float = 0.95) -> tuple[float, float]:
        from .inference import wald_ci

        if self.se is None:
            raise ItrError(f"estimator {self.kind!r} has no standard error")
        return wald_ci(self.value, self.se, level)


def _covariate_header(p: int) -> list[str]:
    return [f"x{j + 1}" for j in range(p)]


def _parse_rows(path: str, expected: list[str]) -> np.ndarray:
    """Read a CSV with the given header into a float matrix, one row per record.

    Column names are matched case-insensitively but must all be present; a
    missing one is reported by name. Parse failures point at the offending
    data row (1-based, counting the header as row 1).
    """
    import csv

    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DimensionMismatch(f"{path}: file is empty") from None
        header = [h.strip().lower() for h in header]
        cols = []
        for name in expected:
            if name not in header:
                raise DimensionMismatch(f"{path}: missing column {name!r}")
            cols.append(header.index(name))
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < len(header):
                raise DimensionMismatch(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            try:
                out.append([float(row[c]) for c in cols])
            except ValueError as exc:
                raise NonFiniteValue(f"{path}: row {lineno}: {exc}") from None
        if not out:
            raise DimensionMismatch(f"{path}: no data rows")
    return np.asarray(out, dtype=np.float64)


def _infer_p(path: str, trailing: list[str]) -> int:
    """Count leading x1..xp columns in a CSV whose tail columns are known."""
    import csv

    with open(path, newline="", encoding="utf-8") as handle:
        try:
            header = next(csv.reader(handle))
        except StopIteration:
            raise DimensionMismatch(f"{path}: file is empty") from None
    names = [h.strip().lower() for h in header]
    p = 0
    while f"x{p + 1}" in names:
        p += 1
    if p == 0:
        raise DimensionMismatch(f"{path}: no covariate columns x1, x2, ... found")
    for name in trailing:
        if name not in names:
            raise DimensionMismatch(f"{path}: missing column {name!r}")
    return p


def read_source_csv(path: str) -> SourceSample:
    """Load a source sample from ``x1,...,xp,a,u,delta`` CSV, inferring p."""
    p = _infer_p(path, ["a", "u", "delta"])
    mat = _parse_rows(path, _covariate_header(p) + ["a", "u", "delta"])
    return SourceSample(mat[:, :p], mat[:, p], mat[:, p + 1], mat[:, p + 2])


def read_target_csv(path: str, p: int | None = None) -> TargetSample:
    """Load a target sample from ``x1,...,xp,design_weight`` CSV.

    When ``p`` is given the file must carry exactly that many covariates;
    otherwise the count is inferred from the header.
    """
    found = _infer_p(path, ["design_weight"])
    if p is not None and found != p:
        raise DimensionMismatch(
            f"{path}: target has {found} covariates, source has {p}"
        )
    mat = _parse_rows(path, _covariate_header(found) + ["design_weight"])
    return TargetSample(mat[:, :found], mat[:, found])


def _write_csv(path: str, header: list[str], columns: list[np.ndarray]) -> None:
    import csv

    rows = zip(*columns)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def write_source_csv(path: str, sample: SourceSample) -> None:
    """Write a source sample in the schema read_source_csv expects.

    Floats are written with repr, which round-trips exactly.
    """
    header = _covariate_header(sample.p) + ["a", "u", "delta"]
    cols = [sample.x[:, j] for j in range(sample.p)]
    cols += [sample.a.astype(np.float64), sample.u, sample.delta.astype(np.float64)]
    _write_csv(path, header, cols)


def write_target_csv(path: str, sample: TargetSample) -> None:
    """Write a target sample in the schema read_target_csv expects."""
    header = _covariate_header(sample.p) + ["design_weight"]
    cols = [sample.x[:, j] for j in range(sample.p)]
    cols.append(sample.design_weight)
    _write_csv(path, header, cols)
