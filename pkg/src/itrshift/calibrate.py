"""Entropy balancing: exponential-tilt weights that match target moments.

Source rows receive weights q_i proportional to exp(lam . g(x_i)) such that
the q-weighted moments of g over the source equal the design-weighted moments
over the target. The multiplier solves an unconstrained convex dual,

    minimize_lam  log sum_i exp(lam . (g(x_i) - gbar)),

whose gradient is the moment imbalance, so Newton steps with a line search
converge fast when the constraints are feasible. All iterations run on
standardized features for conditioning.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import DimensionMismatch, InfeasibleCalibration, NonFiniteValue

MomentFn = Callable[[np.ndarray], np.ndarray]


def first_moments(x: np.ndarray) -> np.ndarray:
    """Identity map: balance covariate means."""
    return np.atleast_2d(x)


def second_order_moments(x: np.ndarray) -> np.ndarray:
    """Means, squares, and pairwise products of the covariates."""
    x = np.atleast_2d(x)
    p = x.shape[1]
    cols = [x, x**2]
    for i in range(p):
        for j in range(i + 1, p):
            cols.append((x[:, i] * x[:, j])[:, None])
    return np.concatenate(cols, axis=1)


_TRANSFORMS = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "square": np.square,
}


def named_transform(name: str, x: np.ndarray) -> np.ndarray:
    """Evaluate a transform like ``"exp(x1)"`` on one covariate column."""
    import re

    m = re.fullmatch(r"(\w+)\(x(\d+)\)", name.strip().lower())
    if m is None or m.group(1) not in _TRANSFORMS:
        options = ", ".join(sorted(_TRANSFORMS))
        raise DimensionMismatch(
            f"cannot parse transform {name!r}; expected e.g. exp(x1) with one of {options}"
        )
    col = int(m.group(2)) - 1
    x = np.atleast_2d(x)
    if not 0 <= col < x.shape[1]:
        raise DimensionMismatch(
            f"transform {name!r} refers to column {col + 1}, but x has {x.shape[1]}"
        )
    return _TRANSFORMS[m.group(1)](x[:, col : col + 1])


@dataclass(frozen=True)
class MomentMap:
    """Configurable balance-function map: a moment base plus named transforms.

    Plain classes pickle, unlike closures, so cross-process study and
    bootstrap runs can carry one of these inside their nuisance recipe.
    """

    base: str = "first"
    transforms: tuple[str, ...] = ()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.base == "first":
            cols = [first_moments(x)]
        elif self.base == "first2":
            cols = [second_order_moments(x)]
        elif self.base == "none":
            cols = []
        else:
            raise DimensionMismatch(
                f"unknown moment base {self.base!r}; use 'first', 'first2', or 'none'"
            )
        cols.extend(named_transform(t, x) for t in self.transforms)
        if not cols:
            raise DimensionMismatch("moment map is empty: no base and no transforms")
        return np.concatenate(cols, axis=1)


def _softmax(scores: np.ndarray) -> tuple[np.ndarray, float]:
    """Stable softmax; returns the weights and log of the normalizer."""
    shift = scores.max()
    e = np.exp(scores - shift)
    z = e.sum()
    return e / z, float(np.log(z) + shift)


@dataclass
class Calibration:
    """Fitted entropy-balancing weights and enough state to extend them.

    ``q`` are the normalized weights over the fit rows (they sum to one).
    ``weights_for`` evaluates the same exponential tilt on new rows, which is
    what cross-fitting needs: fit the multiplier on one part of the source,
    weight a disjoint part.
    """

    moments: MomentFn
    mu: np.ndarray
    sigma: np.ndarray
    lam_std: np.ndarray
    target_std: np.ndarray
    q: np.ndarray
    log_z: float
    n_hat: float
    n_iter: int

    def scores(self, x: np.ndarray) -> np.ndarray:
        g = (self.moments(np.atleast_2d(x)) - self.mu) / self.sigma
        return (g - self.target_std) @ self.lam_std

    def weights_for(self, x: np.ndarray, renormalize: bool = True) -> np.ndarray:
        s = self.scores(x)
        if renormalize:
            w, _ = _softmax(s)
            return w
        return np.exp(s - self.log_z)

    def implied_sampling_score(self, x: np.ndarray) -> np.ndarray:
        """Per-row sampling probability the weights correspond to, 1/(N q)."""
        return 1.0 / (self.n_hat * self.weights_for(x, renormalize=False))


def entropy_balance(
    source_x: np.ndarray,
    target_x: np.ndarray,
    target_weight: np.ndarray | None = None,
    moments: MomentFn = first_moments,
    *,
    tol: float = 1e-9,
    max_iter: int = 100,
) -> Calibration:
    """Solve for weights on ``source_x`` matching moments of ``target_x``.

    Raises InfeasibleCalibration when the dual diverges, or when the solver
    stalls with a standardized imbalance above max(tol, 1e-6); both happen
    when the target moments lie outside the convex hull of the source
    moments. Targets on the hull boundary converge to weights
    concentrated on the supporting face; downstream effective-sample-size
    checks reject those when they are too extreme to use.
    """
    source_x = np.atleast_2d(source_x)
    target_x = np.atleast_2d(target_x)
    if source_x.shape[1] != target_x.shape[1]:
        raise DimensionMismatch(
            f"source has {source_x.shape[1]} covariates, target {target_x.shape[1]}"
        )
    m = target_x.shape[0]
    if target_weight is None:
        target_weight = np.ones(m)
    w = np.asarray(target_weight, dtype=np.float64)

    g_src = moments(source_x)
    g_tgt = moments(target_x)
    if not (np.all(np.isfinite(g_src)) and np.all(np.isfinite(g_tgt))):
        raise NonFiniteValue("moment features are not finite")

    mu = g_src.mean(axis=0)
    sigma = g_src.std(axis=0)
    sigma[sigma < 1e-12] = 1.0
    gs = (g_src - mu) / sigma
    target_std = ((g_tgt - mu) / sigma * (w / w.sum())[:, None]).sum(axis=0)

    d = gs - target_std
    k = d.shape[1]
    lam = np.zeros(k)

    def dual(l: np.ndarray) -> tuple[float, np.ndarray, float]:
        q, log_z = _softmax(d @ l)
        return log_z, q, log_z

    val, q, log_z = dual(lam)
    converged = False
    n_iter = 0
    for it in range(max_iter):
        n_iter = it + 1
        grad = q @ d
        if np.max(np.abs(grad)) <= tol:
            converged = True
            break
        dc = d - q @ d
        hess = (dc * q[:, None]).T @ dc
        hess[np.diag_indices(k)] += 1e-12
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = grad
        # backtracking line search on the dual objective
        t = 1.0
        for _ in range(50):
            cand = lam - t * step
            v2, q2, lz2 = dual(cand)
            if v2 <= val - 1e-4 * t * float(grad @ step) or v2 < val:
                lam, val, q, log_z = cand, v2, q2, lz2
                break
            t *= 0.5
        else:
            break
        if np.linalg.norm(lam) > 1e4:
            raise InfeasibleCalibration(
                "tilt multiplier diverged; target moments are not attainable"
            )

    if not converged:
        # damped gradient descent as a slow but robust fallback
        for it in range(200):
            n_iter += 1
            grad = q @ d
            if np.max(np.abs(grad)) <= tol:
                converged = True
                break
            t = 1.0
            while t > 1e-12:
                cand = lam - t * grad
                v2, q2, lz2 = dual(cand)
                if v2 < val:
                    lam, val, q, log_z = cand, v2, q2, lz2
                    break
                t *= 0.5
            if np.linalg.norm(lam) > 1e4:
                raise InfeasibleCalibration(
                    "tilt multiplier diverged; target moments are not attainable"
                )
        grad = q @ d
        converged = converged or np.max(np.abs(grad)) <= tol

    if not converged:
        # the dual can bottom out at floating-point precision with the
        # gradient still a shade above the strict tolerance; accept anything
        # inside the 1e-6 standardized imbalance the weights are held to
        worst = float(np.max(np.abs(q @ d)))
        if worst > max(tol, 1e-6):
            raise InfeasibleCalibration(
                f"moment constraints not met after {n_iter} iterations "
                f"(imbalance {worst:.2e})"
            )

    q = q / q.sum()
    return Calibration(
        moments=moments,
        mu=mu,
        sigma=sigma,
        lam_std=lam,
        target_std=target_std,
        q=q,
        log_z=log_z,
        n_hat=float(w.sum()),
        n_iter=n_iter,
    )
