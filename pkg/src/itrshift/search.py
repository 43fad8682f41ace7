"""Genetic search for the linear rule that maximizes an estimated value.

The decision I{eta . (1, x) >= 0} only depends on eta up to positive scale,
so candidates live in the normalized space where the last coefficient is +1
or -1: a genome is the intercept plus the first p - 1 coefficients, boxed to
[-bound, bound], together with one sign gene. Fitness calls are batched, so
an evaluation of the whole population is a single matrix product against the
samples' decision coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import LinearRule, SourceSample, TargetSample, with_intercept
from .value import Horizon, Nuisances, build_decompositions


@dataclass
class SearchConfig:
    population: int = 100
    generations: int = 200
    tournament: int = 3
    crossover_rate: float = 0.8
    mutation_sd: float = 0.1  # relative to the box half-width
    mutation_decay: float = 0.99
    sign_flip_rate: float = 0.1
    elite: int = 2
    bound: float = 100.0


@dataclass
class SearchResult:
    rule: LinearRule
    value: float
    history: np.ndarray  # best fitness per generation, nondecreasing
    n_evaluations: int = 0


def search_rule(
    value_fn,
    n_covariates: int,
    config: SearchConfig | None = None,
    seed: int | np.random.Generator | None = None,
) -> SearchResult:
    """Maximize ``value_fn`` over normalized rule coefficients.

    ``value_fn`` maps a (B, p + 1) matrix of coefficient rows to a (B,)
    vector of values. Runs are deterministic given the seed.
    """
    cfg = config or SearchConfig()
    rng = (
        seed
        if isinstance(seed, np.random.Generator)
        else np.random.default_rng(seed)
    )
    p = n_covariates
    pop, b = cfg.population, cfg.bound

    genes = rng.uniform(-b, b, size=(pop, p))
    signs = rng.choice(np.array([-1.0, 1.0]), size=pop)
    n_eval = 0

    def fitness(g: np.ndarray, s: np.ndarray) -> np.ndarray:
        nonlocal n_eval
        h = np.concatenate([g, s[:, None]], axis=1)
        n_eval += h.shape[0]
        return np.asarray(value_fn(h), dtype=np.float64)

    fit = fitness(genes, signs)
    history = np.empty(cfg.generations + 1)
    history[0] = fit.max()
    sd = cfg.mutation_sd * b

    for gen in range(cfg.generations):
        order = np.argsort(fit)[::-1]
        elite_idx = order[: cfg.elite]
        n_child = pop - cfg.elite

        # tournament selection, two parents per child
        entrants = rng.integers(0, pop, size=(2 * n_child, cfg.tournament))
        winners = entrants[np.arange(2 * n_child), fit[entrants].argmax(axis=1)]
        pa, pb = winners[:n_child], winners[n_child:]

        child_g = genes[pa].copy()
        child_s = signs[pa].copy()
        cross = rng.random(n_child) < cfg.crossover_rate
        take_b = cross[:, None] & (rng.random((n_child, p)) < 0.5)
        child_g[take_b] = genes[pb][take_b]
        s_from_b = cross & (rng.random(n_child) < 0.5)
        child_s[s_from_b] = signs[pb][s_from_b]

        child_g += rng.normal(0.0, sd, size=(n_child, p))
        np.clip(child_g, -b, b, out=child_g)
        flip = rng.random(n_child) < cfg.sign_flip_rate
        child_s[flip] = -child_s[flip]

        child_fit = fitness(child_g, child_s)
        genes = np.concatenate([genes[elite_idx], child_g], axis=0)
        signs = np.concatenate([signs[elite_idx], child_s])
        fit = np.concatenate([fit[elite_idx], child_fit])
        history[gen + 1] = fit.max()
        sd *= cfg.mutation_decay

    best = int(fit.argmax())
    eta = np.concatenate([genes[best], [signs[best]]])
    return SearchResult(
        rule=LinearRule(eta),
        value=float(fit[best]),
        history=np.maximum.accumulate(history),
        n_evaluations=n_eval,
    )


def optimize_rule(
    source: SourceSample,
    target: TargetSample,
    nuis: Nuisances,
    horizon: Horizon,
    kind: str = "acw",
    config: SearchConfig | None = None,
    seed: int | np.random.Generator | None = None,
    **opts,
) -> SearchResult:
    """Search for the rule maximizing one estimator's value."""
    dec = build_decompositions(source, target, nuis, horizon, (kind,), **opts)[kind]
    xs = with_intercept(source.x)
    xt = with_intercept(target.x)

    def value_fn(h: np.ndarray) -> np.ndarray:
        d_src = (xs @ h.T >= 0.0).T.astype(np.float64)
        d_tgt = (xt @ h.T >= 0.0).T.astype(np.float64)
        return dec.batch_values(d_src, d_tgt)

    return search_rule(value_fn, source.p, config, seed)
