"""Shared synthetic draws for the test suite."""
import numpy as np
import pytest

from itrshift import SourceSample, TargetSample


def expit(z):
    return 1.0 / (1.0 + np.exp(-z))


def make_pair(seed=0, n=300, m=500, p=3, censor_scale=2.0, shift=0.3):
    """A small joint draw: confounded treatment, moderate censoring, shifted
    target covariates. Exponential event times with log-linear rates, so
    nothing here matches the parametric working models exactly."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    a = (rng.random(n) < expit(0.4 * x[:, 0] - 0.2 * x[:, 1])).astype(float)
    t = rng.exponential(scale=np.exp(0.3 * x[:, 0] + 0.2 * a))
    c = rng.exponential(scale=censor_scale, size=n)
    u = np.minimum(t, c)
    delta = (t <= c).astype(float)
    source = SourceSample(x, a, u, delta)
    target = TargetSample(rng.normal(loc=shift, size=(m, p)), np.full(m, 25.0))
    return source, target


@pytest.fixture(scope="session")
def pair():
    return make_pair()
