import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pair(rng, n, r=1):
    return rng.standard_normal((n, r)), rng.standard_normal((n, r))


def random_geometries(count, seed=0, nmin=2, nmax=6, max_cos=0.99):
    """Gaussian rank-1 pairs, rejecting near-colinear ones."""
    g = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(g.integers(nmin, nmax + 1))
        x, z = g.standard_normal(n), g.standard_normal(n)
        if abs(x @ z) <= max_cos * np.linalg.norm(x) * np.linalg.norm(z):
            out.append((x, z))
    return out
