from pathlib import Path

import numpy as np
import pytest

from shufflereg import RngSeed, Theta, sample_beta_sphere, simulate

REPO_ROOT = Path(__file__).resolve().parent.parent
SCHEMA_DIR = REPO_ROOT / "schemas"


def make_data(n=100, d=4, sigma=0.5, alpha=0.2, seed=0, beta_norm=1.0, stream=0):
    """Simulated dataset with a sphere-drawn coefficient vector."""
    gen = RngSeed(seed, stream).generator()
    beta = sample_beta_sphere(d, beta_norm, gen)
    k = int(round(alpha * n))
    return simulate(n, d, Theta(beta, sigma**2, k / n), k, gen)


def random_interior_theta(d, gen):
    """Random parameters away from the boundary, for derivative checks."""
    beta = gen.standard_normal(d)
    sigma2 = float(gen.uniform(0.3, 2.0))
    alpha = float(gen.uniform(0.1, 0.6))
    return Theta(beta, sigma2, alpha)


def fd_gradient(f, t0, h_scale=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    t0 = np.asarray(t0, dtype=float)
    g = np.empty_like(t0)
    for j in range(t0.size):
        h = h_scale * (1.0 + abs(t0[j]))
        tp, tm = t0.copy(), t0.copy()
        tp[j] += h
        tm[j] -= h
        g[j] = (f(tp) - f(tm)) / (2.0 * h)
    return g


@pytest.fixture
def small_data():
    return make_data(n=60, d=3, sigma=0.5, alpha=0.2, seed=42)
