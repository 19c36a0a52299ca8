import math

import numpy as np
import pytest

from conftest import fd_grad, fd_jacobian, rel_err
from geodesic_mc.core import DenseAMatrices, DenseMetric
from geodesic_mc.integrators import g_vector
from geodesic_mc.models.lgcp import (
    DEFAULT_BETA,
    DEFAULT_MU,
    DEFAULT_SIGMA2,
    LGCPModel,
    generate,
    grid_covariance,
    plateau_increase,
)


@pytest.fixture
def small(rng):
    x, y = generate(4, DEFAULT_MU, DEFAULT_SIGMA2, DEFAULT_BETA, rng)
    return LGCPModel(y, 4), x


def test_default_constants():
    assert DEFAULT_BETA == pytest.approx(1 / 33)
    assert DEFAULT_MU == pytest.approx(math.log(126) - 1.91 / 2)


def test_degenerate_field(rng):
    n, mu = 4, 3.0
    counts = []
    for _ in range(2000):
        x, y = generate(n, mu, 0.0, DEFAULT_BETA, rng)
        counts.append(y)
    assert np.all(x == mu)
    lam = math.exp(mu) / n**2
    counts = np.array(counts, dtype=float)
    assert abs(counts.mean() - lam) < 3 * math.sqrt(lam / counts.size)


def test_field_mean(rng):
    n, mu = 3, 1.0
    draws = np.array([generate(n, mu, 1.91, DEFAULT_BETA, rng)[0] for _ in range(1000)])
    se = math.sqrt(1.91 / 1000)
    assert np.all(np.abs(draws.mean(axis=0) - mu) < 3.5 * se)


def test_covariance_shape_and_row_major_order():
    cov = grid_covariance(3, 2.0, 0.5)
    # cells (0,0) and (0,1) are one apart; (0,0) and (1,1) are sqrt(2) apart
    assert cov[0, 1] == pytest.approx(2.0 * math.exp(-1 / 1.5))
    assert cov[0, 4] == pytest.approx(2.0 * math.exp(-math.sqrt(2) / 1.5))
    assert np.allclose(np.diag(cov), 2.0)


def test_gradient_vanishes_at_balanced_state():
    n, mu = 4, 2.0
    y = np.full(n * n, math.exp(mu) / n**2)
    m = LGCPModel(y, n, mu=mu)
    assert np.max(np.abs(m.grad_log_density(np.full(n * n, mu)))) < 1e-10


def test_single_cell_score():
    n = 2
    y = np.array([3.0, 0.0, 0.0, 0.0])
    m = LGCPModel(y, n)
    x = np.full(4, math.log(2.0 * n * n))
    assert m.likelihood_grad(x)[0] == pytest.approx(1.0)


def test_gradient_finite_differences(rng):
    x_true, y = generate(8, DEFAULT_MU, DEFAULT_SIGMA2, DEFAULT_BETA, rng)
    m = LGCPModel(y, 8)
    for _ in range(3):
        x = x_true + 0.3 * rng.normal(size=64)
        assert rel_err(m.grad_log_density(x), fd_grad(m.log_density, x, 1e-6)) < 1e-5


def test_metric_derivatives(small, rng):
    m, x_true = small
    x = x_true + 0.2 * rng.normal(size=16)
    bundle = m.metric(x)
    derivs = bundle.dense_derivs()
    e = m.intensity(x)
    for k in range(16):
        assert np.count_nonzero(derivs[k]) == 1
        assert derivs[k][k, k] == e[k]
    fd = fd_jacobian(lambda z: m.metric(z).dense(), x, 1e-6)
    assert rel_err(derivs, fd) < 1e-6


def test_metric_tends_to_prior_precision(small):
    m, _ = small
    G = m.metric(np.full(16, -800.0)).dense()
    assert np.allclose(G, m.precision, atol=1e-12)


def test_metric_spd(small, rng):
    m, _ = small
    for scale in (0.1, 3.0, 10.0):
        G = m.metric(DEFAULT_MU + scale * rng.normal(size=16)).dense()
        assert np.min(np.linalg.eigvalsh(G)) > 0


def test_rank_one_sweep_matches_dense(small, rng):
    m, x_true = small
    bundle = m.metric(x_true)
    p = bundle.sample(rng)
    fast = g_vector(p, 0.1, bundle.a_matrices())
    dense = g_vector(p, 0.1, DenseAMatrices(bundle.a_matrices().dense()))
    assert np.max(np.abs(fast - dense)) < 1e-10


def test_rank_one_matrices_match_definition(small, rng):
    m, x_true = small
    bundle = m.metric(x_true)
    g_inv = np.linalg.inv(bundle.dense())
    expected = np.array([0.5 * g_inv @ d @ g_inv for d in bundle.dense_derivs()])
    assert np.max(np.abs(bundle.a_matrices().dense() - expected)) < 1e-12
    dense = DenseMetric(bundle.dense(), bundle.dense_derivs())
    assert np.allclose(bundle.trace_terms(), dense.trace_terms(), atol=1e-12)


def test_bad_counts():
    with pytest.raises(ValueError):
        LGCPModel(np.zeros(5), 2)
    with pytest.raises(ValueError):
        LGCPModel(-np.ones(4), 2)


def test_plateau_statistic():
    flat = np.full(100, -50.0)
    assert plateau_increase(flat) == pytest.approx(0.0, abs=1e-12)
    rising = -100.0 + np.arange(100.0)
    # trailing window holds -20..-1: a rise of 19 around a mean of -10.5
    assert plateau_increase(rising) == pytest.approx(19.0 / 10.5)
    noisy = -400.0 + np.random.default_rng(0).normal(size=5000)
    assert abs(plateau_increase(noisy)) < 1e-3
    with pytest.raises(ValueError):
        plateau_increase([1.0, 2.0])
