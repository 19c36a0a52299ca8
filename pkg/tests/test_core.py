import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fd_grad, fd_jacobian, rel_err
from geodesic_mc.core import (
    DenseMetric,
    DiagonalDerivMetric,
    GeometryError,
    PhaseState,
    RankOneAMatrices,
    TargetModel,
    TridiagonalMetric,
    a_matrices,
    draw_momentum,
    evaluate,
    grad_phi,
    hamiltonian,
)
from geodesic_mc.models.toy import BananaModel, GaussianModel, VaryingMetricGaussian

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


class ExpMetric1D(TargetModel):
    """L = 0 with metric G(theta) = exp(2 theta)."""

    dim = 1

    def log_density(self, theta):
        return 0.0

    def grad_log_density(self, theta):
        return np.zeros(1)

    def metric(self, theta):
        g = math.exp(2 * theta[0])
        return DenseMetric([[g]], [[[2 * g]]], theta=theta)


def phi(model, theta):
    return -model.log_density(theta) + 0.5 * (
        model.dim * math.log(2 * math.pi) + model.metric(theta).logdet
    )


def test_hamiltonian_standard_normal_at_origin():
    model = GaussianModel.standard(1)
    assert hamiltonian(np.zeros(1), np.zeros(1), model) == pytest.approx(HALF_LOG_2PI, abs=1e-12)
    assert HALF_LOG_2PI == pytest.approx(0.918939, abs=1e-6)


def test_hamiltonian_adds_kinetic_term():
    model = GaussianModel.standard(1)
    assert hamiltonian(np.zeros(1), np.ones(1), model) == pytest.approx(HALF_LOG_2PI + 0.5)


def test_zero_momentum_gives_potential(rng):
    model = GaussianModel(np.zeros(3), np.eye(3), metric="identity")
    theta = rng.normal(size=3)
    assert hamiltonian(theta, np.zeros(3), model) == pytest.approx(phi(model, theta))


def test_non_finite_density_raises_with_theta():
    class Bad(GaussianModel):
        def log_density(self, theta):
            return float("nan")

    theta = np.array([0.3])
    with pytest.raises(GeometryError) as info:
        evaluate(Bad.standard(1), theta)
    assert np.array_equal(info.value.theta, theta)


def test_singular_metric_raises():
    with pytest.raises(GeometryError):
        DenseMetric(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_grad_phi_constant_metric_is_minus_grad(rng):
    model = GaussianModel(np.ones(2), [[2.0, 0.3], [0.3, 1.0]])
    theta = rng.normal(size=2)
    assert np.array_equal(grad_phi(theta, model), -model.grad_log_density(theta))


def test_grad_phi_trace_term_hand_value():
    assert grad_phi(np.zeros(1), ExpMetric1D())[0] == pytest.approx(1.0)


@pytest.mark.parametrize("model", [VaryingMetricGaussian(), ExpMetric1D(), BananaModel.simulate(np.random.default_rng(1))])
def test_grad_phi_matches_finite_differences(model, rng):
    for _ in range(20):
        theta = rng.normal(size=model.dim) * 0.7
        assert rel_err(grad_phi(theta, model), fd_grad(lambda t: phi(model, t), theta)) < 1e-5


def test_a_matrices_zero_for_constant_metric():
    assert a_matrices(DenseMetric(np.eye(2))) is None
    assert a_matrices(DenseMetric(np.eye(2), np.zeros((2, 2, 2)))).dense() == pytest.approx(0.0)


def test_a_matrix_scalar_hand_value():
    assert a_matrices(DenseMetric([[2.0]], [[[4.0]]])).dense()[0, 0, 0] == pytest.approx(0.5)


def test_a_matrices_match_inverse_metric_derivative(rng):
    model = BananaModel.simulate(rng)
    for _ in range(20):
        theta = rng.normal(size=2)
        A = a_matrices(model.metric(theta)).dense()
        fd = fd_jacobian(lambda t: -0.5 * np.linalg.inv(model.metric(t).dense()), theta)
        assert rel_err(A, fd) < 1e-4
        assert np.allclose(A, A.transpose(0, 2, 1), atol=1e-12)


def test_rank_one_a_matrices_match_dense(rng):
    M = rng.normal(size=(5, 5))
    G = M @ M.T + 5 * np.eye(5)
    scale = rng.uniform(0.5, 2.0, size=5)
    derivs = np.zeros((5, 5, 5))
    derivs[np.arange(5), np.arange(5), np.arange(5)] = scale
    dense = a_matrices(DenseMetric(G, derivs))
    rank_one = a_matrices(DiagonalDerivMetric(G, scale))
    assert isinstance(rank_one, RankOneAMatrices)
    assert np.max(np.abs(rank_one.dense() - dense.dense())) < 1e-12
    p = rng.normal(size=5)
    for k in range(5):
        assert rank_one.coeffs(k, p) == pytest.approx(dense.coeffs(k, p), rel=1e-10)


def test_metric_bundle_invariants(rng):
    M = rng.normal(size=(6, 6))
    G = M @ M.T + np.eye(6)
    bundle = DenseMetric(G)
    assert np.max(np.abs(bundle.g_inv @ G - np.eye(6))) < 1e-8
    assert bundle.logdet == pytest.approx(np.linalg.slogdet(G)[1], abs=1e-8)
    assert np.allclose(bundle.solve(G[:, 0]), np.eye(6)[:, 0], atol=1e-10)


def test_draw_momentum_identity_variance():
    rng = np.random.default_rng(0)
    bundle = DenseMetric(np.eye(2))
    draws = np.array([draw_momentum(bundle, rng) for _ in range(100_000)])
    assert np.allclose(draws.var(axis=0), 1.0, rtol=0.05)


def test_draw_momentum_scaled_variance():
    rng = np.random.default_rng(1)
    bundle = DenseMetric([[4.0]])
    draws = np.array([draw_momentum(bundle, rng)[0] for _ in range(100_000)])
    assert draws.var() == pytest.approx(4.0, rel=0.05)


def test_draw_momentum_deterministic():
    bundle = DenseMetric([[2.0, 0.5], [0.5, 1.0]])
    a = draw_momentum(bundle, np.random.default_rng(7))
    b = draw_momentum(bundle, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_phase_state_energy_matches_hamiltonian(rng):
    model = VaryingMetricGaussian()
    theta, p = rng.normal(size=2), rng.normal(size=2)
    state = PhaseState.from_position(evaluate(model, theta), p)
    assert state.energy == pytest.approx(hamiltonian(theta, p, model), rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(
    diag=st.lists(st.floats(2.5, 10.0), min_size=3, max_size=12),
    off=st.floats(-1.0, 1.0),
)
def test_tridiagonal_matches_dense(diag, off):
    d = np.array(diag)
    o = np.full(d.size - 1, off)
    tri = TridiagonalMetric(d, o)
    dense = DenseMetric(tri.dense())
    v = np.linspace(-1.0, 1.0, d.size)
    assert np.max(np.abs(tri.solve(v) - dense.solve(v))) < 1e-10
    assert tri.logdet == pytest.approx(dense.logdet, abs=1e-8)
    assert np.allclose(tri.matvec(v), tri.dense() @ v, atol=1e-12)
