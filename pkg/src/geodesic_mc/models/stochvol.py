"""Stochastic volatility model with AR(1) log-volatilities.

``y_t = eps_t beta exp(x_t / 2)`` and ``x_{t+1} = phi x_t + eta_{t+1}`` with
``eta ~ N(0, sigma^2)`` and a stationary start.  Inference alternates
between the parameters ``(beta, gamma = log sigma, alpha = atanh phi)``
given ``x`` and the latent path ``x`` given the parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from geodesic_mc.core import DenseMetric, TargetModel, TridiagonalMetric
from geodesic_mc.samplers import SamplerConfig, block_update, make_kernel

PRIOR_NU = 10.0
PRIOR_S2 = 0.05
PRIOR_A = 20.0
PRIOR_B = 1.5


def simulate(beta, sigma, phi, T, rng):
    """Draw ``(y, x)`` of length ``T`` from the generative model."""
    if not sigma >= 0 or not abs(phi) < 1:
        raise ValueError("need sigma >= 0 and |phi| < 1")
    x = np.empty(T)
    x[0] = sigma / math.sqrt(1.0 - phi**2) * rng.standard_normal()
    eta = sigma * rng.standard_normal(T)
    for t in range(1, T):
        x[t] = phi * x[t - 1] + eta[t]
    y = rng.standard_normal(T) * beta * np.exp(0.5 * x)
    return y, x


def ar1_precision(phi, sigma, T):
    """Diagonal and off-diagonal of the stationary AR(1) precision matrix."""
    s2 = sigma * sigma
    diag = np.full(T, (1.0 + phi * phi) / s2)
    diag[0] = diag[-1] = 1.0 / s2
    return diag, np.full(T - 1, -phi / s2)


def ar1_covariance(phi, sigma, T):
    lags = np.abs(np.subtract.outer(np.arange(T), np.arange(T)))
    return phi**lags * sigma**2 / (1.0 - phi**2)


def _log1p_tanh(alpha, sign):
    """``log(1 + sign * tanh(alpha))`` without cancellation."""
    return math.log(2.0) - np.logaddexp(0.0, -2.0 * sign * alpha)


def log_prior_beta(beta):
    """``p(beta^2) ∝ beta^-2`` expressed as a density on ``beta``."""
    return -math.log(beta)


def log_prior_gamma(gamma, nu=PRIOR_NU, s2=PRIOR_S2):
    """Scaled inverse chi-squared on ``sigma^2`` carried over to ``gamma = log sigma``."""
    return -nu * gamma - 0.5 * nu * s2 * math.exp(-2.0 * gamma)


def log_prior_alpha(alpha, a=PRIOR_A, b=PRIOR_B):
    """Beta(a, b) on ``(phi + 1) / 2`` carried over to ``alpha = atanh phi``."""
    lp = _log1p_tanh(alpha, 1.0)
    lm = _log1p_tanh(alpha, -1.0)
    return float((a - 1.0) * lp + (b - 1.0) * lm + lp + lm)


class SVParamModel(TargetModel):
    """Conditional posterior of ``(beta, gamma, alpha)`` given the latent path."""

    def __init__(self, y, x):
        self.y = np.asarray(y, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.T = self.y.size
        self.dim = 3
        self._y2ex = float(np.sum(self.y**2 * np.exp(-self.x)))
        self._x1sq = self.x[0] ** 2
        self._prev = self.x[:-1]
        self._next = self.x[1:]

    coordinate_names = ["beta", "gamma", "alpha"]

    def _ar_terms(self, phi):
        resid = self._next - phi * self._prev
        return float(resid @ resid), float(self._prev @ resid)

    def log_density(self, theta):
        beta, gamma, alpha = theta
        if beta <= 0.0:
            return -math.inf
        phi = math.tanh(alpha)
        s2 = math.exp(2.0 * gamma)
        T = self.T
        ss, _ = self._ar_terms(phi)
        log_one_minus = float(_log1p_tanh(alpha, 1.0) + _log1p_tanh(alpha, -1.0))
        lik_y = -T * math.log(beta) - 0.5 * self._y2ex / beta**2
        lik_x = (
            -T * gamma
            + 0.5 * log_one_minus
            - 0.5 * (self._x1sq * (1.0 - phi * phi) + ss) / s2
        )
        return lik_y + lik_x + log_prior_beta(beta) + log_prior_gamma(gamma) + log_prior_alpha(alpha)

    def grad_log_density(self, theta):
        beta, gamma, alpha = theta
        phi = math.tanh(alpha)
        s2 = math.exp(2.0 * gamma)
        one_minus = 1.0 - phi * phi
        T = self.T
        ss, cross = self._ar_terms(phi)
        d_beta = -T / beta + self._y2ex / beta**3 - 1.0 / beta
        d_gamma = (
            -T
            + (self._x1sq * one_minus + ss) / s2
            + PRIOR_NU * PRIOR_S2 / s2
            - PRIOR_NU
        )
        d_alpha = (-phi / one_minus + phi * self._x1sq / s2 + cross / s2) * one_minus
        d_alpha += (PRIOR_A - 1.0) * (1.0 - phi) - (PRIOR_B - 1.0) * (1.0 + phi) - 2.0 * phi
        return np.array([d_beta, d_gamma, d_alpha])

    def metric(self, theta):
        return param_metric(theta[0], theta[1], theta[2], self.T)


def param_metric(beta, gamma, alpha, T) -> DenseMetric:
    """Expected Fisher information in ``(beta, gamma, alpha)`` and its derivatives."""
    phi = math.tanh(alpha)
    one_minus = 1.0 - phi * phi
    G = np.array(
        [
            [2.0 * T / beta**2, 0.0, 0.0],
            [0.0, T + 1.0, 2.0 * phi],
            [0.0, 2.0 * phi, phi * phi * (3.0 - T) + (T - 1.0)],
        ]
    )
    derivs = np.zeros((3, 3, 3))
    derivs[0, 0, 0] = -4.0 * T / beta**3
    derivs[2, 1, 2] = derivs[2, 2, 1] = 2.0 * one_minus
    derivs[2, 2, 2] = 2.0 * phi * one_minus * (3.0 - T)
    return DenseMetric(G, derivs, theta=np.array([beta, gamma, alpha]))


class SVLatentModel(TargetModel):
    """Conditional posterior of the log-volatilities given the parameters.

    The metric ``I/2 + C^-1`` is tridiagonal and does not depend on ``x``.
    """

    constant_metric = True

    def __init__(self, y, beta, sigma, phi):
        self.y = np.asarray(y, dtype=float)
        self.dim = self.y.size
        self.beta, self.sigma, self.phi = beta, sigma, phi
        self._y2 = self.y**2 / beta**2
        self.prec_diag, self.prec_off = ar1_precision(phi, sigma, self.dim)
        self._metric = TridiagonalMetric(self.prec_diag + 0.5, self.prec_off)

    def _prec_mv(self, x):
        out = self.prec_diag * x
        out[:-1] += self.prec_off * x[1:]
        out[1:] += self.prec_off * x[:-1]
        return out

    def log_density(self, x):
        lik = -0.5 * float(np.sum(x + self._y2 * np.exp(-x)))
        return lik - 0.5 * float(x @ self._prec_mv(x))

    def grad_log_density(self, x):
        return -0.5 + 0.5 * self._y2 * np.exp(-x) - self._prec_mv(x)

    def metric(self, x):
        return self._metric

    def dense_metric(self):
        return self._metric.dense()

    @property
    def coordinate_names(self):
        return [f"x_{t}" for t in range(self.dim)]


def latent_grad(x, y, beta, phi, sigma):
    return SVLatentModel(y, beta, sigma, phi).grad_log_density(np.asarray(x, dtype=float))


def latent_metric(phi, sigma, T) -> TridiagonalMetric:
    diag, off = ar1_precision(phi, sigma, T)
    return TridiagonalMetric(diag + 0.5, off)


@dataclass(frozen=True)
class SVState:
    beta: float
    gamma: float
    alpha: float
    x: np.ndarray

    @property
    def sigma(self):
        return math.exp(self.gamma)

    @property
    def phi(self):
        return math.tanh(self.alpha)

    @property
    def params(self):
        return np.array([self.beta, self.gamma, self.alpha])


class StochVolSampler:
    """Two-block Gibbs scheme: parameters given ``x``, then ``x`` given parameters.

    Each block uses any of the four kernels; the latent block with RM-HMC
    reduces to a Langevin/HMC move preconditioned by the constant
    tridiagonal metric.
    """

    def __init__(self, y, param_sampler="rmhmc", param_config=None, latent_sampler="rmhmc", latent_config=None):
        self.y = np.asarray(y, dtype=float)
        init = SVState(1.0, math.log(0.5), math.atanh(0.5), np.zeros(self.y.size))
        self.param_kernel = make_kernel(
            param_sampler, SVParamModel(self.y, init.x), param_config or SamplerConfig()
        )
        self.latent_kernel = make_kernel(
            latent_sampler, SVLatentModel(self.y, 1.0, 0.5, 0.5), latent_config or SamplerConfig()
        )
        self.adapt = bool(
            (param_config and param_config.adapt) or (latent_config and latent_config.adapt)
        )

    def initial_state(self):
        beta = float(np.sqrt(np.mean(self.y**2)))
        return SVState(beta, math.log(0.5), math.atanh(0.5), np.zeros(self.y.size))

    def sweep(self, state: SVState, rng, burning=False):
        """One Gibbs sweep; returns the new state and per-block acceptance flags."""
        tuning = burning and self.adapt
        params, acc_p = block_update(
            self.param_kernel, SVParamModel(self.y, state.x), state.params, rng, tuning, burning
        )
        beta, gamma, alpha = params
        latent = SVLatentModel(self.y, beta, math.exp(gamma), math.tanh(alpha))
        x, acc_x = block_update(self.latent_kernel, latent, state.x, rng, tuning, burning)
        return SVState(float(beta), float(gamma), float(alpha), x), (acc_p, acc_x)


def gibbs_sweep(state: SVState, sampler: StochVolSampler, rng):
    return sampler.sweep(state, rng)[0]


def natural_params(state: SVState):
    return state.beta, state.sigma, state.phi
