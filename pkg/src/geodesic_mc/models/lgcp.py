"""Log-Gaussian Cox process on a regular ``n x n`` grid over the unit square.

Counts ``y_ij ~ Poisson(m exp(x_ij))`` with ``m = 1/n^2`` and a Gaussian
field ``x ~ N(mu 1, Sigma)`` whose covariance is
``sigma^2 exp(-d / (n beta))`` in the grid distance ``d``.  Cells are
linearised row-major.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import linalg

from geodesic_mc.core import DiagonalDerivMetric, GeometryError, TargetModel

DEFAULT_BETA = 1.0 / 33.0
DEFAULT_SIGMA2 = 1.91
DEFAULT_MU = math.log(126.0) - DEFAULT_SIGMA2 / 2.0
MAX_LOG_INTENSITY = 700.0


def grid_covariance(n, sigma2, beta):
    ii, jj = np.divmod(np.arange(n * n), n)
    dist = np.hypot(np.subtract.outer(ii, ii), np.subtract.outer(jj, jj))
    return sigma2 * np.exp(-dist / (n * beta))


def generate(n, mu, sigma2, beta, rng):
    """Draw a latent field and Poisson counts; returns ``(x_true, y)``."""
    m = 1.0 / (n * n)
    cov = grid_covariance(n, sigma2, beta)
    if sigma2 == 0:
        x = np.full(n * n, float(mu))
    else:
        chol = np.linalg.cholesky(cov)
        x = mu + chol @ rng.standard_normal(n * n)
    y = rng.poisson(m * np.exp(x))
    return x, y


class LGCPModel(TargetModel):
    """Posterior of the latent field given counts at fixed hyperparameters.

    The metric ``diag(m exp(x)) + Sigma^-1`` changes only on its diagonal,
    so each ``dG/dx_k`` has one non-zero entry.
    """

    def __init__(self, y, n, mu=DEFAULT_MU, sigma2=DEFAULT_SIGMA2, beta=DEFAULT_BETA):
        self.n = int(n)
        self.dim = self.n * self.n
        self.y = np.asarray(y, dtype=float).ravel()
        if self.y.size != self.dim:
            raise ValueError(f"expected {self.dim} counts, got {self.y.size}")
        if np.any(self.y < 0):
            raise ValueError("counts must be non-negative")
        self.m = 1.0 / self.dim
        self.mu, self.sigma2, self.beta = float(mu), float(sigma2), float(beta)
        self.cov = grid_covariance(self.n, self.sigma2, self.beta)
        factor = linalg.cho_factor(self.cov, lower=True)
        self.precision = linalg.cho_solve(factor, np.eye(self.dim))
        self.precision = 0.5 * (self.precision + self.precision.T)
        self.cov_logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))

    def initial_point(self):
        return np.full(self.dim, self.mu)

    def intensity(self, x):
        """``e = m exp(x)``, with ``x`` clipped so the exponential stays finite."""
        return self.m * np.exp(np.minimum(x, MAX_LOG_INTENSITY))

    def log_density(self, x):
        r = x - self.mu
        return float(self.y @ x - np.sum(self.intensity(x)) - 0.5 * r @ self.precision @ r)

    def likelihood_grad(self, x):
        return self.y - self.intensity(x)

    def grad_log_density(self, x):
        return self.likelihood_grad(x) - self.precision @ (x - self.mu)

    def metric(self, x):
        e = self.intensity(x)
        G = self.precision.copy()
        G[np.diag_indices(self.dim)] += e
        return DiagonalDerivMetric(G, e, theta=x)

    @property
    def coordinate_names(self):
        return [f"x_{i}_{j}" for i in range(self.n) for j in range(self.n)]

    def check_field(self, x):
        if x.shape != (self.dim,):
            raise GeometryError("wrong field shape", x)


def plateau_increase(log_joint, fraction=0.2):
    """Relative rise of the log-joint across the trailing ``fraction`` of a trace.

    The rise is the least-squares linear trend over that window multiplied by
    its length, divided by the magnitude of the window mean.  Using every
    point keeps stationary noise from masquerading as a trend as far as
    possible.
    """
    trace = np.asarray(log_joint, dtype=float)
    window = trace[int(round(len(trace) * (1.0 - fraction))):]
    if window.size < 2:
        raise ValueError("need at least two points in the trailing window")
    steps = np.arange(window.size, dtype=float)
    slope = np.polyfit(steps, window, 1)[0]
    return float(slope * (window.size - 1) / abs(window.mean()))
