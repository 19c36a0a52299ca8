"""Small analytic targets for checking integrators and samplers."""

from __future__ import annotations

import numpy as np

from geodesic_mc.core import DenseMetric, TargetModel


class GaussianModel(TargetModel):
    """``N(mean, cov)`` with the precision matrix as a constant metric.

    Pass ``metric="identity"`` to use the unit metric instead.
    """

    constant_metric = True

    def __init__(self, mean, cov, metric="precision"):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.dim = self.mean.size
        self.precision = np.linalg.inv(self.cov)
        if isinstance(metric, str):
            metric = self.precision if metric == "precision" else np.eye(self.dim)
        self._metric = DenseMetric(metric)

    @classmethod
    def standard(cls, dim: int):
        return cls(np.zeros(dim), np.eye(dim))

    def log_density(self, theta):
        r = theta - self.mean
        return -0.5 * float(r @ self.precision @ r)

    def grad_log_density(self, theta):
        return -self.precision @ (theta - self.mean)

    def metric(self, theta):
        return self._metric


class FlatModel(TargetModel):
    constant_metric = True

    def __init__(self, dim: int):
        self.dim = dim

    def log_density(self, theta):
        return 0.0

    def grad_log_density(self, theta):
        return np.zeros(self.dim)


class VaryingMetricGaussian(TargetModel):
    """Independent Gaussian target with metric ``diag((1 + theta_i^2) / s_i^2)``."""

    def __init__(self, scales=(1.0, 2.0)):
        self.scales = np.asarray(scales, dtype=float)
        self.dim = self.scales.size

    def log_density(self, theta):
        return -0.5 * float(np.sum((theta / self.scales) ** 2))

    def grad_log_density(self, theta):
        return -theta / self.scales**2

    def metric(self, theta):
        w = 1.0 / self.scales**2
        derivs = np.zeros((self.dim, self.dim, self.dim))
        idx = np.arange(self.dim)
        derivs[idx, idx, idx] = 2.0 * theta * w
        return DenseMetric(np.diag((1.0 + theta**2) * w), derivs, theta=theta)


class BananaModel(TargetModel):
    """Posterior of ``y_i ~ N(theta_1 + theta_2^2, sigma_y^2)`` under ``N(0, sigma_t^2 I)``.

    The metric is the expected Fisher information plus prior precision; it is
    dense and depends on ``theta_2``.
    """

    def __init__(self, y, sigma_y=2.0, sigma_theta=1.0):
        self.y = np.asarray(y, dtype=float)
        self.sigma_y = sigma_y
        self.sigma_theta = sigma_theta
        self.dim = 2

    @classmethod
    def simulate(cls, rng, n=100, sigma_y=2.0, sigma_theta=1.0, signal=1.0):
        return cls(signal + sigma_y * rng.standard_normal(n), sigma_y, sigma_theta)

    def log_density(self, theta):
        mu = theta[0] + theta[1] ** 2
        return (
            -0.5 * float(np.sum((self.y - mu) ** 2)) / self.sigma_y**2
            - 0.5 * float(theta @ theta) / self.sigma_theta**2
        )

    def grad_log_density(self, theta):
        mu = theta[0] + theta[1] ** 2
        score = float(np.sum(self.y - mu)) / self.sigma_y**2
        return score * np.array([1.0, 2.0 * theta[1]]) - theta / self.sigma_theta**2

    def metric(self, theta):
        c = self.y.size / self.sigma_y**2
        jac = np.array([1.0, 2.0 * theta[1]])
        G = c * np.outer(jac, jac) + np.eye(2) / self.sigma_theta**2
        djac = np.array([0.0, 2.0])
        derivs = np.zeros((2, 2, 2))
        derivs[1] = c * (np.outer(djac, jac) + np.outer(jac, djac))
        return DenseMetric(G, derivs, theta=theta)
