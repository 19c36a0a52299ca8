"""Bayesian logistic regression with the Fisher-plus-prior metric."""

from __future__ import annotations

import csv
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import expit

from geodesic_mc.core import DenseMetric, TargetModel

BUNDLED = {"pima": "pima.csv", "ripley": "ripley.csv"}


def log1pexp(z):
    """Overflow-safe ``log(1 + exp(z))``."""
    return np.logaddexp(0.0, z)


def read_dataset(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Read a CSV whose last column is the 0/1 response.

    ``path`` may also name a bundled dataset (``"pima"`` or ``"ripley"``).
    """
    if str(path) in BUNDLED:
        text = resources.files("geodesic_mc.data").joinpath(BUNDLED[str(path)]).read_text()
    else:
        text = Path(path).read_text()
    rows = list(csv.reader(text.splitlines()))
    header, body = rows[0], [r for r in rows[1:] if r]
    data = np.array(body, dtype=float)
    t = data[:, -1]
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("response column must be 0/1")
    return data[:, :-1], t, header[:-1]


def standardize(x):
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    return (x - x.mean(axis=0)) / sd


def design_matrix(covariates, polynomial_degree=1):
    """Z-score the covariates, optionally add powers up to ``polynomial_degree``,
    and prepend an intercept column."""
    z = standardize(np.asarray(covariates, dtype=float))
    cols = [np.ones((z.shape[0], 1))]
    for power in range(1, polynomial_degree + 1):
        cols.append(z**power)
    if polynomial_degree > 1:
        # interleave so that each covariate's powers sit together
        stacked = np.stack(cols[1:], axis=2)
        cols = [cols[0], stacked.reshape(z.shape[0], -1)]
    return np.hstack(cols)


class LogisticModel(TargetModel):
    """Posterior over coefficients ``beta`` with prior ``N(0, alpha I)``.

    The metric is ``X^T Lambda X + I / alpha`` with
    ``Lambda = diag(s (1 - s))`` and ``s`` the fitted probabilities.
    """

    def __init__(self, X, t, alpha=100.0, names=None):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.t = np.asarray(t, dtype=float)
        if not alpha > 0:
            raise ValueError("prior variance alpha must be positive")
        if self.t.size and not np.all((self.t == 0) | (self.t == 1)):
            raise ValueError("responses must be 0/1")
        self.alpha = float(alpha)
        self.dim = self.X.shape[1]
        self._xt = self.X.T @ self.t
        self._names = names

    @classmethod
    def from_dataset(cls, name_or_path, alpha=100.0, polynomial_degree=None):
        x, t, header = read_dataset(name_or_path)
        if polynomial_degree is None:
            polynomial_degree = 3 if str(name_or_path) == "ripley" else 1
        X = design_matrix(x, polynomial_degree)
        names = ["intercept"]
        for h in header:
            names += [h] if polynomial_degree == 1 else [f"{h}^{k}" for k in range(1, polynomial_degree + 1)]
        return cls(X, t, alpha, names)

    @property
    def coordinate_names(self):
        return self._names or super().coordinate_names

    def log_density(self, beta):
        z = self.X @ beta
        return float(beta @ self._xt - np.sum(log1pexp(z)) - 0.5 * beta @ beta / self.alpha)

    def grad_log_density(self, beta):
        s = expit(self.X @ beta)
        return self.X.T @ (self.t - s) - beta / self.alpha

    def metric(self, beta):
        s = expit(self.X @ beta)
        lam = s * (1.0 - s)
        G = (self.X.T * lam) @ self.X + np.eye(self.dim) / self.alpha
        return DenseMetric(G, self.metric_derivs(beta, s), theta=beta)

    def metric_derivs(self, beta, s=None):
        """Stack of ``X^T Lambda V^i X`` with ``V^i = diag((1 - 2 s) X[:, i])``."""
        if s is None:
            s = expit(self.X @ beta)
        w = s * (1.0 - s) * (1.0 - 2.0 * s)
        n, d = self.X.shape
        outer = (self.X[:, :, None] * (self.X * w[:, None])[:, None, :]).reshape(n, d * d)
        return (outer.T @ self.X).reshape(d, d, d)
