"""Phase-space types, the target-model contract and Hamiltonian assembly."""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

LOG_2PI = math.log(2.0 * math.pi)


class SamplingError(RuntimeError):
    """Base class for recoverable failures while simulating a chain."""


class GeometryError(SamplingError):
    """Raised when a density, gradient or metric cannot be evaluated at a point."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = None if theta is None else np.array(theta, dtype=float)


class IntegrationError(SamplingError):
    """Raised when a trajectory hits a pole or diverges."""


class AMatrices(ABC):
    """The matrices ``A^k = 1/2 G^-1 dG/dtheta_k G^-1`` at a fixed position.

    Only the coefficients of the scalar momentum flow are exposed, so that
    structured metrics never have to materialise all ``D`` dense matrices.
    """

    dim: int

    @abstractmethod
    def coeffs(self, k: int, p: np.ndarray) -> tuple[float, float, float]:
        """Return ``(alpha, beta, gamma)`` such that
        ``p^T A^k p = alpha p_k^2 + beta p_k + gamma``."""

    @abstractmethod
    def dense(self) -> np.ndarray:
        """All matrices stacked as a ``(D, D, D)`` array."""


class DenseAMatrices(AMatrices):
    def __init__(self, mats):
        self.mats = np.asarray(mats, dtype=float)
        self.dim = self.mats.shape[0]

    def coeffs(self, k, p):
        a = self.mats[k]
        q = p.copy()
        q[k] = 0.0
        aq = a @ q
        return a[k, k], 2.0 * aq[k], q @ aq

    def dense(self):
        return self.mats


class RankOneAMatrices(AMatrices):
    """``A^k = c_k u_k u_k^T`` with ``u_k`` the k-th column of ``G^-1``.

    This is the shape produced by a metric whose derivative with respect to
    ``theta_k`` has a single non-zero entry at ``(k, k)``.
    """

    def __init__(self, g_inv, scale):
        self.g_inv = g_inv
        self.scale = np.asarray(scale, dtype=float)
        self.dim = g_inv.shape[0]

    def coeffs(self, k, p):
        row = self.g_inv[k]
        ukk = row[k]
        s = row @ p - ukk * p[k]
        c = self.scale[k]
        return c * ukk * ukk, 2.0 * c * ukk * s, c * s * s

    def sweep(self, p, eps, pole_tol):
        """Run the whole symmetric sweep in compiled code; ``False`` on a pole."""
        from geodesic_mc._kernels import rank_one_sweep

        return rank_one_sweep(self.g_inv, self.scale, p, eps, pole_tol)

    def dense(self):
        u = self.g_inv
        return self.scale[:, None, None] * u[:, :, None] * u[:, None, :]


class MetricBundle(ABC):
    """Metric tensor at a position plus what the integrators need from it."""

    dim: int
    logdet: float
    constant: bool

    @abstractmethod
    def solve(self, v: np.ndarray) -> np.ndarray:
        """Return ``G^-1 v``."""

    @abstractmethod
    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Return ``G v``."""

    @abstractmethod
    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Draw from ``N(0, G)``."""

    @abstractmethod
    def dense(self) -> np.ndarray:
        """The metric as a dense ``(D, D)`` array."""

    def trace_terms(self) -> np.ndarray:
        """Vector with entries ``1/2 Tr[G^-1 dG/dtheta_k]``."""
        return np.zeros(self.dim)

    def a_matrices(self) -> AMatrices | None:
        """``None`` for a constant metric."""
        return None

    def dense_derivs(self) -> np.ndarray:
        return np.zeros((self.dim, self.dim, self.dim))

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.dim))


class DenseMetric(MetricBundle):
    """Dense SPD metric with an optional ``(D, D, D)`` stack of derivatives.

    ``derivs[k]`` holds ``dG/dtheta_k``.  Leaving ``derivs`` as ``None`` marks
    the metric as constant in ``theta``.
    """

    def __init__(self, G, derivs=None, *, theta=None):
        G = np.atleast_2d(np.asarray(G, dtype=float))
        self.G = G
        self.dim = G.shape[0]
        self.derivs = None if derivs is None else np.asarray(derivs, dtype=float)
        self.constant = self.derivs is None
        try:
            self.chol = linalg.cholesky(G, lower=True, check_finite=False)
        except (linalg.LinAlgError, ValueError) as exc:
            raise GeometryError("metric is not positive definite", theta) from exc
        diag = np.diag(self.chol)
        if not np.all(np.isfinite(diag)) or np.any(diag <= 0.0):
            raise GeometryError("metric is not positive definite", theta)
        self.logdet = 2.0 * float(np.sum(np.log(diag)))

    def solve(self, v):
        return linalg.cho_solve((self.chol, True), v, check_finite=False)

    def matvec(self, v):
        return self.G @ v

    def sample(self, rng):
        return self.chol @ rng.standard_normal(self.dim)

    def dense(self):
        return self.G

    @cached_property
    def g_inv(self):
        inv, info = lapack.dpotri(self.chol, lower=1)
        if info != 0:
            return self.solve(np.eye(self.dim))
        return np.tril(inv) + np.tril(inv, -1).T

    def inverse(self):
        return self.g_inv

    def trace_terms(self):
        if self.constant:
            return np.zeros(self.dim)
        return 0.5 * np.einsum("ij,kji->k", self.g_inv, self.derivs)

    def a_matrices(self):
        if self.constant:
            return None
        g_inv = self.g_inv
        return DenseAMatrices(0.5 * (g_inv @ self.derivs @ g_inv))

    def dense_derivs(self):
        if self.constant:
            return np.zeros((self.dim, self.dim, self.dim))
        return self.derivs


class DiagonalDerivMetric(DenseMetric):
    """Dense metric whose k-th derivative is ``d_k e_k e_k^T``."""

    def __init__(self, G, diag_derivs, *, theta=None):
        super().__init__(G, None, theta=theta)
        self.diag_derivs = np.asarray(diag_derivs, dtype=float)
        self.constant = False

    def trace_terms(self):
        return 0.5 * self.diag_derivs * np.diag(self.g_inv)

    def a_matrices(self):
        return RankOneAMatrices(self.g_inv, 0.5 * self.diag_derivs)

    def dense_derivs(self):
        out = np.zeros((self.dim, self.dim, self.dim))
        idx = np.arange(self.dim)
        out[idx, idx, idx] = self.diag_derivs
        return out


class TridiagonalMetric(MetricBundle):
    """Constant symmetric tridiagonal metric with O(D) solves."""

    def __init__(self, diag, offdiag, *, theta=None):
        self.diag = np.asarray(diag, dtype=float)
        self.offdiag = np.asarray(offdiag, dtype=float)
        self.dim = self.diag.size
        self.constant = True
        band = np.zeros((2, self.dim))
        band[0] = self.diag
        band[1, :-1] = self.offdiag
        self._band = band
        try:
            self._lower = linalg.cholesky_banded(band, lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise GeometryError("metric is not positive definite", theta) from exc
        self.logdet = 2.0 * float(np.sum(np.log(self._lower[0])))

    def solve(self, v):
        return linalg.cho_solve_banded((self._lower, True), v, check_finite=False)

    def matvec(self, v):
        out = self.diag * v
        out[:-1] += self.offdiag * v[1:]
        out[1:] += self.offdiag * v[:-1]
        return out

    def sample(self, rng):
        z = rng.standard_normal(self.dim)
        out = self._lower[0] * z
        out[1:] += self._lower[1, :-1] * z[:-1]
        return out

    def dense(self):
        return (
            np.diag(self.diag)
            + np.diag(self.offdiag, 1)
            + np.diag(self.offdiag, -1)
        )


class TargetModel(ABC):
    """Unnormalised log-density with its gradient and Riemannian metric.

    Subclasses set ``dim`` and override ``metric`` when they supply one; the
    default is the identity, which turns RM-HMC into plain HMC.
    """

    dim: int
    constant_metric: bool = False

    @abstractmethod
    def log_density(self, theta: np.ndarray) -> float: ...

    @abstractmethod
    def grad_log_density(self, theta: np.ndarray) -> np.ndarray: ...

    def metric(self, theta: np.ndarray) -> MetricBundle:
        return DenseMetric(np.eye(self.dim), theta=theta)

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.dim)

    @property
    def coordinate_names(self) -> list[str]:
        return [f"theta_{i}" for i in range(self.dim)]


def has_metric(model: TargetModel) -> bool:
    """Whether ``model`` supplies a metric usable by RM-HMC."""
    return bool(model.constant_metric) or type(model).metric is not TargetModel.metric


@dataclass
class Position:
    """Everything evaluated at one ``theta`` during a trajectory."""

    theta: np.ndarray
    log_density: float
    grad: np.ndarray
    metric: MetricBundle

    @cached_property
    def grad_phi(self) -> np.ndarray:
        return -self.grad + self.metric.trace_terms()

    @cached_property
    def a_mats(self) -> AMatrices | None:
        return self.metric.a_matrices()

    @property
    def phi(self) -> float:
        return -self.log_density + 0.5 * (self.metric.dim * LOG_2PI + self.metric.logdet)

    def energy(self, p: np.ndarray) -> float:
        return self.phi + 0.5 * float(p @ self.metric.solve(p))


def evaluate(model: TargetModel, theta, metric: MetricBundle | None = None) -> Position:
    """Evaluate density, gradient and (unless supplied) metric at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise GeometryError("non-finite position", theta)
    log_density = float(model.log_density(theta))
    if not math.isfinite(log_density):
        raise GeometryError("log-density is not finite", theta)
    grad = np.asarray(model.grad_log_density(theta), dtype=float)
    if not np.all(np.isfinite(grad)):
        raise GeometryError("gradient is not finite", theta)
    if metric is None:
        metric = model.metric(theta)
    return Position(theta, log_density, grad, metric)


@dataclass
class PhaseState:
    position: Position
    p: np.ndarray
    energy: float

    @classmethod
    def from_position(cls, position: Position, p) -> PhaseState:
        p = np.asarray(p, dtype=float)
        return cls(position, p, position.energy(p))

    @property
    def theta(self) -> np.ndarray:
        return self.position.theta


def hamiltonian(theta, p, model: TargetModel) -> float:
    """``-L(theta) + 1/2 log((2 pi)^D |G(theta)|) + 1/2 p^T G(theta)^-1 p``."""
    return evaluate(model, theta).energy(np.asarray(p, dtype=float))


def grad_phi(theta, model: TargetModel) -> np.ndarray:
    """Position derivative of ``-L + 1/2 log|G|`` (momentum terms excluded)."""
    return evaluate(model, theta).grad_phi


def a_matrices(bundle: MetricBundle) -> AMatrices | None:
    return bundle.a_matrices()


def draw_momentum(bundle: MetricBundle, rng: np.random.Generator) -> np.ndarray:
    return bundle.sample(rng)
