"""Leapfrog and the semi-explicit integrators for position-dependent metrics.

Scheme 1 splits one step as ``F/2, A/2, T, A/2, F/2`` and Scheme 2 as
``F/2, T/2, A, T/2, F/2`` where ``F`` kicks the momentum with ``-grad phi``,
``A`` is the momentum-quadratic flow computed exactly per coordinate by
:func:`g_scalar`, and ``T`` moves the position along ``G^-1 p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from geodesic_mc.core import (
    AMatrices,
    DenseMetric,
    IntegrationError,
    Position,
    TargetModel,
    evaluate,
)

POLE_TOL = 1e-12
ENERGY_LIMIT = 1e6


class Scheme(str, Enum):
    LEAPFROG = "leapfrog"
    SCHEME1 = "scheme1"
    SCHEME2 = "scheme2"


@dataclass
class IntegratorConfig:
    epsilon: float = 0.1
    n1: int = 10
    n2: int = 1
    scheme: Scheme = Scheme.SCHEME1

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("n1 and n2 must be at least 1")


def _mass_metric(mass_matrix, dim):
    if mass_matrix is None:
        mass_matrix = np.eye(dim)
    if isinstance(mass_matrix, DenseMetric):
        return mass_matrix
    return DenseMetric(np.atleast_2d(mass_matrix))


def leapfrog_step(theta, p, eps, mass_matrix, model: TargetModel):
    """One leapfrog step for the separable Hamiltonian with mass ``M``."""
    theta = np.asarray(theta, dtype=float)
    mass = _mass_metric(mass_matrix, theta.size)
    pos, p = _leapfrog(evaluate(model, theta, mass), np.asarray(p, dtype=float), eps, mass, model)
    return pos.theta, p


def _leapfrog(pos: Position, p, eps, mass, model):
    p_half = p + 0.5 * eps * pos.grad
    new = evaluate(model, pos.theta + eps * mass.solve(p_half), mass)
    return new, p_half + 0.5 * eps * new.grad


def g_scalar(p0: float, eps: float, alpha: float, beta: float, gamma: float) -> float:
    """Flow of ``dp/dt = alpha p^2 + beta p + gamma`` over ``eps``.

    Second-order symmetric composition of the three exactly solvable parts.
    """
    p1 = p0 + 0.5 * eps * gamma
    den = 1.0 - 0.5 * eps * alpha * p1
    if abs(den) < POLE_TOL:
        raise IntegrationError("pole in momentum flow")
    p2 = p1 / den
    try:
        p3 = math.exp(eps * beta) * p2
    except OverflowError:
        raise IntegrationError("momentum flow overflowed") from None
    den = 1.0 - 0.5 * eps * alpha * p3
    if abs(den) < POLE_TOL:
        raise IntegrationError("pole in momentum flow")
    return p3 / den + 0.5 * eps * gamma


def g_vector(p, eps: float, a_mats: AMatrices | None) -> np.ndarray:
    """Symmetric sweep ``A_1/2 ... A_{D-1}/2 A_D A_{D-1}/2 ... A_1/2``.

    Each factor updates one momentum coordinate with the others held at
    their latest values.
    """
    p = np.array(p, dtype=float)
    if a_mats is None:
        return p
    if hasattr(a_mats, "sweep"):
        if not a_mats.sweep(p, eps, POLE_TOL):
            raise IntegrationError("pole in momentum flow")
        if not np.all(np.isfinite(p)):
            raise IntegrationError("non-finite momentum")
        return p
    d = p.size
    order = list(range(d - 1)) + [d - 1] + list(range(d - 2, -1, -1))
    for i, k in enumerate(order):
        h = eps if k == d - 1 and i == d - 1 else 0.5 * eps
        alpha, beta, gamma = a_mats.coeffs(k, p)
        p[k] = g_scalar(p[k], h, alpha, beta, gamma)
    if not np.all(np.isfinite(p)):
        raise IntegrationError("non-finite momentum")
    return p


def _newton(pos0: Position, p, eps, model, n2) -> Position:
    """Solve ``Q(theta) = Q(theta0) + eps p`` for the new position.

    ``Q(theta) - Q(theta0)`` is replaced by the trapezoidal approximation
    ``1/2 (G(theta) + G(theta0)) (theta - theta0)`` for iterations after
    the first.
    """
    pos = evaluate(model, pos0.theta + eps * pos0.metric.solve(p))
    if pos0.metric.constant:
        return pos
    target = eps * p
    for _ in range(n2 - 1):
        step = pos.theta - pos0.theta
        resid = 0.5 * (pos.metric.matvec(step) + pos0.metric.matvec(step)) - target
        pos = evaluate(model, pos.theta - pos.metric.solve(resid))
    return pos


def newton_position_update(theta0, p, eps, model: TargetModel, n2: int = 1) -> np.ndarray:
    pos0 = evaluate(model, theta0)
    return _newton(pos0, np.asarray(p, dtype=float), eps, model, n2).theta


def _scheme1(pos0: Position, p0, eps, n2, model):
    p = p0 - 0.5 * eps * pos0.grad_phi
    p = g_vector(p, 0.5 * eps, pos0.a_mats)
    pos = _newton(pos0, p, eps, model, n2)
    p = g_vector(p, 0.5 * eps, pos.a_mats)
    return pos, p - 0.5 * eps * pos.grad_phi


def _scheme2(pos0: Position, p0, eps, n2, model):
    p = p0 - 0.5 * eps * pos0.grad_phi
    mid = _newton(pos0, p, 0.5 * eps, model, n2)
    p = g_vector(p, eps, mid.a_mats)
    pos = _newton(mid, p, 0.5 * eps, model, n2)
    return pos, p - 0.5 * eps * pos.grad_phi


def scheme1_step(theta0, p0, eps, n2, model: TargetModel):
    pos, p = _scheme1(evaluate(model, theta0), np.asarray(p0, dtype=float), eps, n2, model)
    return pos.theta, p


def scheme2_step(theta0, p0, eps, n2, model: TargetModel):
    pos, p = _scheme2(evaluate(model, theta0), np.asarray(p0, dtype=float), eps, n2, model)
    return pos.theta, p


def integrate(pos: Position, p, config: IntegratorConfig, model: TargetModel, mass=None):
    """Run ``n1`` steps from ``(pos, p)``; returns the final position and momentum.

    Raises :class:`IntegrationError` when the energy leaves ``[-1e6, 1e6]`` or
    turns non-finite, and lets :class:`GeometryError` through.
    """
    eps, n2 = config.epsilon, config.n2
    for _ in range(config.n1):
        if config.scheme is Scheme.LEAPFROG:
            pos, p = _leapfrog(pos, p, eps, mass, model)
        elif config.scheme is Scheme.SCHEME1:
            pos, p = _scheme1(pos, p, eps, n2, model)
        else:
            pos, p = _scheme2(pos, p, eps, n2, model)
        energy = pos.energy(p)
        if not math.isfinite(energy) or abs(energy) > ENERGY_LIMIT:
            raise IntegrationError("trajectory diverged")
    return pos, p
