"""Compiled inner loop for the momentum sweep with rank-one ``A^k``."""

import numba
import numpy as np


@numba.njit(cache=True)
def rank_one_sweep(g_inv, scale, p, eps, pole_tol):
    """Symmetric coordinate sweep for ``A^k = scale_k u_k u_k^T``.

    Updates ``p`` in place and returns ``False`` on a pole.  ``g_inv @ p`` is
    kept up to date incrementally as each coordinate changes.
    """
    d = p.size
    gp = g_inv @ p
    n_steps = 2 * d - 1
    for i in range(n_steps):
        k = i if i < d else n_steps - 1 - i
        h = eps if i == d - 1 else 0.5 * eps
        ukk = g_inv[k, k]
        s = gp[k] - ukk * p[k]
        c = scale[k]
        alpha = c * ukk * ukk
        beta = 2.0 * c * ukk * s
        gamma = c * s * s
        p1 = p[k] + 0.5 * h * gamma
        den = 1.0 - 0.5 * h * alpha * p1
        if abs(den) < pole_tol:
            return False
        p3 = np.exp(h * beta) * p1 / den
        den = 1.0 - 0.5 * h * alpha * p3
        if abs(den) < pole_tol:
            return False
        new = p3 / den + 0.5 * h * gamma
        delta = new - p[k]
        p[k] = new
        for j in range(d):
            gp[j] += delta * g_inv[j, k]
    return True
