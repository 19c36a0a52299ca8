"""Gradient matching for ODE parameters with Gaussian-process state models.

Each observed species gets a GP with squared-exponential covariance.  One
sweep of the sampler

1. updates the GP hyperparameters of every species on their marginal likelihood,
2. draws the latent states exactly from the GP posterior,
3. updates the mismatch scales ``delta_n = sqrt(gamma_n)``, and
4. updates the ODE parameters given states and mismatch,

where the last two steps target ``exp(-U / 2)`` with
``U = sum_n (f_n - m_n)^T (K_n + gamma_n I)^-1 (f_n - m_n)``.  The ODE is
never solved during inference.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from geodesic_mc.core import DenseMetric, GeometryError, SamplingError, TargetModel
from geodesic_mc.samplers import SamplerConfig, block_update, make_kernel

PRIOR_SD = 10.0
JITTER = 1e-6


# -- squared-exponential kernel ---------------------------------------------


def _sq_dist(t):
    t = np.asarray(t, dtype=float)
    return np.subtract.outer(t, t) ** 2


def rbf_kernel(t, phi1, phi2, sigma):
    """``phi1 exp(-(t_i - t_j)^2 / (2 phi2^2)) + sigma I``; ``sigma`` is the noise variance."""
    d2 = _sq_dist(t)
    return phi1 * np.exp(-0.5 * d2 / phi2**2) + sigma * np.eye(d2.shape[0])


def kernel_partials(t, phi1, phi2, sigma):
    """``dK/dphi1``, ``dK/dphi2``, ``dK/dsigma`` stacked as ``(3, T, T)``."""
    d2 = _sq_dist(t)
    base = np.exp(-0.5 * d2 / phi2**2)
    return np.stack([base, phi1 * base * d2 / phi2**3, np.eye(d2.shape[0])])


def kernel_second_partials(t, phi1, phi2, sigma):
    """``d2K/dphi_i dphi_j`` as ``(3, 3, T, T)``; only the ``phi1``/``phi2`` block is non-zero."""
    d2 = _sq_dist(t)
    base = np.exp(-0.5 * d2 / phi2**2)
    out = np.zeros((3, 3) + d2.shape)
    out[0, 1] = out[1, 0] = base * d2 / phi2**3
    out[1, 1] = phi1 * base * d2 / phi2**6 * (d2 - 3.0 * phi2**2)
    return out


def _cho(K, theta=None):
    try:
        return linalg.cho_factor(K, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise GeometryError("covariance is not positive definite", theta) from exc


def _check_hyper(hyper):
    if not np.all(np.isfinite(hyper)) or np.any(np.asarray(hyper) <= 0.0):
        raise GeometryError("GP hyperparameters must be positive", hyper)


def gp_marginal_loglik(hyper, y, t):
    """``log N(y | 0, K)`` for the kernel with ``hyper = (phi1, phi2, sigma)``."""
    _check_hyper(hyper)
    K = rbf_kernel(t, *hyper)
    fac = _cho(K, hyper)
    alpha = linalg.cho_solve(fac, y)
    logdet = 2.0 * np.sum(np.log(np.diag(fac[0])))
    return float(-0.5 * y @ alpha - 0.5 * logdet - 0.5 * y.size * math.log(2.0 * math.pi))


def gp_marginal_grad(hyper, y, t):
    """``1/2 tr((K^-1 y y^T K^-1 - K^-1) dK/dphi_i)`` for each hyperparameter."""
    _check_hyper(hyper)
    K = rbf_kernel(t, *hyper)
    fac = _cho(K, hyper)
    k_inv = linalg.cho_solve(fac, np.eye(K.shape[0]))
    alpha = k_inv @ y
    inner = np.outer(alpha, alpha) - k_inv
    dK = kernel_partials(t, *hyper)
    return 0.5 * np.einsum("ij,kji->k", inner, dK)


def gp_metric(hyper, t) -> DenseMetric:
    """Fisher information of the marginal likelihood with its derivatives.

    ``G_ij = 1/2 tr(K^-1 dK_i K^-1 dK_j)``; derivatives follow from the
    product rule with ``d K^-1 = -K^-1 dK K^-1``.
    """
    _check_hyper(hyper)
    K = rbf_kernel(t, *hyper)
    k_inv = linalg.cho_solve(_cho(K, hyper), np.eye(K.shape[0]))
    dK = kernel_partials(t, *hyper)
    d2K = kernel_second_partials(t, *hyper)
    W = k_inv @ dK  # K^-1 dK_k
    flat_t = W.transpose(0, 2, 1).reshape(3, -1)
    # tr(A B) = sum(A * B^T), so every trace below is a plain matrix product
    G = 0.5 * (W.reshape(3, -1) @ flat_t.T)
    triple = ((W[:, None] @ W[None, :]).reshape(9, -1) @ flat_t.T).reshape(3, 3, 3)
    second = ((k_inv @ d2K).reshape(9, -1) @ flat_t.T).reshape(3, 3, 3)
    derivs = 0.5 * (
        -triple - triple.transpose(1, 0, 2) + second + second.transpose(0, 2, 1)
    )
    G = 0.5 * (G + G.T)
    return DenseMetric(G, derivs, theta=np.asarray(hyper, dtype=float))


def log_positive_prior(v, sd=PRIOR_SD):
    """Log-normal prior density ``N(log v | 0, sd^2)`` expressed on ``v``."""
    lv = np.log(v)
    return float(np.sum(-0.5 * (lv / sd) ** 2 - lv))


def log_positive_prior_grad(v, sd=PRIOR_SD):
    return -(np.log(v) / sd**2 + 1.0) / v


class GPHyperModel(TargetModel):
    """Posterior of ``(phi1, phi2, sigma)`` for one species' observations."""

    dim = 3
    coordinate_names = ["signal_variance", "length_scale", "noise_variance"]

    def __init__(self, y, t, prior_sd=PRIOR_SD):
        self.y = np.asarray(y, dtype=float)
        self.t = np.asarray(t, dtype=float)
        self.prior_sd = prior_sd

    def log_density(self, hyper):
        if np.any(np.asarray(hyper) <= 0.0):
            return -math.inf
        try:
            ll = gp_marginal_loglik(hyper, self.y, self.t)
        except GeometryError:
            return -math.inf
        return ll + log_positive_prior(hyper, self.prior_sd)

    def grad_log_density(self, hyper):
        return gp_marginal_grad(hyper, self.y, self.t) + log_positive_prior_grad(hyper, self.prior_sd)

    def metric(self, hyper):
        return gp_metric(hyper, self.t)

    def initial_point(self):
        var = float(np.var(self.y))
        span = float(np.ptp(self.t)) or 1.0
        return np.array([var, span / 10.0, 0.1 * var])


# -- states and their derivatives ---------------------------------------------


def derivative_covariances(t, phi1, phi2):
    """Covariances of the noise-free GP ``x``, its derivative and their cross terms.

    Returns ``(C, dC, ddC)`` where ``dC[i, j] = cov(x'(t_i), x(t_j))`` and
    ``ddC[i, j] = cov(x'(t_i), x'(t_j))``.
    """
    diff = np.subtract.outer(np.asarray(t, dtype=float), np.asarray(t, dtype=float))
    C = phi1 * np.exp(-0.5 * diff**2 / phi2**2)
    dC = -diff / phi2**2 * C
    ddC = C * (1.0 / phi2**2 - diff**2 / phi2**4)
    return C, dC, ddC


def derivative_moments(x, t, phi1, phi2):
    """Mean and covariance of the state derivative given states ``x``."""
    C, dC, ddC = derivative_covariances(t, phi1, phi2)
    C[np.diag_indices_from(C)] += JITTER * phi1
    fac = _cho(C)
    m = dC @ linalg.cho_solve(fac, x)
    K = ddC - dC @ linalg.cho_solve(fac, dC.T)
    return m, 0.5 * (K + K.T)


def state_posterior(y, t, hyper):
    """Mean and covariance of the noise-free states given noisy ``y``."""
    phi1, phi2, sigma = hyper
    C = rbf_kernel(t, phi1, phi2, 0.0)
    A = C + sigma * np.eye(C.shape[0])
    fac = _cho(A, hyper)
    mean = C @ linalg.cho_solve(fac, y)
    cov = sigma * C @ linalg.cho_solve(fac, np.eye(C.shape[0]))
    return mean, 0.5 * (cov + cov.T)


def sample_states(y, t, hyper, rng):
    """Exact draw from the GP posterior over one species' states."""
    mean, cov = state_posterior(y, t, hyper)
    w, v = np.linalg.eigh(cov)
    return mean + v @ (np.sqrt(np.clip(w, 0.0, None)) * rng.standard_normal(w.size))


# -- ODE systems ---------------------------------------------------------------


class ODESystem(ABC):
    """Vector field with analytic first and second parameter partials.

    States are arrays of shape ``(N, T)``; partials have shapes
    ``(N, D, T)`` and ``(N, D, D, T)``.
    """

    n_states: int
    n_params: int
    param_names: list[str]

    @abstractmethod
    def vector_field(self, X, theta): ...

    @abstractmethod
    def first_partials(self, X, theta): ...

    @abstractmethod
    def second_partials(self, X, theta): ...


class FitzhughNagumo(ODESystem):
    """``V' = c (V - V^3/3 + R)``, ``R' = -(V - a + b R) / c`` with ``theta = (a, b, c)``."""

    n_states = 2
    n_params = 3
    param_names = ["a", "b", "c"]

    def vector_field(self, X, theta):
        V, R = X
        a, b, c = theta
        return np.array([c * (V - V**3 / 3.0 + R), -(V - a + b * R) / c])

    def first_partials(self, X, theta):
        V, R = X
        a, b, c = theta
        out = np.zeros((2, 3) + np.shape(V))
        out[0, 2] = V - V**3 / 3.0 + R
        out[1, 0] = 1.0 / c
        out[1, 1] = -R / c
        out[1, 2] = (V - a + b * R) / c**2
        return out

    def second_partials(self, X, theta):
        V, R = X
        a, b, c = theta
        out = np.zeros((2, 3, 3) + np.shape(V))
        out[1, 0, 2] = out[1, 2, 0] = -1.0 / c**2
        out[1, 1, 2] = out[1, 2, 1] = R / c**2
        out[1, 2, 2] = 2.0 * (-V + a - b * R) / c**3
        return out

    def rhs(self, t, state, theta):
        return self.vector_field(np.asarray(state)[:, None], theta)[:, 0]


def simulate_fhn(theta=(0.2, 0.2, 3.0), x0=(-1.0, 1.0), T=40, t_end=20.0, noise=0.1, rng=None):
    """Solve the FitzHugh-Nagumo system and add Gaussian noise.

    The noise standard deviation of each species is ``noise`` times the
    standard deviation of its clean trajectory.  Returns ``(t, Y, X_clean)``.
    """
    from scipy.integrate import solve_ivp

    system = FitzhughNagumo()
    t = np.linspace(0.0, t_end, T)
    sol = solve_ivp(
        system.rhs, (0.0, t_end), np.asarray(x0, dtype=float), t_eval=t,
        args=(np.asarray(theta, dtype=float),), rtol=1e-10, atol=1e-10, method="LSODA",
    )
    X = sol.y
    sd = X.std(axis=1, keepdims=True)
    rng = np.random.default_rng() if rng is None else rng
    return t, X + noise * sd * rng.standard_normal(X.shape), X


# -- gradient-matching targets -----------------------------------------------------


def u_energy(f, m, H):
    """``sum_n (f_n - m_n)^T H_n^-1 (f_n - m_n)`` for stacked species."""
    total = 0.0
    for fn, mn, Hn in zip(f, m, H):
        r = fn - mn
        total += float(r @ linalg.cho_solve(_cho(Hn), r))
    return total


@dataclass
class MatchingTerms:
    """Per-species quantities that are fixed while ``theta`` and ``delta`` move."""

    X: np.ndarray
    m: np.ndarray
    K: np.ndarray

    @classmethod
    def from_states(cls, X, t, hypers):
        ms, Ks = [], []
        for x, (phi1, phi2, _) in zip(X, hypers):
            m, K = derivative_moments(x, t, phi1, phi2)
            ms.append(m)
            Ks.append(K)
        return cls(np.asarray(X), np.array(ms), np.array(Ks))


def theta_metric(F, S, H_inv):
    """Gram-form metric ``sum_n F_n H_n^-1 F_n^T`` and its parameter derivatives.

    ``F`` is ``(N, D, T)``, ``S`` is ``(N, D, D, T)`` and ``H_inv`` is ``(N, T, T)``.
    """
    FH = np.einsum("ndt,nts->nds", F, H_inv)
    G = np.einsum("nds,nes->de", FH, F)
    G = 0.5 * (G + G.T)
    SH = np.einsum("nidt,nts->nids", S, H_inv)
    part = np.einsum("nids,nes->ide", SH, F)
    derivs = part + part.transpose(0, 2, 1)
    return G, derivs


def gamma_metric(delta, K):
    """Fisher information for ``delta = sqrt(gamma)`` and its derivative.

    ``g = 2 gamma tr(H^-2)`` and ``dg/ddelta = 4 delta tr(H^-2 (I - 2 gamma H^-1))``
    with ``H = K + gamma I``.
    """
    gamma = delta * delta
    H = K + gamma * np.eye(K.shape[0])
    w = np.linalg.eigvalsh(H)
    if np.any(w <= 0.0):
        raise GeometryError("mismatch covariance is not positive definite", [delta])
    g = 2.0 * gamma * np.sum(w**-2.0)
    dg = 4.0 * delta * np.sum(w**-2.0 * (1.0 - 2.0 * gamma / w))
    return float(g), float(dg)


class ODEParamModel(TargetModel):
    """Conditional of the ODE parameters given states, GP moments and mismatch."""

    def __init__(self, system: ODESystem, terms: MatchingTerms, gammas, prior_sd=PRIOR_SD):
        self.system = system
        self.terms = terms
        self.dim = system.n_params
        self.prior_sd = prior_sd
        T = terms.m.shape[1]
        self.gammas = np.asarray(gammas, dtype=float)
        self.H_inv = np.array(
            [linalg.cho_solve(_cho(K + g * np.eye(T)), np.eye(T)) for K, g in zip(terms.K, self.gammas)]
        )

    @property
    def coordinate_names(self):
        return list(self.system.param_names)

    def _resid(self, theta):
        with np.errstate(all="ignore"):
            f = self.system.vector_field(self.terms.X, theta)
        return f - self.terms.m

    def u(self, theta):
        r = self._resid(theta)
        return float(np.einsum("nt,nts,ns->", r, self.H_inv, r))

    def grad_u(self, theta):
        r = self._resid(theta)
        F = self.system.first_partials(self.terms.X, theta)
        return 2.0 * np.einsum("ndt,nts,ns->d", F, self.H_inv, r)

    def log_density(self, theta):
        val = -0.5 * self.u(theta) - 0.5 * float(theta @ theta) / self.prior_sd**2
        return val if math.isfinite(val) else -math.inf

    def grad_log_density(self, theta):
        return -0.5 * self.grad_u(theta) - theta / self.prior_sd**2

    def metric(self, theta):
        F = self.system.first_partials(self.terms.X, theta)
        S = self.system.second_partials(self.terms.X, theta)
        G, derivs = theta_metric(F, S, self.H_inv)
        try:
            return DenseMetric(G, derivs, theta=theta)
        except GeometryError:
            jitter = JITTER * float(np.mean(np.diag(G)))
            return DenseMetric(G + jitter * np.eye(self.dim), derivs, theta=theta)


class MismatchModel(TargetModel):
    """Conditional of ``delta_n = sqrt(gamma_n)`` given states and ODE parameters.

    The log-density keeps the ``-1/2 log|K_n + gamma_n I|`` normaliser of the
    Gaussian that relates GP derivatives to the vector field, so that the
    target stays proper in ``gamma``.  The prior is ``N(0, sd^2)`` on
    ``log gamma_n``.
    """

    def __init__(self, residuals, K, prior_sd=PRIOR_SD):
        self.r = np.asarray(residuals, dtype=float)
        self.K = np.asarray(K, dtype=float)
        self.dim = self.r.shape[0]
        self.prior_sd = prior_sd
        self._eig = [np.linalg.eigh(Kn) for Kn in self.K]
        self._proj = [v.T @ r for (w, v), r in zip(self._eig, self.r)]

    @property
    def coordinate_names(self):
        return [f"delta_{n}" for n in range(self.dim)]

    def _spectra(self, delta):
        for (w, _), q, d in zip(self._eig, self._proj, delta):
            yield w + d * d, q

    def log_density(self, delta):
        if np.any(delta <= 0.0):
            return -math.inf
        total = 0.0
        for (h, q), d in zip(self._spectra(delta), delta):
            if np.any(h <= 0.0):
                return -math.inf
            total += -0.5 * float(np.sum(q * q / h)) - 0.5 * float(np.sum(np.log(h)))
            lg = 2.0 * math.log(d)
            total += -0.5 * (lg / self.prior_sd) ** 2 + math.log(2.0 / d)
        return total

    def grad_log_density(self, delta):
        out = np.empty(self.dim)
        for n, ((h, q), d) in enumerate(zip(self._spectra(delta), delta)):
            out[n] = d * float(np.sum(q * q / h**2)) - d * float(np.sum(1.0 / h))
            out[n] += -4.0 * math.log(d) / (self.prior_sd**2 * d) - 1.0 / d
        return out

    def metric(self, delta):
        g = np.empty(self.dim)
        derivs = np.zeros((self.dim, self.dim, self.dim))
        for n, d in enumerate(delta):
            g[n], derivs[n, n, n] = gamma_metric(d, self.K[n])
        return DenseMetric(np.diag(g), derivs, theta=delta)


# -- full sweep -----------------------------------------------------------------


@dataclass
class GPODEState:
    hypers: np.ndarray  # (N, 3)
    X: np.ndarray  # (N, T)
    delta: np.ndarray  # (N,)
    theta: np.ndarray  # (D,)
    stats: dict = field(default_factory=dict)


class SweepError(SamplingError):
    """A sweep stage failed; ``stage`` names which one."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


class GPODESampler:
    """Gibbs sweep over GP hyperparameters, states, mismatch and ODE parameters."""

    def __init__(
        self,
        t,
        Y,
        system: ODESystem | None = None,
        hyper_sampler="rmhmc",
        hyper_config: SamplerConfig | None = None,
        gamma_sampler="rmhmc",
        gamma_config: SamplerConfig | None = None,
        theta_sampler="rmhmc",
        theta_config: SamplerConfig | None = None,
        prior_sd=PRIOR_SD,
    ):
        self.t = np.asarray(t, dtype=float)
        self.Y = np.atleast_2d(np.asarray(Y, dtype=float))
        self.system = system or FitzhughNagumo()
        self.prior_sd = prior_sd
        n = self.Y.shape[0]
        self.hyper_models = [GPHyperModel(y, self.t, prior_sd) for y in self.Y]
        self.hyper_kernels = [
            make_kernel(hyper_sampler, self.hyper_models[i], hyper_config or SamplerConfig())
            for i in range(n)
        ]
        dummy = MismatchModel(np.zeros((n, self.t.size)), np.zeros((n, self.t.size, self.t.size)))
        self.gamma_kernel = make_kernel(gamma_sampler, dummy, gamma_config or SamplerConfig())
        self.theta_kernel = make_kernel(
            theta_sampler, _ThetaPlaceholder(self.system), theta_config or SamplerConfig()
        )
        configs = [c for c in (hyper_config, gamma_config, theta_config) if c is not None]
        self.adapt = any(c.adapt for c in configs)

    def initial_state(self, theta0=None, delta0=0.5):
        hypers = np.array([m.initial_point() for m in self.hyper_models])
        theta0 = np.ones(self.system.n_params) if theta0 is None else np.asarray(theta0, dtype=float)
        return GPODEState(hypers, self.Y.copy(), np.full(self.Y.shape[0], delta0), theta0)

    def sweep(self, state: GPODEState, rng, burning=False) -> GPODEState:
        tuning = burning and self.adapt
        hypers = state.hypers.copy()
        accepted = {}
        for n, (model, kernel) in enumerate(zip(self.hyper_models, self.hyper_kernels)):
            try:
                hypers[n], accepted[f"hyper_{n}"] = block_update(kernel, model, hypers[n], rng, tuning, burning)
            except SamplingError as exc:
                raise SweepError(f"hyperparameters[{n}]", exc) from exc
        try:
            X = np.array([sample_states(y, self.t, h, rng) for y, h in zip(self.Y, hypers)])
            terms = MatchingTerms.from_states(X, self.t, hypers)
        except SamplingError as exc:
            raise SweepError("states", exc) from exc
        try:
            with np.errstate(all="ignore"):
                resid = self.system.vector_field(X, state.theta) - terms.m
            gamma_model = MismatchModel(resid, terms.K, self.prior_sd)
            delta, accepted["delta"] = block_update(self.gamma_kernel, gamma_model, state.delta, rng, tuning, burning)
        except SamplingError as exc:
            raise SweepError("mismatch", exc) from exc
        try:
            theta_model = ODEParamModel(self.system, terms, delta**2, self.prior_sd)
            theta, accepted["theta"] = block_update(self.theta_kernel, theta_model, state.theta, rng, tuning, burning)
        except SamplingError as exc:
            raise SweepError("ode parameters", exc) from exc
        return GPODEState(hypers, X, delta, theta, accepted)


class _ThetaPlaceholder(TargetModel):
    constant_metric = True

    def __init__(self, system):
        self.dim = system.n_params

    def log_density(self, theta):
        return 0.0

    def grad_log_density(self, theta):
        return np.zeros(self.dim)


def full_scheme_sweep(state: GPODEState, sampler: GPODESampler, rng) -> GPODEState:
    return sampler.sweep(state, rng)
