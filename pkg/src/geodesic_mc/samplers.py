"""Chain drivers: component-wise adaptive Metropolis, MALA, HMC and RM-HMC.

Each sampler is a kernel object with a ``step`` method so that the Gibbs
schemes of the latent-variable models can reuse them on conditional
targets.  :func:`run_chain` drives a kernel and records a :class:`ChainTrace`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from geodesic_mc.core import (
    DenseMetric,
    PhaseState,
    Position,
    SamplingError,
    TargetModel,
    evaluate,
    has_metric,
)
from geodesic_mc.integrators import IntegratorConfig, Scheme, integrate

ADAPT_FACTOR = 1.2


@dataclass
class SamplerConfig:
    """Settings shared by all samplers; each sampler reads the fields it needs.

    ``step_size`` is the MALA variance ``h``; ``burn_in_step_size`` (when set)
    is used instead during burn-in so that transient and stationary phases
    can be tuned separately; ``burn_in_epsilon`` plays the same role for the
    HMC and RM-HMC integrator step.  ``proposal_scales`` are the initial per-coordinate
    Metropolis scales.  ``adapt`` turns on burn-in tuning of the step for MALA
    and of ``epsilon`` for HMC/RM-HMC; Metropolis always adapts.
    """

    n_samples: int = 1000
    burn_in: int = 0
    seed: int = 0
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    mass_matrix: np.ndarray | None = None
    burn_in_epsilon: float | None = None
    step_size: float = 0.1
    burn_in_step_size: float | None = None
    proposal_scales: np.ndarray | float = 1.0
    adapt: bool = False
    adapt_window: int = 100
    record_burn_in: bool = False

    def __post_init__(self):
        if self.n_samples < 0 or self.burn_in < 0:
            raise ValueError("n_samples and burn_in must be non-negative")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        for name in ("burn_in_step_size", "burn_in_epsilon"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive")
        if isinstance(self.integrator, dict):
            self.integrator = IntegratorConfig(**self.integrator)


@dataclass
class ChainTrace:
    samples: np.ndarray
    accepted: np.ndarray
    log_density: np.ndarray
    energies: np.ndarray | None = None
    wall_time: float = 0.0
    burn_in_time: float = 0.0
    names: list[str] | None = None
    burn_in_log_density: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self) -> float:
        if self.accepted.size == 0:
            return 0.0
        return float(np.mean(self.accepted))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


def _tune(value, rate, low, high):
    if rate < low:
        return value / ADAPT_FACTOR
    if rate > high:
        return value * ADAPT_FACTOR
    return value


class MetropolisKernel:
    """Component-wise random-walk Metropolis with per-coordinate Gaussian steps.

    During burn-in each scale is multiplied or divided by 1.2 after every
    window whose acceptance rate falls outside ``band``.
    """

    band = (0.2, 0.4)

    def __init__(self, model: TargetModel, scales=1.0, window=100):
        self.model = model
        self.scales = np.broadcast_to(np.asarray(scales, dtype=float), (model.dim,)).copy()
        self.window = window
        self._hits = np.zeros(model.dim)
        self._count = 0
        self.component_accepts = np.zeros(model.dim)
        self.n_steps = 0

    def init(self, theta):
        theta = np.array(theta, dtype=float)
        lp = float(self.model.log_density(theta))
        if not math.isfinite(lp):
            raise SamplingError("log-density is not finite at the initial point")
        return theta, lp

    def step(self, state, rng, tuning=False, **_):
        theta, lp = state
        theta = theta.copy()
        moved = np.zeros(self.model.dim, dtype=bool)
        for i in range(self.model.dim):
            old = theta[i]
            theta[i] = old + self.scales[i] * rng.standard_normal()
            lp_new = float(self.model.log_density(theta))
            if math.isfinite(lp_new) and math.log(rng.uniform()) < lp_new - lp:
                lp = lp_new
                moved[i] = True
            else:
                theta[i] = old
        self.component_accepts += moved
        self.n_steps += 1
        if tuning:
            self._hits += moved
            self._count += 1
            if self._count == self.window:
                rates = self._hits / self._count
                for i, r in enumerate(rates):
                    self.scales[i] = _tune(self.scales[i], r, *self.band)
                self._hits[:] = 0
                self._count = 0
        return (theta, lp), bool(moved.any()), None

    def position(self, state):
        return state[0], state[1]


class MalaKernel:
    """Langevin proposal ``N(theta + h/2 grad L, h I)`` with Hastings correction."""

    band = (0.4, 0.6)

    def __init__(self, model: TargetModel, step_size=0.1, burn_in_step_size=None, window=100):
        self.model = model
        self.step_size = step_size
        self.burn_in_step_size = burn_in_step_size
        self.tuned = burn_in_step_size if burn_in_step_size is not None else step_size
        self.window = window
        self._hits = 0
        self._count = 0

    def proposal_mean(self, theta, grad, h):
        return theta + 0.5 * h * grad

    def _log_q(self, to, mean, h):
        r = to - mean
        return -0.5 * float(r @ r) / h

    def init(self, theta):
        return evaluate(self.model, theta, _IDENTITY_PLACEHOLDER)

    def current_h(self, burning):
        if burning or self.burn_in_step_size is None:
            return self.tuned
        return self.step_size

    def step(self, pos: Position, rng, tuning=False, burning=False):
        h = self.current_h(burning)
        mean = self.proposal_mean(pos.theta, pos.grad, h)
        prop = mean + math.sqrt(h) * rng.standard_normal(pos.theta.size)
        accept = False
        try:
            new = evaluate(self.model, prop, _IDENTITY_PLACEHOLDER)
            log_ratio = (
                new.log_density
                - pos.log_density
                + self._log_q(pos.theta, self.proposal_mean(new.theta, new.grad, h), h)
                - self._log_q(prop, mean, h)
            )
            accept = math.log(rng.uniform()) < log_ratio
        except SamplingError:
            rng.uniform()
        if accept:
            pos = new
        if tuning:
            self._hits += accept
            self._count += 1
            if self._count == self.window:
                self.tuned = _tune(self.tuned, self._hits / self._count, *self.band)
                self._hits = 0
                self._count = 0
        return pos, accept, None

    def position(self, pos):
        return pos.theta, pos.log_density


class _Identity:
    """Placeholder metric for kernels that never use one."""

    constant = True


_IDENTITY_PLACEHOLDER = _Identity()


class HamiltonianKernel:
    """HMC (leapfrog, constant mass) or RM-HMC (Scheme 1/2) transition.

    Momentum is refreshed from ``N(0, G(theta))`` every iteration and the
    proposal is accepted with probability ``min(1, exp(H - H*))``.  Any
    integration failure counts as a rejection.
    """

    band = (0.7, 0.9)

    def __init__(
        self, model: TargetModel, integrator: IntegratorConfig, mass_matrix=None, window=100,
        burn_in_epsilon=None,
    ):
        self.model = model
        self.integrator = IntegratorConfig(
            integrator.epsilon, integrator.n1, integrator.n2, integrator.scheme
        )
        # a separate, usually smaller, step for the transient phase
        self.burn_in = None
        if burn_in_epsilon is not None:
            self.burn_in = IntegratorConfig(
                burn_in_epsilon, integrator.n1, integrator.n2, self.integrator.scheme
            )
        self.window = window
        self.mass = None
        if self.integrator.scheme is Scheme.LEAPFROG:
            if mass_matrix is None:
                mass_matrix = np.eye(model.dim)
            self.mass = DenseMetric(np.atleast_2d(mass_matrix))
        self._hits = 0
        self._count = 0
        self.n_failures = 0

    def _evaluate(self, theta):
        return evaluate(self.model, theta, self.mass)

    def init(self, theta):
        return self._evaluate(theta)

    def current_integrator(self, burning):
        if burning and self.burn_in is not None:
            return self.burn_in
        return self.integrator

    def step(self, pos: Position, rng, tuning=False, burning=False):
        integ = self.current_integrator(burning)
        metric = pos.metric
        start = PhaseState.from_position(pos, metric.sample(rng))
        accept = False
        energy = start.energy
        try:
            new, p = integrate(pos, start.p, integ, self.model, self.mass)
            proposal = PhaseState.from_position(new, p)
            accept = math.log(rng.uniform()) < start.energy - proposal.energy
        except SamplingError:
            self.n_failures += 1
            rng.uniform()
        if accept:
            pos = new
            energy = proposal.energy
        if tuning:
            self._hits += accept
            self._count += 1
            if self._count == self.window:
                rate = self._hits / self._count
                integ.epsilon = _tune(integ.epsilon, rate, *self.band)
                self._hits = 0
                self._count = 0
        return pos, accept, energy

    def position(self, pos):
        return pos.theta, pos.log_density


def make_kernel(name: str, model: TargetModel, config: SamplerConfig):
    name = name.lower()
    if name == "metropolis":
        return MetropolisKernel(model, config.proposal_scales, config.adapt_window)
    if name == "mala":
        return MalaKernel(model, config.step_size, config.burn_in_step_size, config.adapt_window)
    if name == "hmc":
        integ = IntegratorConfig(config.integrator.epsilon, config.integrator.n1, 1, Scheme.LEAPFROG)
        return HamiltonianKernel(
            model, integ, config.mass_matrix, config.adapt_window, config.burn_in_epsilon
        )
    if name == "rmhmc":
        if not has_metric(model):
            raise ValueError(f"{type(model).__name__} has no metric; RM-HMC needs one")
        integ = config.integrator
        if integ.scheme is Scheme.LEAPFROG:
            integ = IntegratorConfig(integ.epsilon, integ.n1, integ.n2, Scheme.SCHEME1)
        return HamiltonianKernel(model, integ, None, config.adapt_window, config.burn_in_epsilon)
    raise ValueError(f"unknown sampler {name!r}")


def run_chain(kernel, config: SamplerConfig, theta0=None, rng=None) -> ChainTrace:
    """Burn in, then record ``config.n_samples`` states of ``kernel``."""
    model = kernel.model
    if rng is None:
        rng = np.random.default_rng(config.seed)
    theta0 = model.initial_point() if theta0 is None else theta0
    try:
        state = kernel.init(theta0)
    except SamplingError as exc:
        raise SamplingError(f"cannot start chain: {exc}") from exc
    adapt = config.adapt or isinstance(kernel, MetropolisKernel)
    hamiltonian = isinstance(kernel, HamiltonianKernel)

    burn_lp = np.empty(config.burn_in) if config.record_burn_in else None
    start = time.perf_counter()
    for i in range(config.burn_in):
        state, _, _ = kernel.step(state, rng, tuning=adapt, burning=True)
        if burn_lp is not None:
            burn_lp[i] = kernel.position(state)[1]
    burn_time = time.perf_counter() - start

    n, d = config.n_samples, model.dim
    samples = np.empty((n, d))
    accepted = np.zeros(n, dtype=bool)
    log_density = np.empty(n)
    energies = np.empty(n) if hamiltonian else None
    start = time.perf_counter()
    for i in range(n):
        state, acc, energy = kernel.step(state, rng, tuning=False, burning=False)
        samples[i], log_density[i] = kernel.position(state)
        accepted[i] = acc
        if energies is not None:
            energies[i] = energy
    wall = time.perf_counter() - start

    info = {}
    if isinstance(kernel, MetropolisKernel):
        info["proposal_scales"] = kernel.scales.tolist()
    elif isinstance(kernel, MalaKernel):
        info["step_size"] = kernel.current_h(False)
    elif hamiltonian:
        info["epsilon"] = kernel.integrator.epsilon
        info["integration_failures"] = kernel.n_failures
    return ChainTrace(
        samples,
        accepted,
        log_density,
        energies,
        wall_time=wall,
        burn_in_time=burn_time,
        names=list(model.coordinate_names),
        burn_in_log_density=burn_lp,
        info=info,
    )


def run_metropolis(model, config, theta0=None, rng=None):
    return run_chain(make_kernel("metropolis", model, config), config, theta0, rng)


def run_mala(model, config, theta0=None, rng=None):
    return run_chain(make_kernel("mala", model, config), config, theta0, rng)


def run_hmc(model, config, theta0=None, rng=None):
    return run_chain(make_kernel("hmc", model, config), config, theta0, rng)


def run_rmhmc(model, config, theta0=None, rng=None):
    return run_chain(make_kernel("rmhmc", model, config), config, theta0, rng)


def run_sampler(name, model, config, theta0=None, rng=None):
    return run_chain(make_kernel(name, model, config), config, theta0, rng)


def block_update(kernel, model: TargetModel, theta, rng, tuning=False, burning=False):
    """One transition of ``kernel`` on the conditional target ``model``.

    Used by Gibbs sweeps: the kernel keeps its tuning state across sweeps
    while the target it acts on changes with the other blocks.  Returns the
    new coordinates and whether the proposal was accepted.
    """
    kernel.model = model
    state = kernel.init(theta)
    state, accepted, _ = kernel.step(state, rng, tuning=tuning, burning=burning)
    return np.array(kernel.position(state)[0]), accepted
