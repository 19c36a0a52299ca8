"""Geometric Markov chain Monte Carlo: Riemannian manifold HMC and baselines."""

from geodesic_mc.core import (
    DenseMetric,
    GeometryError,
    IntegrationError,
    MetricBundle,
    SamplingError,
    TargetModel,
    TridiagonalMetric,
    hamiltonian,
)
from geodesic_mc.diagnostics import ess, ess_report, split_rhat
from geodesic_mc.integrators import IntegratorConfig, Scheme, leapfrog_step, scheme1_step, scheme2_step
from geodesic_mc.samplers import (
    ChainTrace,
    SamplerConfig,
    run_hmc,
    run_mala,
    run_metropolis,
    run_rmhmc,
    run_sampler,
)

__version__ = "0.1.0"

__all__ = [
    "ChainTrace",
    "DenseMetric",
    "GeometryError",
    "IntegrationError",
    "IntegratorConfig",
    "MetricBundle",
    "SamplerConfig",
    "SamplingError",
    "Scheme",
    "TargetModel",
    "TridiagonalMetric",
    "ess",
    "ess_report",
    "hamiltonian",
    "leapfrog_step",
    "run_hmc",
    "run_mala",
    "run_metropolis",
    "run_rmhmc",
    "run_sampler",
    "scheme1_step",
    "scheme2_step",
    "split_rhat",
]
