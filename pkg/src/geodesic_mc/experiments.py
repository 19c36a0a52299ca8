"""Experiment runner: data, model and sampler wiring plus on-disk artifacts.

A run writes three files into its output directory:

* ``trace.csv``: one row per retained sample with one column per
  coordinate, then the acceptance flag and, for HMC and RM-HMC chains, the
  energy of the state.
* ``summary.json``: ESS report, acceptance, timings, the resolved
  configuration and a content hash of the inputs.
* ``config.resolved``: the configuration with every default filled in.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from geodesic_mc import __version__
from geodesic_mc.config import ConfigError, ExperimentConfig, format_value
from geodesic_mc.diagnostics import ess_report, split_rhat
from geodesic_mc.models import gpode, lgcp, logistic, stochvol, toy
from geodesic_mc.samplers import ChainTrace, make_kernel, run_chain

THREADS_ENV = "GEODESIC_MC_THREADS"
MODELS = ("gaussian", "banana", "logistic", "stochvol", "lgcp", "gpode")
BLOCKS = {"stochvol": ("params", "latent"), "gpode": ("hyper", "gamma", "theta")}


# -- data ---------------------------------------------------------------------------


def git_blob_hash(data: bytes) -> str:
    """SHA-1 of ``data`` framed the way git hashes a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _read_table(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], [r for r in rows[1:] if r]
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return {name.strip(): data[:, i] for i, name in enumerate(header)}


def write_table(path, columns: dict[str, np.ndarray]):
    names = list(columns)
    arr = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for row in arr:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def _data_float(params, key, default):
    try:
        return float(params.get(key, default))
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {params[key]!r}", key=f"data.{key}") from exc


def _data_int(params, key, default):
    try:
        return int(params.get(key, default))
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {params[key]!r}", key=f"data.{key}") from exc


def simulate_data(model: str, params: dict) -> dict[str, np.ndarray]:
    """Simulate a dataset for ``model`` from string-valued ``params``."""
    seed = _data_int(params, "seed", 0)
    rng = np.random.default_rng(seed)
    if model == "stochvol":
        y, x = stochvol.simulate(
            _data_float(params, "beta", 0.65),
            _data_float(params, "sigma", 0.15),
            _data_float(params, "phi", 0.98),
            _data_int(params, "T", 500),
            rng,
        )
        return {"t": np.arange(1, y.size + 1), "y": y, "x_true": x}
    if model == "lgcp":
        n = _data_int(params, "n", 16)
        x, y = lgcp.generate(
            n,
            _data_float(params, "mu", lgcp.DEFAULT_MU),
            _data_float(params, "sigma2", lgcp.DEFAULT_SIGMA2),
            _data_float(params, "beta", lgcp.DEFAULT_BETA),
            rng,
        )
        i, j = np.divmod(np.arange(n * n), n)
        return {"i": i + 1, "j": j + 1, "y": y.astype(float), "x_true": x}
    if model in ("gpode", "fhn"):
        theta = tuple(_data_float(params, k, v) for k, v in (("a", 0.2), ("b", 0.2), ("c", 3.0)))
        t, Y, X = gpode.simulate_fhn(
            theta,
            T=_data_int(params, "T", 40),
            t_end=_data_float(params, "t_end", 20.0),
            noise=_data_float(params, "noise", 0.1),
            rng=rng,
        )
        return {"t": t, "y_1": Y[0], "y_2": Y[1], "x_true_1": X[0], "x_true_2": X[1]}
    if model == "banana":
        y = rng.normal(_data_float(params, "signal", 1.0), _data_float(params, "sigma_y", 2.0),
                       _data_int(params, "n", 100))
        return {"y": y}
    raise ConfigError(f"no simulator for model {model!r}")


def _load_data(cfg: ExperimentConfig):
    """Return ``(columns, input_bytes)`` for the configured data source."""
    params = cfg.data_params()
    path = params.get("path")
    simulate = params.get("simulate", "false").lower() in ("1", "true", "yes", "on")
    if path and simulate:
        raise ConfigError("give either data.path or data.simulate, not both", key="data.path")
    if simulate:
        return simulate_data(cfg.model, params), b""
    if not path:
        if cfg.model == "gaussian":
            return {}, b""
        raise ConfigError("missing data.path (or data.simulate = true)", key="data.path", source=cfg.source)
    if cfg.model == "logistic" and path in logistic.BUNDLED:
        raw = resources.files("geodesic_mc.data").joinpath(logistic.BUNDLED[path]).read_bytes()
        return {"bundled": path}, raw
    full = cfg.resolve_path(path)
    if not full.is_file():
        entry = cfg.entries.get("data.path")
        raise ConfigError(f"data file {str(full)!r} does not exist", entry.line if entry else None,
                          "data.path", cfg.source)
    raw = full.read_bytes()
    if cfg.model == "logistic":
        return {"path": str(full)}, raw
    return _read_table(full), raw


def _column(data, name, cfg):
    if name not in data:
        raise ConfigError(f"dataset has no column {name!r}", key="data.path", source=cfg.source)
    return data[name]


def _model_float(cfg, key, default):
    try:
        return float(cfg.model_params().get(key, default))
    except ValueError as exc:
        entry = cfg.entries[f"model.{key}"]
        raise ConfigError(f"expected a number, got {entry.value!r}", entry.line, f"model.{key}",
                          cfg.source) from exc


# -- Gibbs drivers ----------------------------------------------------------------------


class _StochVolRun:
    names = ["beta", "sigma", "phi"]

    def __init__(self, sampler: stochvol.StochVolSampler):
        self.sampler = sampler
        self.dim = 3

    def initial_state(self):
        return self.sampler.initial_state()

    def sweep(self, state, rng, burning):
        state, (acc_p, _) = self.sampler.sweep(state, rng, burning)
        return state, acc_p

    def record(self, state):
        return np.array(stochvol.natural_params(state))

    def info(self):
        out = {}
        for name, kernel in (("params", self.sampler.param_kernel), ("latent", self.sampler.latent_kernel)):
            if hasattr(kernel, "integrator"):
                out[f"{name}_epsilon"] = kernel.integrator.epsilon
        return out


class _GPODERun:
    def __init__(self, sampler: gpode.GPODESampler):
        self.sampler = sampler
        self.names = ["a", "b", "c"][: sampler.system.n_params]
        self.dim = sampler.system.n_params

    def initial_state(self):
        return self.sampler.initial_state()

    def sweep(self, state, rng, burning):
        state = self.sampler.sweep(state, rng, burning)
        return state, bool(state.stats["theta"])

    def record(self, state):
        return np.asarray(state.theta, dtype=float)

    def info(self):
        kernel = self.sampler.theta_kernel
        return {"theta_epsilon": kernel.integrator.epsilon} if hasattr(kernel, "integrator") else {}


def run_gibbs(runner, n_samples, burn_in, rng) -> ChainTrace:
    """Burn in and record ``runner`` sweeps into a ``ChainTrace``."""
    state = runner.initial_state()
    start = time.perf_counter()
    for _ in range(burn_in):
        state, _ = runner.sweep(state, rng, True)
    burn_time = time.perf_counter() - start
    samples = np.empty((n_samples, runner.dim))
    accepted = np.zeros(n_samples, dtype=bool)
    start = time.perf_counter()
    for i in range(n_samples):
        state, accepted[i] = runner.sweep(state, rng, False)
        samples[i] = runner.record(state)
    wall = time.perf_counter() - start
    return ChainTrace(
        samples, accepted, np.full(n_samples, np.nan), None, wall, burn_time,
        list(runner.names), info=runner.info(),
    )


# -- model construction -------------------------------------------------------------------


def _single_model(cfg, data):
    model_id = cfg.model
    mp = cfg.model_params()
    if model_id == "gaussian":
        dim = int(_model_float(cfg, "dim", 1))
        model = toy.GaussianModel.standard(dim)
    elif model_id == "banana":
        model = toy.BananaModel(_column(data, "y", cfg), _model_float(cfg, "sigma_y", 2.0),
                                _model_float(cfg, "sigma_theta", 1.0))
    elif model_id == "logistic":
        source = data.get("bundled") or data.get("path")
        degree = mp.get("degree")
        try:
            model = logistic.LogisticModel.from_dataset(
                source, _model_float(cfg, "alpha", 100.0), None if degree is None else int(degree)
            )
        except ValueError as exc:
            raise ConfigError(f"bad logistic dataset: {exc}", key="data.path", source=cfg.source) from exc
    else:
        y = _column(data, "y", cfg)
        if "i" in data and "j" in data:
            y = y[np.lexsort((data["j"], data["i"]))]
        n = int(round(math.sqrt(y.size)))
        if n * n != y.size:
            raise ConfigError("LGCP counts must fill a square grid", key="data.path", source=cfg.source)
        model = lgcp.LGCPModel(
            y, n,
            _model_float(cfg, "mu", lgcp.DEFAULT_MU),
            _model_float(cfg, "sigma2", lgcp.DEFAULT_SIGMA2),
            _model_float(cfg, "beta", lgcp.DEFAULT_BETA),
        )
    return model


def build_model(cfg: ExperimentConfig):
    """The target model of a single-chain experiment (not the Gibbs ones)."""
    if cfg.model in BLOCKS:
        raise ConfigError(f"model {cfg.model!r} is sampled by Gibbs sweeps, not a single chain")
    data, _ = _load_data(cfg)
    return _single_model(cfg, data)


def build(cfg: ExperimentConfig, seed=None):
    """Construct the target and a zero-argument chain runner for ``cfg``.

    Every check that can fail on configuration grounds (unknown model, missing
    data, sampler without the model capabilities it needs) happens here,
    before any sampling.  Returns ``(runner, input_bytes, hamiltonian)``.
    """
    model_id = cfg.model
    if model_id not in MODELS:
        raise ConfigError(f"unknown model {model_id!r}; choose from {', '.join(MODELS)}",
                          cfg.entries["model"].line, "model", cfg.source)
    data, raw = _load_data(cfg)
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)

    if model_id in BLOCKS:
        for block in cfg.block_names():
            if block not in BLOCKS[model_id]:
                raise ConfigError(f"model {model_id!r} has blocks {', '.join(BLOCKS[model_id])}",
                                  key=f"block.{block}", source=cfg.source)
        chain_cfg = cfg.sampler_config(seed=seed)

        def block_args(name):
            return cfg.block_sampler(name), cfg.sampler_config(block=name, seed=seed)

        try:
            if model_id == "stochvol":
                y = _column(data, "y", cfg)
                (ps, pc), (ls, lc) = block_args("params"), block_args("latent")
                runner = _StochVolRun(stochvol.StochVolSampler(y, ps, pc, ls, lc))
            else:
                t = _column(data, "t", cfg)
                species = sorted((k for k in data if k.startswith("y_")), key=lambda k: int(k[2:]))
                if not species:
                    raise ConfigError("observation CSV needs columns y_1..y_N", key="data.path",
                                      source=cfg.source)
                Y = np.vstack([data[k] for k in species])
                (hs, hc), (gs, gc), (ts, tc) = (block_args(b) for b in BLOCKS["gpode"])
                prior_sd = _model_float(cfg, "prior_sd", gpode.PRIOR_SD)
                sampler = gpode.GPODESampler(t, Y, None, hs, hc, gs, gc, ts, tc, prior_sd)
                runner = _GPODERun(sampler)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), source=cfg.source) from exc
        return (lambda: run_gibbs(runner, chain_cfg.n_samples, chain_cfg.burn_in, rng)), raw, False

    model = _single_model(cfg, data)
    sampler_cfg = cfg.sampler_config(dim=model.dim, seed=seed)
    try:
        kernel = make_kernel(cfg.sampler, model, sampler_cfg)
    except ValueError as exc:
        raise ConfigError(str(exc), cfg.entries.get("sampler", None) and cfg.entries["sampler"].line,
                          "sampler", cfg.source) from exc
    hamiltonian = cfg.sampler in ("hmc", "rmhmc")
    return (lambda: run_chain(kernel, sampler_cfg, rng=rng)), raw, hamiltonian


# -- artifacts ---------------------------------------------------------------------------------


def trace_csv(trace: ChainTrace, hamiltonian: bool) -> str:
    """Render a trace as CSV with 17 significant digits."""
    buf = io.StringIO()
    header = list(trace.names) + ["accepted"] + (["energy"] if hamiltonian else [])
    buf.write(",".join(header) + "\n")
    for i in range(trace.n_samples):
        row = ["%.17g" % v for v in trace.samples[i]]
        row.append("1" if trace.accepted[i] else "0")
        if hamiltonian:
            row.append("%.17g" % trace.energies[i])
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def read_trace(path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        body = fh.read()
    if not body.strip():
        return header, np.empty((0, len(header)))
    arr = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    return header, arr.reshape(-1, len(header))


def _summary(cfg, trace: ChainTrace, raw: bytes, seed):
    resolved = cfg.resolved()
    resolved["seed"] = str(seed)
    config_text = "".join(f"{k} = {v}\n" for k, v in resolved.items()).encode()
    report = ess_report(trace.samples, trace.wall_time, trace.acceptance_rate) if trace.n_samples >= 4 else None
    data = cfg.data_params()
    dataset = data.get("path") or "simulated:" + ",".join(
        f"{k}={v}" for k, v in sorted(data.items()) if k != "simulate"
    )
    return {
        "model": cfg.model,
        "sampler": cfg.sampler,
        "dataset": dataset,
        "seed": seed,
        "dim": int(trace.samples.shape[1]),
        "names": list(trace.names),
        "n_samples": trace.n_samples,
        "acceptance_rate": trace.acceptance_rate,
        "burn_in_time": trace.burn_in_time,
        "sampling_time": trace.wall_time,
        "ess": report.to_dict() if report else None,
        "posterior_mean": trace.samples.mean(axis=0).tolist() if trace.n_samples else [],
        "info": trace.info,
        "config": resolved,
        "base_dir": str(cfg.base_dir),
        "input_hash": git_blob_hash(config_text + raw),
        "input_hashes": {"config": git_blob_hash(config_text), "data": git_blob_hash(raw)},
        "version": __version__,
    }


def run_single(cfg: ExperimentConfig, out_dir=None, seed=None) -> dict:
    """Run one chain for ``cfg`` and write its artifacts; returns the summary."""
    seed = cfg.seed if seed is None else seed
    out_dir = Path(out_dir) if out_dir is not None else cfg.output
    runner, raw, hamiltonian = build(cfg, seed)
    trace = runner()
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "trace.csv").write_text(trace_csv(trace, hamiltonian))
    if trace.burn_in_log_density is not None:
        write_table(out_dir / "burn_in.csv", {
            "iteration": np.arange(1, trace.burn_in_log_density.size + 1),
            "log_density": trace.burn_in_log_density,
        })
    summary = _summary(cfg, trace, raw, seed)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    resolved = dict(summary["config"])
    (out_dir / "config.resolved").write_text("".join(f"{k} = {v}\n" for k, v in resolved.items()))
    return summary


def _chain_job(resolved, base_dir, out_dir, seed):
    cfg = ExperimentConfig.from_dict(resolved, base_dir)
    return run_single(cfg, out_dir, seed)


def thread_cap() -> int:
    value = os.environ.get(THREADS_ENV)
    if value is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(value))
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}") from exc


def run_experiment(cfg: ExperimentConfig, chains: int = 1) -> dict:
    """Run ``chains`` replicate chains with seeds ``seed + i``.

    A single chain writes directly into the output directory; several chains
    write into ``chain_<i>`` subdirectories and a combined summary with the
    split R-hat of every coordinate.
    """
    if chains < 1:
        raise ConfigError("--chains must be at least 1")
    if chains == 1:
        return run_single(cfg)
    build(cfg)  # surface configuration problems before spawning workers
    out = cfg.output
    resolved = cfg.resolved()
    jobs = [(resolved, str(cfg.base_dir), out / f"chain_{i}", cfg.seed + i) for i in range(chains)]
    workers = min(chains, thread_cap())
    if workers == 1:
        summaries = [_chain_job(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_chain_job, *zip(*jobs)))
    traces = [read_trace(out / f"chain_{i}" / "trace.csv")[1] for i in range(chains)]
    dim = summaries[0]["dim"]
    rhat = None
    if traces[0].shape[0] >= 4:
        rhat = [split_rhat([tr[:, j] for tr in traces]) for j in range(dim)]
    combined = {
        "model": cfg.model,
        "sampler": cfg.sampler,
        "chains": chains,
        "seeds": [s["seed"] for s in summaries],
        "split_rhat": rhat,
        "config": resolved,
        "chain_summaries": [f"chain_{i}/summary.json" for i in range(chains)],
    }
    (out / "summary.json").write_text(json.dumps(combined, indent=2) + "\n")
    (out / "config.resolved").write_text(cfg.dumps())
    return combined


# -- comparison table --------------------------------------------------------------------------

METHOD_NAMES = {"metropolis": "Metropolis", "mala": "MALA", "hmc": "HMC", "rmhmc": "RM-HMC"}
COMPARE_HEADER = ["Method", "Time", "ESS Min", "ESS Med", "ESS Max", "s/Min ESS", "Rel. Speed"]


def compare(summaries: list[dict]) -> list[list]:
    """Rows of the efficiency table; relative speed is 1 for the slowest sampler."""
    if not summaries:
        raise ValueError("nothing to compare")
    keys = {(s["model"], s.get("dataset")) for s in summaries}
    if len(keys) > 1:
        raise ValueError(f"summaries mix models/datasets: {sorted(map(str, keys))}")
    cost = []
    for s in summaries:
        if not s.get("ess"):
            raise ValueError(f"summary for {s.get('sampler')} has no ESS report")
        cost.append(s["ess"]["seconds_per_min_ess"])
    slowest = max(cost)
    rows = []
    for s, c in zip(summaries, cost):
        e = s["ess"]
        rows.append([
            METHOD_NAMES.get(s["sampler"], s["sampler"]),
            s["sampling_time"],
            e["min"], e["median"], e["max"],
            c,
            slowest / c if c > 0 else math.inf,
        ])
    return rows


def compare_csv(summaries: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(",".join(COMPARE_HEADER) + "\n")
    for row in compare(summaries):
        buf.write(row[0] + "," + ",".join(format_value(float(v)) for v in row[1:]) + "\n")
    return buf.getvalue()


def load_summary(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def config_from_summary(summary: dict) -> ExperimentConfig:
    """Rebuild the configuration that produced ``summary``."""
    return ExperimentConfig.from_dict(summary["config"], summary.get("base_dir"))
