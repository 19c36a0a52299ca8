"""Command-line interface.

``geodesic-mc run <config> [--chains N]`` runs an experiment,
``geodesic-mc compare <summary.json>...`` prints an efficiency table and
``geodesic-mc simulate <model> key=value ... --out data.csv`` writes a
simulated dataset.  Exit status is 0 on success, 1 for configuration
errors and 2 when sampling fails.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from geodesic_mc.config import ConfigError, Entry, ExperimentConfig
from geodesic_mc.core import SamplingError
from geodesic_mc import experiments

EXIT_OK, EXIT_CONFIG, EXIT_SAMPLING = 0, 1, 2


def _parser():
    parser = argparse.ArgumentParser(prog="geodesic-mc", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config")
    run.add_argument("--chains", type=int, default=1, help="independent chains with seeds seed+i")
    run.add_argument("--output", help="override the configured output directory")

    cmp_ = sub.add_parser("compare", help="tabulate summaries of runs on the same model and data")
    cmp_.add_argument("summaries", nargs="+")
    cmp_.add_argument("--out", help="write the CSV here instead of stdout")

    sim = sub.add_parser("simulate", help="write a simulated dataset as CSV")
    sim.add_argument("model", choices=["stochvol", "lgcp", "fhn", "gpode", "banana"])
    sim.add_argument("params", nargs="*", help="simulation settings as key=value")
    sim.add_argument("--out", required=True)
    return parser


def _run(args):
    cfg = ExperimentConfig.load(args.config)
    if args.output:
        cfg.entries["output"] = Entry(str(Path(args.output).resolve()))
    result = experiments.run_experiment(cfg, args.chains)
    if args.chains == 1:
        ess = result["ess"]
        min_ess = f"{ess['min']:.1f}" if ess else "n/a"
        print(
            f"{result['model']}/{result['sampler']}: {result['n_samples']} samples, "
            f"acceptance {result['acceptance_rate']:.3f}, min ESS {min_ess} -> {cfg.output}"
        )
    else:
        print(f"{args.chains} chains -> {cfg.output}")
    return EXIT_OK


def _compare(args):
    try:
        summaries = [experiments.load_summary(p) for p in args.summaries]
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read summary: {exc}") from exc
    try:
        text = experiments.compare_csv(summaries)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _simulate(args):
    params = {}
    for item in args.params:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        params[key.strip()] = value.strip()
    columns = experiments.simulate_data(args.model, params)
    experiments.write_table(args.out, columns)
    print(f"wrote {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": _run, "compare": _compare, "simulate": _simulate}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SamplingError as exc:
        print(f"sampling error: {exc}", file=sys.stderr)
        return EXIT_SAMPLING
