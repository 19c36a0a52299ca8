import json

import numpy as np
import pytest

from geodesic_mc.cli import main
from geodesic_mc.config import ConfigError, ExperimentConfig
from geodesic_mc.experiments import (
    THREADS_ENV,
    compare,
    compare_csv,
    config_from_summary,
    git_blob_hash,
    read_trace,
    run_experiment,
    run_single,
)

GAUSSIAN = """\
# tiny run
model = gaussian
model.dim = 2
sampler = {sampler}
sampler.n_samples = {n}
sampler.burn_in = 10
sampler.epsilon = 0.3
sampler.n1 = 3
seed = 7
output = out
"""


def write_cfg(tmp_path, sampler="hmc", n=30, extra=""):
    path = tmp_path / f"{sampler}.cfg"
    path.write_text(GAUSSIAN.format(sampler=sampler, n=n) + extra)
    return path


def test_parse_reports_line_numbers():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.parse("model = gaussian\nseed = 1\nsampler.epsilon = fast\n", source="x.cfg")
    assert err.value.line == 3 and err.value.key == "sampler.epsilon"
    assert "x.cfg, line 3" in str(err.value)
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.parse("model = gaussian\nseed 1\n")
    assert err.value.line == 2
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.parse("model = gaussian\nseed = 1\nseed = 2\n")
    assert err.value.line == 3


def test_unknown_and_missing_keys():
    with pytest.raises(ConfigError, match="unknown sampler setting"):
        ExperimentConfig.parse("model = gaussian\nseed = 1\nsampler.espilon = 0.1\n")
    with pytest.raises(ConfigError, match="unknown setting"):
        ExperimentConfig.parse("model = gaussian\nseed = 1\ncolour = red\n")
    with pytest.raises(ConfigError, match="missing required"):
        ExperimentConfig.parse("model = gaussian\n")
    with pytest.raises(ConfigError, match="block"):
        ExperimentConfig.parse("model = stochvol\nseed = 1\nblock.params.n_samples = 3\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.parse("model = gaussian\nseed = 1\nsampler = gibbs\n")


def test_comments_and_block_overrides():
    cfg = ExperimentConfig.parse(
        "model = stochvol  # inline\nseed = 3\nsampler.epsilon = 0.2\n"
        "block.latent.epsilon = 0.05\nblock.params.sampler = mala\n"
    )
    assert cfg.block_sampler("params") == "mala"
    assert cfg.block_sampler("latent") == "rmhmc"
    assert cfg.sampler_config(block="latent").integrator.epsilon == 0.05
    assert cfg.sampler_config(block="params").integrator.epsilon == 0.2


def test_resolved_config_round_trips():
    cfg = ExperimentConfig.parse("model = gaussian\nseed = 1\nsampler.epsilon = 0.1\n")
    again = ExperimentConfig.parse(cfg.dumps())
    assert again.resolved() == cfg.resolved()
    assert again.sampler_config().integrator.epsilon == 0.1


def test_run_writes_artifacts(tmp_path):
    cfg = ExperimentConfig.load(write_cfg(tmp_path, "hmc"))
    summary = run_single(cfg)
    out = tmp_path / "out"
    header, arr = read_trace(out / "trace.csv")
    assert header == ["theta_0", "theta_1", "accepted", "energy"]
    assert arr.shape == (30, 4)
    on_disk = json.loads((out / "summary.json").read_text())
    assert on_disk["n_samples"] == 30 and on_disk["dim"] == 2
    assert 0.0 <= on_disk["acceptance_rate"] <= 1.0
    assert on_disk["input_hash"] == summary["input_hash"]
    assert (out / "config.resolved").read_text().startswith("model = gaussian")


@pytest.mark.parametrize("sampler,columns", [("metropolis", 3), ("mala", 3), ("hmc", 4), ("rmhmc", 4)])
def test_trace_column_counts(tmp_path, sampler, columns):
    cfg = ExperimentConfig.load(write_cfg(tmp_path, sampler, n=5))
    run_single(cfg, tmp_path / sampler)
    header, arr = read_trace(tmp_path / sampler / "trace.csv")
    assert len(header) == columns and arr.shape == (5, columns)


def test_zero_samples(tmp_path):
    cfg = ExperimentConfig.load(write_cfg(tmp_path, "mala", n=0))
    summary = run_single(cfg)
    _, arr = read_trace(tmp_path / "out" / "trace.csv")
    assert arr.shape == (0, 3)
    assert summary["n_samples"] == 0
    json.loads((tmp_path / "out" / "summary.json").read_text())


def test_rerun_is_byte_identical(tmp_path):
    cfg = ExperimentConfig.load(write_cfg(tmp_path, "rmhmc"))
    run_single(cfg, tmp_path / "a")
    run_single(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


def test_summary_reconstructs_config(tmp_path):
    cfg = ExperimentConfig.load(write_cfg(tmp_path, "hmc"))
    summary = run_single(cfg)
    rebuilt = config_from_summary(json.loads((tmp_path / "out" / "summary.json").read_text()))
    assert rebuilt.resolved() == cfg.resolved()
    run_single(rebuilt, tmp_path / "again")
    assert (tmp_path / "again" / "trace.csv").read_bytes() == (tmp_path / "out" / "trace.csv").read_bytes()
    assert summary["config"] == cfg.resolved()


def test_input_hash_is_git_blob():
    assert git_blob_hash(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert git_blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def fake_summary(sampler, cost, model="logistic", dataset="pima"):
    return {
        "model": model, "dataset": dataset, "sampler": sampler, "sampling_time": cost * 10,
        "ess": {"min": 10.0, "median": 20.0, "max": 30.0, "seconds_per_min_ess": cost},
    }


def test_compare_relative_speeds():
    rows = compare([fake_summary("hmc", 2.0), fake_summary("rmhmc", 0.5)])
    assert [r[0] for r in rows] == ["HMC", "RM-HMC"]
    assert rows[0][-1] == 1.0 and rows[1][-1] == 4.0
    assert compare([fake_summary("mala", 3.0)])[0][-1] == 1.0
    text = compare_csv([fake_summary("hmc", 2.0)])
    assert text.splitlines()[0] == "Method,Time,ESS Min,ESS Med,ESS Max,s/Min ESS,Rel. Speed"


def test_compare_rejects_mixed_models():
    with pytest.raises(ValueError):
        compare([fake_summary("hmc", 1.0), fake_summary("hmc", 1.0, model="lgcp")])


def test_cli_exit_codes(tmp_path, capsys):
    good = write_cfg(tmp_path, "hmc")
    assert main(["run", str(good)]) == 0
    bad = tmp_path / "bad.cfg"
    bad.write_text("model = gaussian\nseed = one\n")
    assert main(["run", str(bad)]) == 1
    assert "line 2" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == 1
    # y so large that the log-density overflows at the starting point
    (tmp_path / "huge.csv").write_text("y\n1e200\n-1e200\n")
    broken = tmp_path / "broken.cfg"
    broken.write_text("model = banana\ndata.path = huge.csv\nsampler = metropolis\nseed = 1\n"
                      "sampler.n_samples = 3\noutput = broken\n")
    with np.errstate(over="ignore"):
        assert main(["run", str(broken)]) == 2


def test_missing_data_fails_before_sampling(tmp_path):
    cfg = tmp_path / "x.cfg"
    cfg.write_text("model = banana\nseed = 1\nsampler = rmhmc\ndata.path = nowhere.csv\n")
    assert main(["run", str(cfg)]) == 1
    assert not (tmp_path / "output").exists()


def test_cli_compare(tmp_path, capsys):
    for name in ("hmc", "mala"):
        run_single(ExperimentConfig.load(write_cfg(tmp_path, name, n=20)), tmp_path / name)
    out = tmp_path / "table.csv"
    assert main(["compare", str(tmp_path / "hmc" / "summary.json"), str(tmp_path / "mala" / "summary.json"),
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 3 and lines[1].startswith("HMC")
    assert main(["compare", str(tmp_path / "nope.json")]) == 1


def test_cli_chains(tmp_path, monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "1")
    cfg = write_cfg(tmp_path, "mala", n=40)
    assert main(["run", str(cfg), "--chains", "3", "--output", str(tmp_path / "multi")]) == 0
    combined = json.loads((tmp_path / "multi" / "summary.json").read_text())
    assert combined["seeds"] == [7, 8, 9]
    assert len(combined["split_rhat"]) == 2
    a = (tmp_path / "multi" / "chain_0" / "trace.csv").read_bytes()
    b = (tmp_path / "multi" / "chain_1" / "trace.csv").read_bytes()
    assert a != b


def test_threads_env_validated(tmp_path, monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "many")
    cfg = ExperimentConfig.load(write_cfg(tmp_path, "mala", n=5))
    with pytest.raises(ConfigError):
        run_experiment(cfg, 2)


@pytest.mark.parametrize(
    "model,columns",
    [
        ("stochvol", ["t", "y", "x_true"]),
        ("lgcp", ["i", "j", "y", "x_true"]),
        ("fhn", ["t", "y_1", "y_2", "x_true_1", "x_true_2"]),
        ("banana", ["y"]),
    ],
)
def test_cli_simulate(tmp_path, model, columns):
    out = tmp_path / f"{model}.csv"
    params = {"stochvol": ["T=50"], "lgcp": ["n=4"], "fhn": ["T=15"], "banana": ["n=10"]}[model]
    assert main(["simulate", model, *params, "seed=3", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].split(",") == columns
    assert main(["simulate", model, "seed=x", "--out", str(out)]) == 1


def test_simulated_data_drives_a_run(tmp_path):
    data = tmp_path / "sv.csv"
    assert main(["simulate", "stochvol", "T=40", "--out", str(data)]) == 0
    cfg = tmp_path / "sv.cfg"
    cfg.write_text("model = stochvol\ndata.path = sv.csv\nseed = 2\nsampler.n_samples = 5\n"
                   "sampler.burn_in = 2\nsampler.n2 = 2\noutput = sv\n")
    assert main(["run", str(cfg)]) == 0
    header, arr = read_trace(tmp_path / "sv" / "trace.csv")
    assert header == ["beta", "sigma", "phi", "accepted"]
    assert arr.shape == (5, 4)


def test_unknown_model_and_block(tmp_path):
    cfg = tmp_path / "x.cfg"
    cfg.write_text("model = weather\nseed = 1\n")
    assert main(["run", str(cfg)]) == 1
    cfg.write_text("model = stochvol\ndata.simulate = true\nseed = 1\nblock.volatility.epsilon = 0.1\n")
    assert main(["run", str(cfg)]) == 1
