"""Experiment configuration files.

One experiment per file, one ``key = value`` pair per line, ``#`` starts a
comment and dotted keys group related settings::

    model = logistic
    data.path = pima
    sampler = rmhmc
    sampler.epsilon = 0.5
    sampler.n1 = 6
    seed = 1
    output = runs/pima-rmhmc

Composite (Gibbs) models take per-block overrides under
``block.<name>.<key>``; a block without its own ``sampler`` or setting
inherits the top-level one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from geodesic_mc.integrators import IntegratorConfig
from geodesic_mc.samplers import SamplerConfig

SAMPLERS = ("metropolis", "mala", "hmc", "rmhmc")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration, with line/key context when known."""

    def __init__(self, message, line=None, key=None, source=None):
        where = []
        if source:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line, self.key = line, key


def _int(text):
    return int(text)


def _float(text):
    return float(text)


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _scheme(text):
    if text not in ("leapfrog", "scheme1", "scheme2"):
        raise ValueError(f"unknown integrator scheme {text!r}")
    return text


def _sampler(text):
    if text not in SAMPLERS:
        raise ValueError(f"unknown sampler {text!r}; choose from {', '.join(SAMPLERS)}")
    return text


SAMPLER_KEYS = {
    "n_samples": (_int, 1000),
    "burn_in": (_int, 0),
    "epsilon": (_float, 0.1),
    "n1": (_int, 10),
    "n2": (_int, 1),
    "scheme": (_scheme, "scheme1"),
    "burn_in_epsilon": (_float, None),
    "step_size": (_float, 0.1),
    "burn_in_step_size": (_float, None),
    "proposal_scale": (_float, 1.0),
    "mass": (_float, 1.0),
    "adapt": (_bool, False),
    "adapt_window": (_int, 100),
    "record_burn_in": (_bool, False),
}
# keys that only make sense for a whole chain, not per Gibbs block
CHAIN_KEYS = ("n_samples", "burn_in", "record_burn_in")


def format_value(value) -> str:
    """Serialise a setting so that reading it back gives the identical value."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


@dataclass
class Entry:
    value: str
    line: int | None = None


@dataclass
class ExperimentConfig:
    """Parsed experiment: model, data source, sampler settings, seed and output."""

    entries: dict[str, Entry]
    source: str | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    # -- construction -----------------------------------------------------------

    @classmethod
    def parse(cls, text: str, source=None, base_dir=None) -> ExperimentConfig:
        entries = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("expected 'key = value'", lineno, source=source)
            key, value = (part.strip() for part in line.split("=", 1))
            if not key or any(not part for part in key.split(".")):
                raise ConfigError("empty key or key segment", lineno, source=source)
            if key in entries:
                raise ConfigError(
                    f"duplicate key (first set on line {entries[key].line})", lineno, key, source
                )
            entries[key] = Entry(value, lineno)
        cfg = cls(entries, source, Path(base_dir) if base_dir else Path.cwd())
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", source=path) from exc
        return cls.parse(text, source=str(path), base_dir=path.parent)

    @classmethod
    def from_dict(cls, values: dict, base_dir=None) -> ExperimentConfig:
        entries = {k: Entry(str(v)) for k, v in values.items()}
        cfg = cls(entries, None, Path(base_dir) if base_dir else Path.cwd())
        cfg.validate()
        return cfg

    # -- typed access ---------------------------------------------------------------

    def _fail(self, message, key):
        entry = self.entries.get(key)
        raise ConfigError(message, entry.line if entry else None, key, self.source)

    def has(self, key):
        return key in self.entries

    def get(self, key, conv=str, default=None, required=False):
        entry = self.entries.get(key)
        if entry is None:
            if required:
                self._fail("missing required setting", key)
            return default
        try:
            return conv(entry.value)
        except ValueError as exc:
            self._fail(str(exc), key)

    def section(self, prefix) -> dict[str, Entry]:
        head = prefix + "."
        return {k[len(head):]: e for k, e in self.entries.items() if k.startswith(head)}

    @property
    def model(self) -> str:
        return self.get("model", required=True)

    @property
    def sampler(self) -> str:
        return self.get("sampler", _sampler, "rmhmc")

    @property
    def seed(self) -> int:
        return self.get("seed", _int, required=True)

    @property
    def output(self) -> Path:
        return self.resolve_path(self.get("output", default="output"))

    def resolve_path(self, value) -> Path:
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path

    def model_params(self) -> dict[str, str]:
        return {k: e.value for k, e in self.section("model").items()}

    def data_params(self) -> dict[str, str]:
        return {k: e.value for k, e in self.section("data").items()}

    def block_names(self) -> list[str]:
        return sorted({k.split(".", 1)[0] for k in self.section("block")})

    def _sampler_value(self, name, block=None):
        conv, default = SAMPLER_KEYS[name]
        if block is not None and self.has(f"block.{block}.{name}"):
            return self.get(f"block.{block}.{name}", conv)
        return self.get(f"sampler.{name}", conv, default)

    def block_sampler(self, block) -> str:
        return self.get(f"block.{block}.sampler", _sampler, self.sampler)

    def sampler_config(self, block=None, dim=None, seed=None) -> SamplerConfig:
        """Build a ``SamplerConfig`` for the chain, or for one Gibbs block."""
        val = lambda name: self._sampler_value(name, block)  # noqa: E731
        mass = val("mass")
        try:
            integ = IntegratorConfig(val("epsilon"), val("n1"), val("n2"), val("scheme"))
            return SamplerConfig(
                n_samples=val("n_samples"),
                burn_in=val("burn_in"),
                seed=self.seed if seed is None else seed,
                integrator=integ,
                mass_matrix=None if dim is None else mass * np.eye(dim),
                burn_in_epsilon=val("burn_in_epsilon"),
                step_size=val("step_size"),
                burn_in_step_size=val("burn_in_step_size"),
                proposal_scales=val("proposal_scale"),
                adapt=val("adapt"),
                adapt_window=val("adapt_window"),
                record_burn_in=val("record_burn_in"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc), source=self.source) from exc

    # -- checking and echo ------------------------------------------------------------

    def validate(self):
        self.model
        self.seed
        self.sampler
        for key in self.entries:
            head, _, rest = key.partition(".")
            if head in ("model", "sampler", "seed", "output") and not rest:
                continue
            if head in ("model", "data") and rest:
                continue
            if head == "sampler" and rest:
                if rest not in SAMPLER_KEYS:
                    self._fail("unknown sampler setting", key)
                self.get(key, SAMPLER_KEYS[rest][0])
                continue
            if head == "block":
                parts = rest.split(".")
                if len(parts) != 2:
                    self._fail("block settings look like block.<name>.<setting>", key)
                name = parts[1]
                if name == "sampler":
                    self.get(key, _sampler)
                elif name in SAMPLER_KEYS and name not in CHAIN_KEYS:
                    self.get(key, SAMPLER_KEYS[name][0])
                else:
                    self._fail("unknown block setting", key)
                continue
            self._fail("unknown setting", key)
        for key in (k for k in ("sampler.n_samples", "sampler.burn_in") if self.has(k)):
            if self.get(key, _int) < 0:
                self._fail("must be non-negative", key)

    def resolved(self) -> dict[str, str]:
        """All settings, defaults filled in, as strings that re-parse identically."""
        out = {k: e.value for k, e in self.entries.items()}
        out.setdefault("sampler", self.sampler)
        out.setdefault("output", self.get("output", default="output"))
        for name, (_, default) in SAMPLER_KEYS.items():
            if default is not None:
                out.setdefault(f"sampler.{name}", format_value(default))
        return dict(sorted(out.items()))

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.resolved().items())
