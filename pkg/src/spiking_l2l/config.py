"""Run configuration: schema, named presets, file loading and overrides.

A run config is a nested mapping with the sections below. Every value has a
default, so a config file only needs the keys it changes relative to its
``preset``.

==============  ===============================================================
``preset``      preset the file starts from (``exp1-volterra``, ...)
``seed``        master seed; all randomness derives from it
``family``      task family: ``name`` plus family options
``neuron``      LIF constants (``dt``, ``tau_m``, ``v_th``, ``rho_override``, ...)
``network``     ``n_neurons``, ``delay_ms``, ``delay_mode``, init scales
``plasticity``  readout learning rate ``eta`` and ``accumulation_window``
``protocol``    stepped episodes: ``step_duration``, ``steps_per_episode``
``outer``       meta-training: regime, batch, truncation, loss, Adam, clipping
``evaluation``  held-out ``n_tasks``, ``duration``, ``batch``
``ridge``       ridge baseline options
``backprop``    feed-forward baseline options
==============  ===============================================================
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .baselines import BackpropBaselineConfig, RidgeConfig
from .errors import ConfigurationError
from .families import FAMILIES, make_family
from .neuron import PAPER_RHO, NeuronConstants
from .outer import EvalConfig, OuterLoopConfig
from .readout import EpisodeProtocol, ReadoutPlasticityConfig


@dataclass(frozen=True)
class NetworkConfig:
    n_neurons: int = 800
    delay_ms: float = 5.0
    delay_mode: str = "uniform"  # "uniform": every synapse delay_ms; "random": U{0..delay_ms}
    w_in_std: float = 1.0 / math.sqrt(3.0)
    w_rec_std: float | None = None  # None: 1/sqrt(n_neurons)

    def __post_init__(self):
        bad = []
        if self.n_neurons < 1:
            bad.append("network.n_neurons")
        if self.delay_ms < 0:
            bad.append("network.delay_ms")
        if self.delay_mode not in ("uniform", "random"):
            bad.append("network.delay_mode")
        if bad:
            raise ConfigurationError(f"invalid network config: {', '.join(bad)}", bad)


SECTIONS = {
    "neuron": NeuronConstants,
    "network": NetworkConfig,
    "plasticity": ReadoutPlasticityConfig,
    "protocol": EpisodeProtocol,
    "outer": OuterLoopConfig,
    "evaluation": EvalConfig,
    "ridge": RidgeConfig,
    "backprop": BackpropBaselineConfig,
}


@dataclass(frozen=True)
class RunConfig:
    preset: str = "custom"
    seed: int = 0
    family: dict = field(default_factory=lambda: {"name": "sine"})
    neuron: NeuronConstants = NeuronConstants()
    network: NetworkConfig = NetworkConfig()
    plasticity: ReadoutPlasticityConfig = ReadoutPlasticityConfig()
    protocol: EpisodeProtocol = EpisodeProtocol()
    outer: OuterLoopConfig = OuterLoopConfig()
    evaluation: EvalConfig = EvalConfig()
    ridge: RidgeConfig = RidgeConfig()
    backprop: BackpropBaselineConfig = BackpropBaselineConfig()

    def make_family(self):
        return make_family(self.family)

    def to_dict(self) -> dict:
        out = {"preset": self.preset, "seed": self.seed, "family": dict(self.family)}
        for name in SECTIONS:
            out[name] = dataclasses.asdict(getattr(self, name))
        return _jsonable(out)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = sorted(set(d) - {"preset", "seed", "family", *SECTIONS})
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}", unknown)
        kw = {}
        for name, section_cls in SECTIONS.items():
            if name in d:
                kw[name] = _build_section(name, section_cls, d[name])
        family = dict(d.get("family", {"name": "sine"}))
        _check_family(family)
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigurationError("seed must be a non-negative integer", ["seed"])
        return cls(preset=str(d.get("preset", "custom")), seed=seed, family=family, **kw)

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def trajectory_hash(self) -> str:
        """Hash of the settings that shape the training trajectory.

        Leaves out the iteration budget, checkpoint cadence and evaluation
        settings, so a run may be resumed with a longer budget.
        """
        d = self.to_dict()
        d["outer"] = {k: v for k, v in d["outer"].items()
                      if k not in ("iterations", "checkpoint_every")}
        for k in ("evaluation", "ridge", "backprop", "preset"):
            d.pop(k, None)
        return config_hash(d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def config_hash(d: dict) -> str:
    blob = json.dumps(_jsonable(d), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _build_section(name, section_cls, values):
    if not isinstance(values, dict):
        raise ConfigurationError(f"section {name!r} must be a mapping", [name])
    names = {f.name for f in dataclasses.fields(section_cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        keys = [f"{name}.{k}" for k in unknown]
        raise ConfigurationError(f"unknown config keys: {', '.join(keys)}", keys)
    try:
        return section_cls(**values)
    except ConfigurationError as exc:
        keys = [k if k.startswith(name + ".") else f"{name}.{k}" for k in exc.keys]
        raise ConfigurationError(f"invalid values in {name}: {', '.join(keys)}", keys) from None
    except TypeError as exc:
        raise ConfigurationError(f"bad values in section {name}: {exc}", [name]) from None


def _check_family(family):
    name = family.get("name")
    if name not in FAMILIES:
        raise ConfigurationError(
            f"unknown task family {name!r}; valid: {', '.join(sorted(FAMILIES))}",
            ["family.name"])
    try:
        make_family(family)
    except TypeError as exc:
        raise ConfigurationError(f"bad family options: {exc}", ["family"]) from None


# -- presets ------------------------------------------------------------------------

def _exp1(n_neurons=800, iterations=2000):
    return {
        "family": {"name": "volterra", "n_bins": 500},
        "neuron": {"v_th": 0.02, "tau_m": 20.0, "refractory": 5.0, "gamma": 0.4,
                   "tau_readout": 20.0},
        "network": {"n_neurons": n_neurons, "delay_ms": 5.0, "delay_mode": "uniform"},
        "plasticity": {"eta": 7e-7, "accumulation_window": 1000.0},
        "outer": {"regime": "readout-plastic", "batch_size": 40, "truncation": 3000.0,
                  "loss_window": 2000.0, "n_chunks": 3, "reg_alpha": 1200.0,
                  "rate_unit": "Hz", "error_reduction": "sum", "lr": 1e-3,
                  "grad_clip": 1000.0, "iterations": iterations, "checkpoint_every": 50},
        "evaluation": {"n_tasks": 200, "duration": 13000.0, "batch": 20},
    }


def _exp2(family, n_neurons=300, iterations=5000):
    return {
        "family": family,
        "neuron": {"v_th": 0.03, "tau_m": 20.0, "refractory": 5.0, "gamma": 0.4},
        "network": {"n_neurons": n_neurons, "delay_ms": 5.0, "delay_mode": "random"},
        "plasticity": {"enabled": False},
        "protocol": {"step_duration": 20.0, "steps_per_episode": 400},
        "outer": {"regime": "dynamics-only", "batch_size": 10, "truncation": None,
                  "loss_window": None, "reg_alpha": 30.0, "rate_unit": "kHz",
                  "error_reduction": "mean", "lr": 1e-3, "grad_clip": 1000.0,
                  "iterations": iterations, "checkpoint_every": 100},
        "evaluation": {"n_tasks": 8000, "batch": 50},
    }


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "family":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


_LITERAL = {"neuron": {"rho_override": PAPER_RHO}}

# Desk-scale variants: small networks and budgets that finish on one CPU.
# Population codes are widened (sigma_scale) so that a query activates a few
# input units rather than essentially none.
_SINE_DESK = {
    "family": {"name": "sine", "sigma_scale": 20.0},
    "network": {"n_neurons": 100},
    "protocol": {"steps_per_episode": 50},
    "outer": {"iterations": 1000, "batch_size": 10, "lr": 1e-2, "checkpoint_every": 100},
    "evaluation": {"n_tasks": 100, "batch": 50},
}
_TN_DESK = {
    "family": {"name": "tn", "sigma_scale": 20.0},
    "network": {"n_neurons": 100},
    "protocol": {"steps_per_episode": 50},
    "outer": {"iterations": 1000, "batch_size": 10, "lr": 1e-2, "checkpoint_every": 100},
    "evaluation": {"n_tasks": 100, "batch": 50},
}
_VOLTERRA_DESK = {
    "family": {"name": "volterra", "n_bins": 100},
    "network": {"n_neurons": 200},
    "plasticity": {"eta": 3e-6},
    "outer": {"batch_size": 8, "iterations": 300, "checkpoint_every": 50},
    "evaluation": {"n_tasks": 50, "duration": 13000.0, "batch": 25},
}

PRESETS = {
    "exp1-volterra": _exp1(),
    "exp2-tn": _exp2({"name": "tn"}),
    "exp2-sine": _exp2({"name": "sine"}),
}
PRESETS["exp1-volterra-literal"] = _merge(PRESETS["exp1-volterra"], _LITERAL)
PRESETS["exp2-tn-literal"] = _merge(PRESETS["exp2-tn"], _LITERAL)
PRESETS["exp2-sine-literal"] = _merge(PRESETS["exp2-sine"], _LITERAL)
PRESETS["exp1-volterra-desk"] = _merge(PRESETS["exp1-volterra"], _VOLTERRA_DESK)
PRESETS["exp2-tn-desk"] = _merge(PRESETS["exp2-tn"], _TN_DESK)
PRESETS["exp2-sine-desk"] = _merge(PRESETS["exp2-sine"], _SINE_DESK)
for _name, _d in PRESETS.items():
    _d["preset"] = _name


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}", ["preset"])
    return copy.deepcopy(PRESETS[name])


def parse_override(text: str):
    """``"outer.lr=0.01"`` -> ``(["outer", "lr"], 0.01)``; values parse as YAML."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not of the form key=value", [text])
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigurationError(f"empty key in override {text!r}", [text])
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    if isinstance(value, str):
        # YAML 1.1 reads "1e-5" as a string
        try:
            value = float(value)
        except ValueError:
            pass
    return path, value


def apply_overrides(d: dict, overrides) -> dict:
    d = copy.deepcopy(d)
    for item in overrides:
        path, value = parse_override(item) if isinstance(item, str) else item
        node = d
        for p in path[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"{'.'.join(path)} is not a section", [".".join(path)])
        node[path[-1]] = value
    return d


def load_config_file(path) -> dict:
    text = Path(path).read_text()
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"{path}: cannot parse config: {exc}", ["<file>"]) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping", ["<file>"])
    return data


def resolve_config(preset=None, path=None, overrides=(), seed=None) -> RunConfig:
    """Build a validated config: preset, then file, then overrides, then seed."""
    file_d = load_config_file(path) if path is not None else {}
    name = preset or file_d.get("preset")
    base = preset_dict(name) if name else {}
    d = _merge(base, file_d)
    if preset:
        d["preset"] = preset
    d = apply_overrides(d, overrides)
    if seed is not None:
        d["seed"] = seed
    return RunConfig.from_dict(d)


def get_preset(name: str, **overrides) -> RunConfig:
    """Preset as a :class:`RunConfig`; keyword overrides use ``__`` for dots."""
    return resolve_config(name, overrides=[(k.split("__"), v) for k, v in overrides.items()])


def dump_config(run: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(run.to_dict(), sort_keys=True))
