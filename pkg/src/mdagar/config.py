"""
Run configuration read from a YAML file.

Every recognised section is optional::

    prior: simulation            # preset name, or a mapping with optional 'preset'
    chain: {n_iter: 6000, n_burnin: 2000, thin: 1, seed: 0}
    n_chains: 2
    bridge: {split: 0.5, n_proposal: null, tol: 1.0e-10, max_iter: 1000}
    data: {add_intercept: true, standardize: false}
    simulate: {design: bivariate, regime: low, n_replicates: 85, seed: 0}

Errors name the offending field and the line it was declared on.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ValidationError
from .evidence import BridgeConfig
from .model import PRIOR_PRESETS, PriorSpec
from .sampler import ChainConfig
from .simulate import ETA_REGIMES


class ConfigError(ValidationError):
    pass


@dataclass(frozen=True)
class SimulateSettings:
    design: str = "bivariate"        # bivariate | three_disease
    regime: str = "low"
    true_order: tuple = (1, 2, 3)     # 1-based, three_disease only
    n_replicates: int = 1
    seed: int = 0
    truth: str = "exponential"       # exponential | dagar
    coordinates: str = None           # label,x,y file; required with --adjacency


@dataclass(frozen=True)
class DataSettings:
    add_intercept: bool = True
    standardize: bool = False


@dataclass(frozen=True)
class RunConfig:
    prior: PriorSpec = field(default_factory=PriorSpec)
    chain: ChainConfig = field(default_factory=ChainConfig)
    n_chains: int = 2
    bridge: BridgeConfig = field(default_factory=BridgeConfig)
    data: DataSettings = field(default_factory=DataSettings)
    simulate: SimulateSettings = field(default_factory=SimulateSettings)
    digest: str = None
    source: str = None


def _node_lines(node, prefix="", out=None) -> dict:
    """Map dotted field paths to 1-based source lines."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, val in node.value:
            path = f"{prefix}.{key.value}" if prefix else str(key.value)
            out[path] = key.start_mark.line + 1
            _node_lines(val, path, out)
    return out


class _Ctx:
    def __init__(self, source, lines):
        self.source, self.lines = source, lines

    def fail(self, path, msg):
        line = self.lines.get(path)
        where = f"{self.source}:{line}" if line else str(self.source)
        raise ConfigError(f"{where}: {path}: {msg}")


_TYPES = {int: "an integer", float: "a number", bool: "true or false", str: "a string"}


def _coerce(ctx, path, value, typ):
    if value is None:
        return None
    if typ is bool:
        if isinstance(value, bool):
            return value
    elif typ is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif typ is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
    elif typ is str:
        if isinstance(value, str):
            return value
    ctx.fail(path, f"expected {_TYPES[typ]}, got {value!r}")


def _section(ctx, raw, name, cls, types, base=None):
    if raw is None:
        return base if base is not None else cls()
    if not isinstance(raw, dict):
        ctx.fail(name, "expected a mapping")
    known = {f.name for f in fields(cls)}
    kw = {}
    for key, value in raw.items():
        path = f"{name}.{key}"
        if key not in known or key not in types:
            ctx.fail(path, f"unknown field; expected one of {sorted(types)}")
        kw[key] = _coerce(ctx, path, value, types[key]) if types[key] is not tuple else value
    try:
        return replace(base, **kw) if base is not None else cls(**kw)
    except (ValidationError, TypeError, ValueError) as exc:
        ctx.fail(name, str(exc))


_PRIOR_TYPES = {f: float for f in ("a_tau", "b_tau", "a_sigma", "b_sigma",
                                   "mu_beta", "v_beta", "mu_eta", "v_eta")}
_CHAIN_TYPES = {"n_iter": int, "n_burnin": int, "thin": int, "seed": int,
                "rw_step": float, "adapt_target": float, "adapt_window": int}
_BRIDGE_TYPES = {"split": float, "n_proposal": int, "tol": float, "max_iter": int}
_DATA_TYPES = {"add_intercept": bool, "standardize": bool}
_SIM_TYPES = {"design": str, "regime": str, "true_order": tuple, "n_replicates": int,
              "seed": int, "truth": str, "coordinates": str}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    raw = {} if raw is None else raw
    ctx = _Ctx(source, _node_lines(node) if node is not None else {})
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    allowed = {"prior", "chain", "n_chains", "bridge", "data", "simulate"}
    for key in raw:
        if key not in allowed:
            ctx.fail(str(key), f"unknown section; expected one of {sorted(allowed)}")

    prior_raw = raw.get("prior")
    if isinstance(prior_raw, str):
        prior_raw = {"preset": prior_raw}
    preset = "simulation"
    if isinstance(prior_raw, dict) and "preset" in prior_raw:
        prior_raw = dict(prior_raw)
        preset = prior_raw.pop("preset")
        if preset not in PRIOR_PRESETS:
            ctx.fail("prior.preset" if "prior.preset" in ctx.lines else "prior",
                     f"unknown preset {preset!r}; expected one of {sorted(PRIOR_PRESETS)}")
    prior = _section(ctx, prior_raw or None, "prior", PriorSpec, _PRIOR_TYPES,
                     base=PRIOR_PRESETS[preset])

    chain = _section(ctx, raw.get("chain"), "chain", ChainConfig, _CHAIN_TYPES)
    bridge = _section(ctx, raw.get("bridge"), "bridge", BridgeConfig, _BRIDGE_TYPES)
    data = _section(ctx, raw.get("data"), "data", DataSettings, _DATA_TYPES)
    sim = _section(ctx, raw.get("simulate"), "simulate", SimulateSettings, _SIM_TYPES)
    if sim.design not in ("bivariate", "three_disease"):
        ctx.fail("simulate.design", f"expected bivariate or three_disease, got {sim.design!r}")
    if sim.regime not in ETA_REGIMES:
        ctx.fail("simulate.regime", f"expected one of {sorted(ETA_REGIMES)}, got {sim.regime!r}")
    if sim.truth not in ("exponential", "dagar"):
        ctx.fail("simulate.truth", f"expected exponential or dagar, got {sim.truth!r}")
    if sim.n_replicates < 1:
        ctx.fail("simulate.n_replicates", "must be >= 1")
    order = sim.true_order
    if not isinstance(order, (list, tuple)) or sorted(order) != [1, 2, 3]:
        ctx.fail("simulate.true_order", f"expected a permutation of [1, 2, 3], got {order!r}")
    sim = replace(sim, true_order=tuple(int(o) for o in order))

    n_chains = raw.get("n_chains", 2)
    if not isinstance(n_chains, int) or isinstance(n_chains, bool) or n_chains < 1:
        ctx.fail("n_chains", f"expected a positive integer, got {n_chains!r}")
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return RunConfig(prior, chain, n_chains, bridge, data, sim, digest, source)


def load_config(path=None) -> RunConfig:
    """Read a config file; ``None`` gives every default."""
    if path is None:
        return parse_config("", "<defaults>")
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(p))
