"""JSON run configuration shared by every CLI subcommand.

A config is a nested JSON object with the sections ``market``, ``utility``,
``horizon``, ``costs``, ``policy``, ``sim``, ``sweep`` and ``output``. Every
leaf has a command-line flag (see ``FIELDS``); values are resolved as

    built-in default < config file < command-line flag.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any

from .band_policy import CostParams
from .experiments import policy_for
from .frictionless import MertonSolution

MODES = ("asymptotic", "numeric", "search")
STARTS = ("center", "equilibrium")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted config path, ``constraint`` the violated rule."""

    def __init__(self, key: str, constraint: str):
        super().__init__(f"{key}: {constraint}")
        self.key = key
        self.constraint = constraint


@dataclass(frozen=True)
class Field:
    key: str  # dotted path in the JSON document
    flag: str
    kind: type
    default: Any
    help: str
    choices: tuple | None = None


FIELDS = (
    Field("market.mu", "--mu", float, 0.1, "stock drift"),
    Field("market.r", "--r", float, 0.02, "risk-free rate"),
    Field("market.sigma", "--sigma", float, 0.2, "stock volatility (> 0)"),
    Field("utility.p", "--p", float, -3.0, "CRRA exponent (p < 1, p != 0)"),
    Field("horizon", "--horizon", float, 1.0, "investment horizon T in years"),
    Field("costs.epsilon", "--epsilon", float, 1e-4, "fixed cost per trade"),
    Field("costs.lambda", "--lambda", float, None, "proportional cost rate in [0, 1)"),
    Field("costs.q", "--q", float, None, "coupling exponent: lambda = c * epsilon**q"),
    Field("costs.c", "--c", float, 1.0, "coupling constant c"),
    Field("policy.mode", "--mode", str, "asymptotic", "band source", MODES),
    Field("policy.band_scale", "--band-scale", float, 1.0, "multiplier applied to the band"),
    Field("sim.dt", "--dt", float, 1e-3, "time step in years"),
    Field("sim.n_paths", "--n-paths", int, 10_000, "number of Monte Carlo paths"),
    Field("sim.seed", "--seed", int, 0, "master seed"),
    Field("sim.z0", "--z0", float, 1.0, "initial wealth"),
    Field("sim.start", "--start", str, "equilibrium", "initial displacement", STARTS),
    Field("sim.block_size", "--block-size", int, 16384, "paths per simulation block"),
    Field("sim.path_index", "--path-index", int, 0, "path written by 'simulate'"),
    Field("sweep.epsilons", "--epsilons", list, [1e-2, 1e-3, 1e-4, 1e-5], "fixed-cost grid (comma separated)"),
    Field("sweep.n_boot", "--n-boot", int, 200, "bootstrap replicates for the slope interval"),
    Field("output.path", "--output", str, None, "CSV output file (stdout when omitted)"),
)
FIELD_BY_KEY = {f.key: f for f in FIELDS}


def _set(doc: dict, key: str, value) -> None:
    parts = key.split(".")
    node = doc
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def _walk(doc: dict, prefix: str = ""):
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if key in FIELD_BY_KEY:
            yield key, v
        elif isinstance(v, dict) and any(f.startswith(key + ".") for f in FIELD_BY_KEY):
            yield from _walk(v, key + ".")
        else:
            raise ConfigError(key, "unknown key")


def _coerce(field: Field, value):
    if value is None:
        return None
    key = field.key
    if field.kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, "must be a number")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(key, "must be finite")
    elif field.kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, "must be an integer")
    elif field.kind is str:
        if not isinstance(value, str):
            raise ConfigError(key, "must be a string")
        if field.choices and value not in field.choices:
            raise ConfigError(key, f"must be one of {', '.join(field.choices)}")
    elif field.kind is list:
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(key, "must be a list of numbers")
        value = [float(v) for v in value]
    return value


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``values`` maps dotted keys to resolved values."""

    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def to_dict(self) -> dict:
        doc: dict = {}
        for f in FIELDS:
            v = self.values[f.key]
            if v is not None:
                _set(doc, f.key, v)
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    # derived objects

    def merton(self) -> MertonSolution:
        return MertonSolution.from_values(self["market.mu"], self["market.r"], self["market.sigma"],
                                          self["utility.p"], self["horizon"])

    def lam_for(self, epsilon: float) -> float:
        if self["costs.lambda"] is not None:
            return self["costs.lambda"]
        if self["costs.q"] is None or epsilon == 0:
            return 0.0
        return self["costs.c"] * epsilon ** self["costs.q"]

    def costs(self) -> CostParams:
        eps = self["costs.epsilon"]
        return CostParams(eps, self.lam_for(eps))


def build_config(doc: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, a parsed JSON document and flag overrides, then validate."""
    values = {f.key: f.default for f in FIELDS}
    if doc is not None:
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        for key, v in _walk(doc):
            values[key] = _coerce(FIELD_BY_KEY[key], v)
    for key, v in (overrides or {}).items():
        if key not in FIELD_BY_KEY:
            raise ConfigError(key, "unknown key")
        if v is not None:
            values[key] = _coerce(FIELD_BY_KEY[key], v)
    cfg = RunConfig(values)
    validate(cfg)
    return cfg


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"malformed JSON ({exc.msg} at line {exc.lineno})") from None
    return build_config(doc, overrides)


def _wrap(key, constraint, fn):
    try:
        return fn()
    except ValueError:
        raise ConfigError(key, constraint) from None


def validate(cfg: RunConfig) -> None:
    """Re-check every module invariant, naming the offending key."""
    v = cfg.values
    if v["market.sigma"] <= 0:
        raise ConfigError("market.sigma", "sigma > 0")
    p = v["utility.p"]
    if p >= 1:
        raise ConfigError("utility.p", "p < 1")
    if p == 0:
        raise ConfigError("utility.p", "p != 0")
    if v["horizon"] <= 0:
        raise ConfigError("horizon", "T > 0")
    if v["costs.epsilon"] < 0:
        raise ConfigError("costs.epsilon", "epsilon >= 0")
    if v["costs.lambda"] is not None and v["costs.q"] is not None:
        raise ConfigError("costs.q", "give either costs.lambda or costs.q, not both")
    if v["costs.q"] is not None and not 0 <= v["costs.q"] <= 2:
        raise ConfigError("costs.q", "0 <= q <= 2")
    if v["costs.c"] < 0:
        raise ConfigError("costs.c", "c >= 0")
    lam = cfg.lam_for(v["costs.epsilon"])
    if not 0 <= lam < 1:
        raise ConfigError("costs.lambda", "0 <= lambda < 1")
    if v["policy.band_scale"] <= 0:
        raise ConfigError("policy.band_scale", "band_scale > 0")
    if v["sim.dt"] <= 0:
        raise ConfigError("sim.dt", "dt > 0")
    if v["sim.dt"] > v["horizon"]:
        raise ConfigError("sim.dt", "dt <= T")
    steps = v["horizon"] / v["sim.dt"]
    if abs(steps - round(steps)) > 1e-9 * steps:
        raise ConfigError("sim.dt", "T must be an integer multiple of dt")
    if v["sim.n_paths"] < 1:
        raise ConfigError("sim.n_paths", "n_paths >= 1")
    if not 0 <= v["sim.seed"] < 2**64:
        raise ConfigError("sim.seed", "0 <= seed < 2**64")
    if v["sim.z0"] <= 0:
        raise ConfigError("sim.z0", "z0 > 0")
    if v["sim.block_size"] < 1:
        raise ConfigError("sim.block_size", "block_size >= 1")
    if not 0 <= v["sim.path_index"] < v["sim.n_paths"]:
        raise ConfigError("sim.path_index", "0 <= path_index < n_paths")
    eps = v["sweep.epsilons"]
    if len(eps) < 4 or any(e <= 0 for e in eps):
        raise ConfigError("sweep.epsilons", "at least 4 positive values")
    if len(set(eps)) != len(eps) or eps not in (sorted(eps), sorted(eps, reverse=True)):
        raise ConfigError("sweep.epsilons", "strictly monotone grid")
    if v["sweep.n_boot"] < 0:
        raise ConfigError("sweep.n_boot", "n_boot >= 0")
    sol = _wrap("market", "valid market and utility", cfg.merton)
    _check_resolution(cfg, sol)


def check_sweep(cfg: RunConfig) -> None:
    """Resolution check at every point of the sweep grid."""
    if cfg["costs.lambda"] not in (None, 0.0):
        raise ConfigError("costs.lambda", "a sweep couples lambda to epsilon; use costs.q and costs.c")
    sol = cfg.merton()
    for eps in cfg["sweep.epsilons"]:
        _check_resolution(cfg, sol, eps)


def _check_resolution(cfg: RunConfig, sol: MertonSolution, eps: float | None = None) -> None:
    """Per-step xi standard deviation at the initial state must not exceed gamma / 10."""
    if eps is None:
        eps = cfg["costs.epsilon"]
    lam = cfg.lam_for(eps)
    if eps == 0 and lam == 0:
        return
    mode = cfg["policy.mode"]
    if mode == "asymptotic" and lam > 0 and not math.isclose(lam, eps**0.75, rel_tol=1e-12):
        raise ConfigError("policy.mode", "asymptotic bands need lambda = 0 or lambda = epsilon^(3/4); use numeric")
    z0 = cfg["sim.z0"]
    try:
        band = policy_for(sol, eps, lam, mode, z0).at(z0)
    except ValueError as exc:
        raise ConfigError("costs", str(exc)) from None
    sd = abs(sol.noise_coefficient(z0)) * math.sqrt(cfg["sim.dt"])
    limit = cfg["policy.band_scale"] * min(band.gamma, band.beta) / 10
    if sd > limit:
        raise ConfigError("sim.dt", f"dt too large: per-step xi sd {sd:.3g} exceeds gamma/10 = {limit:.3g}")
