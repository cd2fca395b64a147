"""
Experiment configuration: YAML file -> (fleet, scenario, run parameters).

Every key is optional; an empty file gives the default setup (100 EVs split
evenly over two types, 5 s slots, preferred range 10%..90% of capacity,
quadratic degradation with c_up = x_max**2 / 4, log utility, weight 1).

Example::

    fleet:
      slot_seconds: 5
      s_min_frac: 0.1
      s_max_frac: 0.9
      c_up_frac: 0.25          # c_up = c_up_frac * C(x_max)
      degradation: {kind: quadratic, coef: 1.0}
      types:
        - {name: I,  count: 50, capacity_kwh: 23, rate_kw: 6.6}
        - {name: II, count: 50, capacity_kwh: 40, rate_kw: 10}
    utility: {kind: log}
    scenario: {p_return: 0.95, seed: 0}
    controller: {v_mult: 1.0}
    run: {slots: 20000, seeds: 5, stride: 100}

Schema errors carry the line number of the offending key.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import yaml

from .model import (EVParams, Fleet, LogUtility, PowerCost, QuadraticCost,
                    SaturatingUtility, UtilityModel, rate_to_slot_energy)
from .queues import v_max
from .stochastic import ScenarioConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


DEFAULT_TYPES = (
    {"name": "I", "count": 50, "capacity_kwh": 23.0, "rate_kw": 6.6},
    {"name": "II", "count": 50, "capacity_kwh": 40.0, "rate_kw": 10.0},
)


@dataclass(frozen=True)
class EVType:
    name: str
    count: int
    capacity_kwh: float
    rate_kw: float
    s_min_frac: float | None = None   # None: use the fleet-level value
    s_max_frac: float | None = None
    weight: float = 1.0


@dataclass(frozen=True)
class FleetSpec:
    types: tuple[EVType, ...] = tuple(EVType(**t) for t in DEFAULT_TYPES)
    slot_seconds: float = 5.0
    s_min_frac: float = 0.1
    s_max_frac: float = 0.9
    c_up_frac: float = 0.25
    degradation: str = "quadratic"
    degradation_coef: float = 1.0
    degradation_exponent: float = 2.0

    def build(self, return_jitter: float = 0.05) -> Fleet:
        """EV list in type order; delta_max is the largest return-energy jump,
        ``return_jitter * s_cap``."""
        evs = []
        for t in self.types:
            lo = self.s_min_frac if t.s_min_frac is None else t.s_min_frac
            hi = self.s_max_frac if t.s_max_frac is None else t.s_max_frac
            x_max = rate_to_slot_energy(t.rate_kw, self.slot_seconds)
            if self.degradation == "quadratic":
                deg = QuadraticCost(self.degradation_coef)
            else:
                deg = PowerCost(self.degradation_coef, self.degradation_exponent)
            c_up = self.c_up_frac * float(deg.value(x_max))
            for _ in range(t.count):
                evs.append(EVParams(id=len(evs), s_cap=t.capacity_kwh, s_min=lo * t.capacity_kwh,
                                    s_max=hi * t.capacity_kwh, x_max=x_max, c_up=c_up,
                                    delta_max=return_jitter * t.capacity_kwh,
                                    weight=t.weight, degradation=deg))
        return Fleet(evs)


@dataclass(frozen=True)
class RunParams:
    slots: int = 20_000
    seeds: int = 5
    stride: int = 100
    v_mult: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    fleet: FleetSpec = FleetSpec()
    scenario: ScenarioConfig = ScenarioConfig()
    utility: str = "log"
    utility_k: float = 1.0
    run: RunParams = RunParams()

    def build_fleet(self) -> Fleet:
        return self.fleet.build(self.scenario.return_jitter)

    def utility_model(self) -> UtilityModel:
        if self.utility == "log":
            return UtilityModel(LogUtility())
        return UtilityModel(SaturatingUtility(self.utility_k))

    def with_fleet(self, **kw) -> "ExperimentConfig":
        return replace(self, fleet=replace(self.fleet, **kw))

    def with_scenario(self, **kw) -> "ExperimentConfig":
        return replace(self, scenario=replace(self.scenario, **kw))

    def with_run(self, **kw) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, **kw))


# --------------------------------------------------------------------------
# YAML -> dataclasses with line-aware errors
# --------------------------------------------------------------------------

def _plain(node):
    """Convert a composed YAML node to python objects, keeping the line of
    every mapping key as ``(value, line)`` pairs."""
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", k.start_mark.line + 1)
            out[key] = (_plain(v), k.start_mark.line + 1)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [(_plain(v), v.start_mark.line + 1) for v in node.value]
    return yaml.safe_load(yaml.serialize(node))


def _section(tree: dict, name: str, line: int | None):
    if name not in tree:
        return {}, line
    value, ln = tree[name]
    if value is None:
        return {}, ln
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be a mapping", ln)
    return value, ln


def _number(value, key: str, line: int, kind=float, lo=None, hi=None, lo_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}", line)
    if kind is int and (not isinstance(value, int)):
        raise ConfigError(f"{key}: expected an integer, got {value!r}", line)
    v = kind(value)
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(f"{key}: must be {'>' if lo_open else '>='} {lo}, got {v}", line)
    if hi is not None and v > hi:
        raise ConfigError(f"{key}: must be <= {hi}, got {v}", line)
    return v


def _fields(section: dict, allowed: dict, where: str):
    """Validate the keys of one mapping against {key: (kind, lo, hi, lo_open)}."""
    out = {}
    for key, (value, line) in section.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}", line)
        spec = allowed[key]
        if spec is None:
            out[key] = (value, line)
            continue
        kind, lo, hi, lo_open = spec
        if kind is str:
            if not isinstance(value, str):
                raise ConfigError(f"{key}: expected a string, got {value!r}", line)
            out[key] = value
        elif value is None and key in ("G_lo", "G_hi", "p_leave"):
            out[key] = None
        else:
            out[key] = _number(value, key, line, kind, lo, hi, lo_open)
    return out


_FRAC = (float, 0.0, 1.0, False)
_POS = (float, 0.0, None, True)

_TYPE_KEYS = {"name": (str, None, None, False), "count": (int, 0, None, False),
              "capacity_kwh": _POS, "rate_kw": _POS, "s_min_frac": _FRAC,
              "s_max_frac": _FRAC, "weight": _POS}
_FLEET_KEYS = {"slot_seconds": _POS, "s_min_frac": _FRAC, "s_max_frac": _FRAC,
               "c_up_frac": _FRAC, "types": None, "degradation": None}
_DEG_KEYS = {"kind": (str, None, None, False), "coef": _POS, "exponent": (float, 1.0, None, True)}
_SCEN_KEYS = {"G_lo": (float, None, None, False), "G_hi": (float, None, None, False),
              "G_levels": (int, 2, None, False), "price_lo": (float, 0.0, None, False),
              "price_hi": (float, 0.0, None, False), "price_levels": (int, 1, None, False),
              "p_return": _FRAC, "p_leave": _FRAC, "return_jitter": (float, 0.0, None, False),
              "initial_energy": (str, None, None, False), "seed": (int, 0, None, False)}
_UTIL_KEYS = {"kind": (str, None, None, False), "k": _POS}
_CTRL_KEYS = {"v_mult": _POS}
_RUN_KEYS = {"slots": (int, 1, None, False), "seeds": (int, 1, None, False),
             "stride": (int, 1, None, False)}
_TOP_KEYS = ("fleet", "scenario", "utility", "controller", "run")


def parse_config(text: str) -> ExperimentConfig:
    """Parse YAML text into an ``ExperimentConfig``."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"YAML syntax error: {exc.problem}", line) from exc
    if root is None:
        return ExperimentConfig()
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError("top level must be a mapping", root.start_mark.line + 1)
    tree = _plain(root)
    for key, (_, line) in tree.items():
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown section {key!r}", line)

    cfg = ExperimentConfig()

    sec, _ = _section(tree, "fleet", None)
    fl = _fields(sec, _FLEET_KEYS, "fleet")
    fleet_kw = {k: v for k, v in fl.items() if k not in ("types", "degradation")}
    if "degradation" in fl:
        deg, line = fl["degradation"]
        if not isinstance(deg, dict):
            raise ConfigError("fleet.degradation must be a mapping", line)
        d = _fields(deg, _DEG_KEYS, "fleet.degradation")
        kind = d.get("kind", "quadratic")
        if kind not in ("quadratic", "power"):
            raise ConfigError(f"degradation kind must be 'quadratic' or 'power', got {kind!r}",
                              deg["kind"][1])
        fleet_kw["degradation"] = kind
        if "coef" in d:
            fleet_kw["degradation_coef"] = d["coef"]
        if "exponent" in d:
            if kind != "power":
                raise ConfigError("exponent only applies to power degradation",
                                  deg["exponent"][1])
            fleet_kw["degradation_exponent"] = d["exponent"]
    if "types" in fl:
        items, line = fl["types"]
        if not isinstance(items, list) or not items:
            raise ConfigError("fleet.types must be a non-empty list", line)
        types = []
        for item, ln in items:
            if not isinstance(item, dict):
                raise ConfigError("each fleet type must be a mapping", ln)
            t = _fields(item, _TYPE_KEYS, "fleet.types")
            for need in ("count", "capacity_kwh", "rate_kw"):
                if need not in t:
                    raise ConfigError(f"fleet type is missing {need!r}", ln)
            t.setdefault("name", f"type{len(types) + 1}")
            types.append(EVType(**t))
        if sum(t.count for t in types) == 0:
            raise ConfigError("fleet has no EVs", line)
        fleet_kw["types"] = tuple(types)
    fleet = replace(cfg.fleet, **fleet_kw)

    sec, _ = _section(tree, "scenario", None)
    sc = _fields(sec, _SCEN_KEYS, "scenario")
    try:
        scenario = replace(cfg.scenario, **sc)
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}", tree["scenario"][1]) from exc

    sec, _ = _section(tree, "utility", None)
    ut = _fields(sec, _UTIL_KEYS, "utility")
    util = ut.get("kind", "log")
    if util not in ("log", "saturating"):
        raise ConfigError(f"utility kind must be 'log' or 'saturating', got {util!r}",
                          sec["kind"][1])

    sec, _ = _section(tree, "controller", None)
    ctrl = _fields(sec, _CTRL_KEYS, "controller")
    sec, _ = _section(tree, "run", None)
    run = replace(cfg.run, **_fields(sec, _RUN_KEYS, "run"), **ctrl)

    out = ExperimentConfig(fleet=fleet, scenario=scenario, utility=util,
                           utility_k=ut.get("k", 1.0), run=run)
    fleet_line = tree["fleet"][1] if "fleet" in tree else None
    try:
        built = out.build_fleet()
    except ValueError as exc:
        raise ConfigError(f"fleet: {exc}", fleet_line) from exc
    vmax, who = v_max(built, out.utility_model().mu, out.scenario.price_hi)
    if vmax <= 0.0:
        raise ConfigError(f"V_max = {vmax:.6g} <= 0: EV {who} has a preferred range "
                          "narrower than 4 * x_max", fleet_line)
    return out


def load_config(path) -> ExperimentConfig:
    """Read and validate a YAML experiment config."""
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
