"""Run and experiment configuration, flat ``key=value`` parsing."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .des import MAX_TIME

DEFAULT_DENSITIES = (0.01, 0.011, 0.015, 0.025, 0.04, 0.055, 0.075, 0.1,
                   0.2, 0.3, 0.5, 0.6, 0.75, 0.85, 0.99)
DEFAULT_CAPACITIES = tuple(range(2, 23))
MIN_RATE = 1e-9


class ConfigError(ValueError):
    def __init__(self, key, value, constraint):
        super().__init__(f"invalid {key}={value!r}: requires {constraint}")
        self.key, self.value, self.constraint = key, value, constraint


@dataclass(frozen=True)
class SimConfig:
    """All model parameters of one simulation run (time in tau0 units)."""
    n_nodes: int = 1600
    capacity: float = 4
    density: float = 0.2
    duration: float = 84600.0
    inject_rate: float = 0.0
    mean_ttf: float = math.inf
    # direct-fraction fault mode: fail exactly ceil(fault_fraction * N) nodes
    fault_fraction: float | None = None
    # None: fault times of the matching mean_ttf run, conditioned on t < duration
    fault_delay_mean: float | None = None
    cascade_prob: float = 0.01
    dep_window: float = 10.0
    ttl: float = 60.0
    txn_len_mean: float = 10.0
    txn_len_sd: float = 4.0
    seed: int = 0
    abort_threshold: float = 1e-6

    def __post_init__(self):
        self.validate()

    def validate(self):
        checks = [
            ("n_nodes", self.n_nodes >= 2, "n_nodes >= 2"),
            ("capacity", self.capacity >= 2, "C >= 2"),
            ("density", 0 < self.density <= 1, "0 < d <= 1"),
            ("duration", 0 < self.duration and self.duration + self.ttl + 2 < MAX_TIME,
             f"0 < S and S + ttl < {MAX_TIME:g}"),
            # positive rates below MIN_RATE would overflow the time grid and never fire anyway
            ("inject_rate", (self.inject_rate == 0 or self.inject_rate >= MIN_RATE)
             and math.isfinite(self.inject_rate), f"r = 0 or {MIN_RATE:g} <= r < inf"),
            ("mean_ttf", self.mean_ttf > 0, "T_f > 0"),
            ("cascade_prob", 0 <= self.cascade_prob <= 1, "0 <= p0 <= 1"),
            ("dep_window", self.dep_window > 0, "dep_window > 0"),
            ("ttl", self.ttl > 0, "ttl > 0"),
            ("txn_len_sd", self.txn_len_sd >= 0, "sd >= 0"),
            ("abort_threshold", 0 < self.abort_threshold < 1, "0 < threshold < 1"),
            ("seed", self.seed >= 0, "seed >= 0"),
        ]
        if self.fault_fraction is not None:
            checks.append(("fault_fraction", 0 <= self.fault_fraction <= 1, "0 <= m <= 1"))
            checks.append(("mean_ttf", not math.isfinite(self.mean_ttf),
                           "mean_ttf=inf when fault_fraction is set"))
        if self.fault_delay_mean is not None:
            checks.append(("fault_delay_mean", self.fault_delay_mean > 0, "fault_delay_mean > 0"))
        for key, ok, constraint in checks:
            if not ok:
                raise ConfigError(key, getattr(self, key), constraint)

    @property
    def edge_count(self) -> int:
        return int(round(self.density * self.n_nodes * (self.n_nodes - 1)))

    def with_(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ExperimentConfig:
    base: SimConfig = field(default_factory=SimConfig)
    capacities: tuple = DEFAULT_CAPACITIES
    densities: tuple = DEFAULT_DENSITIES
    replications: int = 5
    bisection_tolerance: float = 0.02
    # ray directions in degrees from the rho axis, for boundary tracing
    ray_angles: tuple = (0.0, 9.0, 18.0, 27.0, 36.0, 45.0, 54.0, 63.0, 72.0, 81.0, 90.0)
    p0_values: tuple = ()
    workers: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications", self.replications, "replications >= 1")
        if not self.bisection_tolerance > 0:
            raise ConfigError("bisection_tolerance", self.bisection_tolerance, "tolerance > 0")
        if self.workers < 1:
            raise ConfigError("workers", self.workers, "workers >= 1")
        for a in self.ray_angles:
            if not 0 <= a <= 90:
                raise ConfigError("ray_angles", a, "0 <= angle <= 90")
        for p in self.p0_values:
            if not 0 <= p <= 1:
                raise ConfigError("p0_values", p, "0 <= p0 <= 1")

    @property
    def seed(self) -> int:
        return self.base.seed

    def with_(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_SIM_KEYS = {f.name: f for f in fields(SimConfig)}
_EXP_KEYS = {f.name: f for f in fields(ExperimentConfig) if f.name != "base"}
_TUPLE_ITEM = {"capacities": float, "densities": float, "ray_angles": float, "p0_values": float}


def _parse_number(text: str):
    text = text.strip()
    if text.lower() in ("none", ""):
        return None
    if text.lower() in ("inf", "infinity", "+inf"):
        return math.inf
    try:
        return int(text)
    except ValueError:
        return float(text)


def _coerce(key: str, raw: str):
    try:
        if key in _TUPLE_ITEM:
            items = [_parse_number(t) for t in raw.split(",") if t.strip()]
            if key == "capacities":
                items = [int(c) if c != math.inf and float(c).is_integer() else c for c in items]
            return tuple(items)
        value = _parse_number(raw)
    except ValueError:
        raise ConfigError(key, raw, "a number") from None
    if key in ("n_nodes", "seed", "replications", "workers"):
        if value is None or value != int(value):
            raise ConfigError(key, raw, "an integer")
        value = int(value)
    elif value is None and key not in ("fault_fraction", "fault_delay_mean"):
        raise ConfigError(key, raw, "a value")
    return value


def parse_pairs(lines) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    values = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", line, "key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _SIM_KEYS and key not in _EXP_KEYS:
            raise ConfigError(key, raw, "a known key")
        values[key] = _coerce(key, raw)
    return values


def build_config(values: dict) -> ExperimentConfig:
    sim = {k: v for k, v in values.items() if k in _SIM_KEYS}
    exp = {k: v for k, v in values.items() if k in _EXP_KEYS}
    try:
        base = SimConfig(**sim)
        return ExperimentConfig(base=base, **exp)
    except TypeError as exc:
        raise ConfigError("config", values, str(exc)) from None


def parse_config(path=None, overrides=()) -> ExperimentConfig:
    """Read a flat config file (optional) and apply ``key=value`` overrides."""
    lines = Path(path).read_text().splitlines() if path else []
    values = parse_pairs(lines)
    values.update(parse_pairs(overrides))
    return build_config(values)


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return repr(value)
    return str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    """Fully resolved config as ``key=value`` text; parse_config round-trips it."""
    lines = [f"{k}={_fmt(getattr(cfg.base, k))}" for k in _SIM_KEYS]
    lines += [f"{k}={_fmt(getattr(cfg, k))}" for k in _EXP_KEYS]
    return "\n".join(lines) + "\n"
