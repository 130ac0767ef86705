"""Scenario configuration: defaults, validation and the key-value config file."""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

DENSITY_BOUNDS = (0.01, 0.09)
NETWORK_MODES = ("conventional", "mec")

_NEAREST_RE = re.compile(r"^nearest_k\((\d+)\)$")

# Named random sub-streams; ids are part of the reproducibility contract.
STREAMS = {"mobility": 1, "fading": 2, "engine": 3, "latency": 4}


class ConfigError(ValueError):
    """Raised when a configuration has one or more problems.

    ``violations`` lists every problem found, not just the first.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class RangeViolation(ConfigError):
    def __init__(self, field_name: str, bound: str, value: Any = None):
        self.field = field_name
        self.bound = bound
        self.value = value
        ValueError.__init__(self, f"{field_name}={value!r} violates {bound}")
        self.violations = [self]


class MissingField(ConfigError):
    def __init__(self, field_name: str):
        self.field = field_name
        ValueError.__init__(self, f"missing value for {field_name}")
        self.violations = [self]


@dataclass(frozen=True)
class ScenarioConfig:
    road_length_m: float = 1000.0
    lane_count: int = 1
    vehicle_density: float = 0.05
    vehicle_speed_range_kmh: tuple[float, float] = (70.0, 110.0)
    pedestrian_speed_kmh: float = 3.0
    vru_count: int = 80
    vru_tx_power_dbm: float = 23.0
    enb_tx_power_dbm: float = 46.0
    bandwidth_mhz: float = 10.0
    carrier_freq_ghz: float = 5.9
    packet_size_bits: int = 10000
    transmission_range_m: float = 500.0
    cam_rate_hz: float = 1.0
    network_mode: str = "conventional"
    delivery_mode: str = "broadcast"
    harq_max_attempts: int = 4
    sim_duration_s: float = 10.0
    seed: int = 0
    # extensions beyond the core parameter table
    allow_density_override: bool = False
    vru_stationary: bool = False
    bler_k: float = 0.448
    bler_s0: float = -4.90
    collision_prob: float = 0.0
    fanout_per_copy_ms: float = 0.1

    @property
    def nearest_k(self) -> int | None:
        """k for ``nearest_k(k)`` delivery, None for broadcast."""
        m = _NEAREST_RE.match(self.delivery_mode)
        return int(m.group(1)) if m else None

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ValidatedConfig(ScenarioConfig):
    """A ScenarioConfig that has passed :func:`validate_config`."""


def _check(cfg: ScenarioConfig) -> list[ConfigError]:
    problems: list[ConfigError] = []
    for f in dataclasses.fields(cfg):
        if getattr(cfg, f.name) is None:
            problems.append(MissingField(f.name))
    if problems:
        return problems

    def positive(name):
        v = getattr(cfg, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            problems.append(RangeViolation(name, "> 0", v))

    for name in ("road_length_m", "lane_count", "vru_count", "bandwidth_mhz",
                 "carrier_freq_ghz", "packet_size_bits", "transmission_range_m",
                 "harq_max_attempts", "sim_duration_s"):
        positive(name)
    for name in ("lane_count", "vru_count", "packet_size_bits", "harq_max_attempts", "seed"):
        v = getattr(cfg, name)
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            problems.append(RangeViolation(name, "integer", v))

    for name in ("vru_tx_power_dbm", "enb_tx_power_dbm", "bler_k", "bler_s0"):
        v = getattr(cfg, name)
        if not math.isfinite(v):
            problems.append(RangeViolation(name, "finite", v))
    if not cfg.bler_k > 0:
        problems.append(RangeViolation("bler_k", "> 0", cfg.bler_k))

    lo, hi = DENSITY_BOUNDS
    d = cfg.vehicle_density
    if not math.isfinite(d) or d <= 0:
        problems.append(RangeViolation("vehicle_density", "> 0", d))
    elif not cfg.allow_density_override and not lo <= d <= hi:
        problems.append(RangeViolation("vehicle_density", f"[{lo}, {hi}]", d))

    speeds = cfg.vehicle_speed_range_kmh
    if len(speeds) != 2 or not all(math.isfinite(s) and s >= 0 for s in speeds):
        problems.append(RangeViolation("vehicle_speed_range_kmh", "two finite values >= 0", speeds))
    elif speeds[0] > speeds[1]:
        problems.append(RangeViolation("vehicle_speed_range_kmh", "lower <= upper", speeds))
    if not (math.isfinite(cfg.pedestrian_speed_kmh) and cfg.pedestrian_speed_kmh >= 0):
        problems.append(RangeViolation("pedestrian_speed_kmh", ">= 0", cfg.pedestrian_speed_kmh))
    if not (math.isfinite(cfg.cam_rate_hz) and cfg.cam_rate_hz >= 0):
        problems.append(RangeViolation("cam_rate_hz", ">= 0", cfg.cam_rate_hz))
    if not 0 <= cfg.collision_prob <= 1:
        problems.append(RangeViolation("collision_prob", "[0, 1]", cfg.collision_prob))
    if not (math.isfinite(cfg.fanout_per_copy_ms) and cfg.fanout_per_copy_ms >= 0):
        problems.append(RangeViolation("fanout_per_copy_ms", ">= 0", cfg.fanout_per_copy_ms))
    if not 0 <= cfg.seed < 2**64:
        problems.append(RangeViolation("seed", "[0, 2**64)", cfg.seed))

    if cfg.network_mode not in NETWORK_MODES:
        problems.append(RangeViolation("network_mode", "one of conventional|mec", cfg.network_mode))
    if cfg.delivery_mode != "broadcast":
        k = cfg.nearest_k
        if k is None or k < 1:
            problems.append(RangeViolation("delivery_mode", "broadcast or nearest_k(k>=1)",
                                           cfg.delivery_mode))
    return problems


def validate_config(cfg: ScenarioConfig) -> ValidatedConfig:
    """Check every invariant and return a frozen, validated copy.

    Raises :class:`ConfigError` carrying all violations at once.
    """
    if isinstance(cfg, ValidatedConfig):
        return cfg
    problems = _check(cfg)
    if problems:
        if len(problems) == 1:
            raise problems[0]
        raise ConfigError(problems)
    values = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    values["vehicle_speed_range_kmh"] = tuple(float(s) for s in cfg.vehicle_speed_range_kmh)
    return ValidatedConfig(**values)


def vehicle_count(cfg: ValidatedConfig) -> int:
    """Number of vehicles implied by density, road length and lane count."""
    return int(round(cfg.vehicle_density * cfg.road_length_m * cfg.lane_count))


def density_for_count(count: int, road_length_m: float = 1000.0, lane_count: int = 1) -> float:
    return count / (road_length_m * lane_count)


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for a named stream, optionally indexed (run, point, ...)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name], *(int(k) for k in keys)))
    return np.random.Generator(np.random.PCG64(ss))


# --- config file -----------------------------------------------------------

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}


def _parse_value(name: str, raw: str) -> Any:
    kind = _FIELD_TYPES[name]
    if kind == "float":
        return float(raw)
    if kind == "int":
        return int(raw, 0)
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind.startswith("tuple"):
        parts = [p for p in re.split(r"[,\s]+", raw.strip("()[] ")) if p]
        return tuple(float(p) for p in parts)
    return raw


def parse_config_text(text: str) -> ScenarioConfig:
    """Parse ``key = value`` lines (``#`` comments) into a ScenarioConfig.

    Unknown keys, malformed lines and empty values are errors; every problem
    in the file is reported together.
    """
    values: dict[str, Any] = {}
    problems: list[ConfigError] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(RangeViolation(f"line {lineno}", "key = value", line))
            continue
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            problems.append(RangeViolation(key, "known configuration key", raw))
            continue
        if raw == "":
            problems.append(MissingField(key))
            continue
        try:
            values[key] = _parse_value(key, raw)
        except ValueError as exc:
            problems.append(RangeViolation(key, f"parseable {_FIELD_TYPES[key]}", raw))
            del exc
    if problems:
        raise ConfigError(problems)
    return ScenarioConfig(**values)


def load_config(path: str | Path) -> ScenarioConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def format_config(cfg: ScenarioConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(repr(float(x)) for x in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def config_from_mapping(values: Mapping[str, Any]) -> ScenarioConfig:
    unknown = [k for k in values if k not in _FIELD_TYPES]
    if unknown:
        raise ConfigError([RangeViolation(k, "known configuration key", values[k]) for k in unknown])
    return ScenarioConfig(**values)
