"""Scenario configuration, domain entities and seeded scenario generation.

All quantities are stored in SI units: bits, cycles/s, watts, joules, meters,
seconds. The config file format accepts a few unit-suffixed aliases
(``_mb``, ``_ghz``, ``_mhz``, ``_dbm``) that are converted on load.
"""

from __future__ import annotations

import dataclasses
import math
import os
import sys
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

ENV_PREFIX = "VECEDGE_"


class ConfigError(ValueError):
    """Raised when a config file is malformed or fails validation."""

    def __init__(self, message: str, field_name: str | None = None):
        super().__init__(message)
        self.field = field_name


def dbm_to_watts(p_dbm):
    w = 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)
    return float(w) if w.ndim == 0 else w


def watts_to_dbm(p_w):
    return 10.0 * math.log10(p_w) + 30.0


Range = tuple[float, float]


@dataclass(frozen=True)
class ScenarioConfig:
    # topology and time
    num_vehicles: int = 20
    num_servers: int = 4
    area_side: float = 1000.0
    slot_duration: float = 1.0
    horizon: int = 100
    # channel
    bandwidth: float = 20e6
    noise_power: float = 10.0 ** ((-98.0 - 30.0) / 10.0)
    carrier_freq: float = 2e9
    light_speed: float = 3e8
    ref_distance: float = 1.0
    alpha1: float = 18.0
    alpha2: float = 36.0
    nakagami_m_los: float = 4.0
    nakagami_m_nlos: float = 2.0
    pathloss_exp_los: float = 2.42
    pathloss_exp_nlos: float = 4.28
    shadow_std_los: float = 4.0
    shadow_std_nlos: float = 6.0
    mean_power: float = 1.0
    link_mode: str = "mixture"
    # mobility
    memory_degree: float = 0.9
    vel_std: float = 2.0
    vel_mean_range: Range = (10.0, 25.0)
    # tasks
    task_size_range: Range = (1e6, 3e6)
    task_intensity_range: Range = (500.0, 1500.0)
    task_deadline_range: Range = (0.1, 5.0)
    # vehicles and servers
    vehicle_cpu_range: Range = (1e9, 5e9)
    vehicle_energy_range: Range = (5.0, 25.0)
    server_cpu_range: Range = (50e9, 100e9)
    server_energy: float = 1000.0
    tx_power_range: Range = (0.01, 10.0 ** ((25.0 - 30.0) / 10.0))
    cap_coeff: float = 1e-28
    mec_energy_per_cycle: float = 8.2e-28
    # cost and reward
    weight_delay: float = 0.5
    weight_energy: float = 0.5
    penalty_deadline: float = 1.0
    penalty_energy: float = 1.0
    min_cpu_fraction: float = 0.05
    # learning
    episodes: int = 3000
    discount: float = 0.95
    lr_actor: float = 5e-4
    lr_critic: float = 5e-4
    soft_update_rate: float = 5e-3
    buffer_capacity: int = 100_000
    batch_size: int = 128
    warmup_batches: int = 10
    noise_start: float = 0.3
    noise_end: float = 0.05
    shared_critic: bool = True
    actor_hidden: tuple[int, ...] = (128, 128)
    critic_hidden: tuple[int, ...] = (256, 256)
    dtype: str = "float32"
    rng_seed: int = 0

    def __post_init__(self):
        validate(self)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


RANGE_FIELDS = {f.name for f in fields(ScenarioConfig) if f.name.endswith("_range")}
INT_FIELDS = {"num_vehicles", "num_servers", "horizon", "episodes", "buffer_capacity",
              "batch_size", "warmup_batches", "rng_seed"}
TUPLE_INT_FIELDS = {"actor_hidden", "critic_hidden"}
BOOL_FIELDS = {"shared_critic"}
STR_FIELDS = {"link_mode", "dtype"}
# weights, penalties, seeds and the MEC per-cycle energy may be zero
NONNEGATIVE_FIELDS = {"weight_delay", "weight_energy", "penalty_deadline", "penalty_energy",
                      "cap_coeff", "mec_energy_per_cycle", "rng_seed", "vel_std",
                      "noise_start", "noise_end", "shadow_std_los", "shadow_std_nlos",
                      "warmup_batches"}
UNIT_ALIASES = {"_mb": 1e6, "_ghz": 1e9, "_mhz": 1e6, "_dbm": None}


def validate(cfg: ScenarioConfig) -> None:
    for f in fields(cfg):
        name, v = f.name, getattr(cfg, f.name)
        if name in RANGE_FIELDS:
            if not (isinstance(v, tuple) and len(v) == 2):
                raise ConfigError(f"{name} must be a [low, high] pair", name)
            lo, hi = v
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ConfigError(f"{name} must satisfy low <= high, got {v}", name)
            if lo <= 0:
                raise ConfigError(f"{name} must be strictly positive, got {v}", name)
        elif name in TUPLE_INT_FIELDS:
            if any(int(h) <= 0 for h in v):
                raise ConfigError(f"{name} must list positive layer widths", name)
        elif name in BOOL_FIELDS:
            if not isinstance(v, bool):
                raise ConfigError(f"{name} must be a boolean", name)
        elif name in STR_FIELDS:
            continue
        else:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"{name} must be a finite number, got {v!r}", name)
            if name in NONNEGATIVE_FIELDS:
                if v < 0:
                    raise ConfigError(f"{name} must be >= 0, got {v}", name)
            elif v <= 0:
                raise ConfigError(f"{name} must be > 0, got {v}", name)
    if not 0.0 <= cfg.memory_degree <= 1.0:
        raise ConfigError("memory_degree must lie in [0, 1]", "memory_degree")
    for name in ("nakagami_m_los", "nakagami_m_nlos"):
        if getattr(cfg, name) < 0.5:
            raise ConfigError(f"{name} must be >= 0.5", name)
    if not 0.0 < cfg.discount < 1.0:
        raise ConfigError("discount must lie in (0, 1)", "discount")
    if not 0.0 <= cfg.soft_update_rate <= 1.0:
        raise ConfigError("soft_update_rate must lie in [0, 1]", "soft_update_rate")
    if not 0.0 < cfg.min_cpu_fraction <= 1.0:
        raise ConfigError("min_cpu_fraction must lie in (0, 1]", "min_cpu_fraction")
    if cfg.link_mode not in ("mixture", "bernoulli"):
        raise ConfigError("link_mode must be 'mixture' or 'bernoulli'", "link_mode")
    if cfg.dtype not in ("float32", "float64"):
        raise ConfigError("dtype must be 'float32' or 'float64'", "dtype")
    if cfg.batch_size > cfg.buffer_capacity:
        raise ConfigError("batch_size exceeds buffer_capacity", "batch_size")


def _coerce(name: str, value: Any) -> Any:
    try:
        if name in RANGE_FIELDS:
            lo, hi = value
            return (float(lo), float(hi))
        if name in TUPLE_INT_FIELDS:
            return tuple(int(h) for h in value)
        if name in INT_FIELDS:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if name in BOOL_FIELDS:
            if not isinstance(value, bool):
                raise ValueError
            return value
        if name in STR_FIELDS:
            return str(value)
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot interpret {value!r}", name) from None


def _resolve_key(key: str, value: Any) -> tuple[str, Any]:
    """Map a file key (possibly unit-suffixed) to a field name and SI value."""
    for suffix, scale in UNIT_ALIASES.items():
        if key.endswith(suffix):
            base = key[: -len(suffix)]
            if scale is None:
                conv = lambda x: 10.0 ** ((float(x) - 30.0) / 10.0)
            else:
                conv = lambda x, s=scale: float(x) * s
            try:
                value = [conv(x) for x in value] if isinstance(value, list) else conv(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: cannot interpret {value!r}", base) from None
            return base, value
    return key, value


def _flatten(doc: Mapping[str, Any]) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in doc.items():
        if isinstance(value, dict):
            flat.update(_flatten(value))
        else:
            if key in flat:
                raise ConfigError(f"duplicate key {key}", key)
            flat[key] = value
    return flat


def config_from_mapping(doc: Mapping[str, Any], require_all: bool = True) -> ScenarioConfig:
    known = {f.name for f in fields(ScenarioConfig)}
    values: dict[str, Any] = {}
    for key, raw in _flatten(doc).items():
        name, value = _resolve_key(key, raw)
        if name not in known:
            raise ConfigError(f"unknown config key {key}", key)
        values[name] = _coerce(name, value)
    if require_all:
        missing = [n for n in known if n not in values]
        if missing:
            raise ConfigError(f"missing field {sorted(missing)[0]}", sorted(missing)[0])
    try:
        return ScenarioConfig(**values)
    except TypeError as exc:  # pragma: no cover
        raise ConfigError(str(exc)) from exc


def apply_env_overrides(cfg: ScenarioConfig, environ: Mapping[str, str] | None = None) -> ScenarioConfig:
    """Override config fields from ``VECEDGE_<FIELD>`` variables (TOML literal values)."""
    environ = os.environ if environ is None else environ
    updates: dict[str, Any] = {}
    for var, text in environ.items():
        if not var.startswith(ENV_PREFIX):
            continue
        key = var[len(ENV_PREFIX):].lower()
        try:
            raw = tomllib.loads(f"v = {text}")["v"]
        except tomllib.TOMLDecodeError:
            raw = text
        name, value = _resolve_key(key, raw)
        if not hasattr(cfg, name):
            continue
        updates[name] = _coerce(name, value)
    return cfg.replace(**updates) if updates else cfg


def load_config(path: str | os.PathLike) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_mapping(doc)


def default_config_path() -> Path:
    return Path(str(resources.files("vecedge") / "default_scenario.toml"))


def default_config() -> ScenarioConfig:
    return load_config(default_config_path())


def desk_config(**changes) -> ScenarioConfig:
    """Small CI-runnable scenario: 4 vehicles, 2 servers, 500 episodes."""
    base = dict(num_vehicles=4, num_servers=2, episodes=500)
    base.update(changes)
    return default_config().replace(**base)


def dump_config(cfg: ScenarioConfig) -> str:
    """Render a config as a flat TOML document in SI units (round-trips exactly)."""
    lines = ["[scenario]"]
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace('"', '\\"') + '"'
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class Task:
    size: float
    intensity: float
    deadline: float

    def __post_init__(self):
        if not (self.size > 0 and self.intensity > 0 and self.deadline > 0):
            raise ValueError(f"task attributes must be positive: {self}")

    @property
    def cycles(self) -> float:
        return self.size * self.intensity


@dataclass(frozen=True)
class VehicleState:
    position: np.ndarray
    velocity: np.ndarray
    mean_velocity: np.ndarray
    cpu: float
    energy_budget: float
    tx_power: float
    capacitance: float


@dataclass(frozen=True)
class MecServer:
    position: np.ndarray
    cpu: float
    energy_budget: float


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def grid_positions(num_servers: int, area_side: float) -> np.ndarray:
    """Centers of a near-square grid of cells covering the area, column-major."""
    cols = math.ceil(math.sqrt(num_servers))
    rows = math.ceil(num_servers / cols)
    pts = [((c + 0.5) * area_side / cols, (r + 0.5) * area_side / rows)
           for c in range(cols) for r in range(rows)]
    return np.array(pts[:num_servers], dtype=float)


def sample_tasks(cfg: ScenarioConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` tasks as an (n, 3) array of (size, intensity, deadline)."""
    out = np.empty((n, 3))
    for j, (lo, hi) in enumerate((cfg.task_size_range, cfg.task_intensity_range,
                                  cfg.task_deadline_range)):
        out[:, j] = rng.uniform(lo, hi, size=n)
    return out


def generate_scenario(cfg: ScenarioConfig, seed: int) -> tuple[list[VehicleState], list[MecServer]]:
    rng = np.random.default_rng(seed)
    V, M = cfg.num_vehicles, cfg.num_servers
    pos = rng.uniform(0.0, cfg.area_side, size=(V, 2))
    speed = rng.uniform(*cfg.vel_mean_range, size=V)
    heading = rng.uniform(0.0, 2.0 * math.pi, size=V)
    vel = np.stack([speed * np.cos(heading), speed * np.sin(heading)], axis=1)
    cpu = rng.uniform(*cfg.vehicle_cpu_range, size=V)
    energy = rng.uniform(*cfg.vehicle_energy_range, size=V)
    power = rng.uniform(*cfg.tx_power_range, size=V)
    vehicles = [
        VehicleState(position=_frozen(pos[i]), velocity=_frozen(vel[i]),
                     mean_velocity=_frozen(vel[i]), cpu=float(cpu[i]),
                     energy_budget=float(energy[i]), tx_power=float(power[i]),
                     capacitance=cfg.cap_coeff)
        for i in range(V)
    ]
    server_cpu = rng.uniform(*cfg.server_cpu_range, size=M)
    servers = [MecServer(position=_frozen(p), cpu=float(server_cpu[m]),
                         energy_budget=cfg.server_energy)
               for m, p in enumerate(grid_positions(M, cfg.area_side))]
    return vehicles, servers
