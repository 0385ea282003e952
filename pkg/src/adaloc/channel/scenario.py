"""Scenario parameters and the S1/S2/S3 presets."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .. import config as cfg
from ..errors import ConfigError

SCENARIOS = ("S1", "S2", "S3")
SPEED_OF_LIGHT = 299_792_458.0
N_BEAMS = 32  # beams per polarization / antenna-pair block
N_BLOCKS = 4  # H1, V1, H2, V2
N_ROWS = N_BEAMS * N_BLOCKS
N_SUBCARRIERS = 46


def scenario_index(scenario_id: str) -> int:
    sid = normalize_scenario(scenario_id)
    return SCENARIOS.index(sid)


def normalize_scenario(token: str) -> str:
    sid = str(token).strip().upper()
    if sid not in SCENARIOS:
        raise ConfigError(f"unknown scenario {token!r}; expected one of s1, s2, s3")
    return sid


@dataclass(frozen=True)
class ScenarioParams:
    scenario_id: str
    waypoints: tuple
    k_factor_db: float
    n_scatterers: int
    los_blocked: tuple
    delay_spread_ns: float
    noise_floor_db: float = -25.0
    bs_height_m: float = 20.0
    ue_height_m: float = 1.5
    speed_kmh: float = 15.0
    snapshot_interval_s: float = 0.020
    carrier_hz: float = 3.85e9
    bandwidth_hz: float = 100e6
    array_azimuth_deg: float = 0.0
    block_gain_db: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenario_id", normalize_scenario(self.scenario_id))
        object.__setattr__(self, "waypoints", tuple((float(x), float(y)) for x, y in self.waypoints))
        object.__setattr__(self, "los_blocked", tuple((float(a), float(b)) for a, b in self.los_blocked))
        if len(self.waypoints) < 3:
            raise ConfigError("trajectory needs at least 3 waypoints")
        if self.n_scatterers < 0:
            raise ConfigError("n_scatterers must be non-negative")
        if self.delay_spread_ns < 0:
            raise ConfigError("delay_spread_ns must be non-negative")
        if self.speed_kmh <= 0 or self.snapshot_interval_s <= 0:
            raise ConfigError("speed_kmh and snapshot_interval_s must be positive")
        if self.bandwidth_hz <= 0 or self.carrier_hz <= 0:
            raise ConfigError("carrier_hz and bandwidth_hz must be positive")
        for a, b in self.los_blocked:
            if not 0.0 <= a < b <= 1.0:
                raise ConfigError(f"los_blocked interval {a}-{b} must satisfy 0 <= a < b <= 1")
        self._check_scenario_invariants()

    def _check_scenario_invariants(self):
        n_trans = self.los_transitions()
        always_visible = not self.los_blocked
        always_blocked = n_trans == 0 and bool(self.los_blocked)
        if self.scenario_id == "S1" and not (always_visible and self.k_factor_db >= 10):
            raise ConfigError("S1 requires unobstructed LoS and k_factor_db >= 10")
        if self.scenario_id == "S2" and not always_blocked:
            raise ConfigError("S2 requires LoS blocked along the whole loop (los_blocked = 0-1)")
        if self.scenario_id == "S3" and n_trans < 2:
            raise ConfigError("S3 requires at least 2 LoS transitions per lap")

    @property
    def k_linear(self) -> float:
        return 10.0 ** (self.k_factor_db / 10.0)

    @property
    def subcarrier_spacing_hz(self) -> float:
        return self.bandwidth_hz / N_SUBCARRIERS

    @property
    def delay_window_s(self) -> float:
        return 1.0 / self.subcarrier_spacing_hz

    @property
    def pose_spacing_m(self) -> float:
        return self.speed_kmh / 3.6 * self.snapshot_interval_s

    def los_visible(self, lap_fraction) -> np.ndarray:
        """LoS mask as a function of arc-length fraction in [0, 1)."""
        f = np.asarray(lap_fraction, dtype=np.float64)
        blocked = np.zeros(f.shape, dtype=bool)
        for a, b in self.los_blocked:
            blocked |= (f >= a) & (f < b)
        return ~blocked

    def los_transitions(self, resolution: int = 100_000) -> int:
        """Visible/blocked changes around one closed lap."""
        grid = (np.arange(resolution) + 0.5) / resolution
        vis = self.los_visible(grid)
        return int(np.count_nonzero(vis != np.roll(vis, 1)))

    def replace(self, **changes) -> "ScenarioParams":
        return dataclasses.replace(self, **changes)

    def to_pairs(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "waypoints":
                out[f.name] = cfg.format_points(v)
            elif f.name == "los_blocked":
                out[f.name] = cfg.format_intervals(v)
            else:
                out[f.name] = repr(v) if isinstance(v, float) else str(v)
        return out


SCHEMA = {
    "scenario_id": normalize_scenario,
    "waypoints": cfg.parse_points,
    "k_factor_db": float,
    "n_scatterers": int,
    "los_blocked": cfg.parse_intervals,
    "delay_spread_ns": float,
    "noise_floor_db": float,
    "bs_height_m": float,
    "ue_height_m": float,
    "speed_kmh": float,
    "snapshot_interval_s": float,
    "carrier_hz": float,
    "bandwidth_hz": float,
    "array_azimuth_deg": float,
    "block_gain_db": float,
    "seed": int,
}


def _preset_pairs(scenario_id: str) -> dict[str, str]:
    sid = normalize_scenario(scenario_id)
    text = resources.files("adaloc.channel").joinpath(f"presets/{sid.lower()}.cfg")
    with resources.as_file(text) as p:
        return cfg.read_pairs(p)


def preset(scenario_id: str, **overrides) -> ScenarioParams:
    """Default parameters for ``S1``/``S2``/``S3`` with keyword overrides."""
    values = cfg.parse_pairs(_preset_pairs(scenario_id), SCHEMA, f"preset {scenario_id}")
    values.update(overrides)
    return ScenarioParams(**values)


def load_scenario(path: str | Path, **overrides) -> ScenarioParams:
    """Read a scenario file; missing keys fall back to the named preset."""
    values = cfg.load(path, SCHEMA)
    sid = values.get("scenario_id") or overrides.get("scenario_id")
    if sid is None:
        raise ConfigError(f"{path}: scenario_id is required")
    base = cfg.parse_pairs(_preset_pairs(sid), SCHEMA)
    base.update(values)
    base.update(overrides)
    return ScenarioParams(**base)
