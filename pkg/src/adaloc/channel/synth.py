"""Path-sum synthesis of beam-space channel transfer functions."""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from ..errors import GenerationError
from ..rng import Streams
from . import beams
from .scenario import N_BEAMS, N_BLOCKS, N_ROWS, N_SUBCARRIERS, SPEED_OF_LIGHT, ScenarioParams
from .trajectory import Loop, TimedPose

BLOCK_NAMES = ("H1", "V1", "H2", "V2")
MAX_RANGE_M = 1000.0
_REF_DISTANCE_M = 10.0
_LAYOUT_ATTEMPTS = 200_000


@dataclass(frozen=True)
class ChannelSnapshot:
    ctf: np.ndarray  # complex (128, 46): rows = [H1; V1; H2; V2] x 32 beams
    pose: TimedPose
    scenario_id: str

    @property
    def real_planes(self) -> np.ndarray:
        """(2, 128, 46) float array: real part, imaginary part."""
        return np.stack([self.ctf.real, self.ctf.imag])


@dataclass(frozen=True)
class ScatterLayout:
    """Scenario-fixed scatterers so the channel is a function of position."""

    positions: np.ndarray      # (P, 3) meters
    weights: np.ndarray        # (P,) power fractions, sum 1 (empty when P = 0)
    phases: np.ndarray         # (4, P) independent per block
    los_phase: np.ndarray      # (4,)
    block_gain: np.ndarray     # (4,) linear amplitude offsets


def bs_position(params: ScenarioParams) -> np.ndarray:
    return np.array([0.0, 0.0, params.bs_height_m])


def ue_position(pose: TimedPose, params: ScenarioParams) -> np.ndarray:
    return np.array([pose.position[0], pose.position[1], params.ue_height_m])


def excess_delays(scatterers: np.ndarray, ue: np.ndarray, bs: np.ndarray) -> np.ndarray:
    """Extra propagation delay (s) of each scatter path over the direct path."""
    d_bs = np.linalg.norm(scatterers - bs, axis=-1)
    d_ue = np.linalg.norm(scatterers[:, None, :] - ue[None, :, :], axis=-1)
    d_los = np.linalg.norm(ue - bs, axis=-1)
    return (d_bs[:, None] + d_ue - d_los[None, :]) / SPEED_OF_LIGHT


@functools.lru_cache(maxsize=32)
def scatter_layout(params: ScenarioParams) -> ScatterLayout:
    """Place ``n_scatterers`` so every path stays within ``delay_spread`` along the loop."""
    rng = Streams(params.seed).split(params.scenario_id).get("layout")
    loop = Loop(params.waypoints)
    probe = loop.point_at(np.linspace(0.0, loop.perimeter, 256, endpoint=False))
    ue = np.column_stack([probe, np.full(len(probe), params.ue_height_m)])
    bs = bs_position(params)
    spread = params.delay_spread_ns * 1e-9
    margin = 0.5 * SPEED_OF_LIGHT * spread
    lo = probe.min(axis=0) - margin
    hi = probe.max(axis=0) + margin
    n = params.n_scatterers
    accepted = np.zeros((0, 3))
    tries = 0
    while len(accepted) < n:
        batch = max(64, 4 * (n - len(accepted)))
        cand = np.column_stack([rng.uniform(lo[0], hi[0], batch),
                                rng.uniform(lo[1], hi[1], batch),
                                rng.uniform(0.0, params.bs_height_m, batch)])
        ok = excess_delays(cand, ue, bs).max(axis=1) <= spread
        accepted = np.concatenate([accepted, cand[ok]])[:n]
        tries += batch
        if tries > _LAYOUT_ATTEMPTS and len(accepted) < n:
            raise GenerationError(
                f"could not place {n} scatterers within a {params.delay_spread_ns} ns delay spread")
    w = rng.exponential(1.0, n)
    w = w / w.sum() if n else w
    phases = rng.uniform(0.0, 2 * np.pi, (N_BLOCKS, n))
    los_phase = rng.uniform(0.0, 2 * np.pi, N_BLOCKS)
    gain = 10.0 ** (rng.normal(0.0, params.block_gain_db, N_BLOCKS) / 20.0)
    return ScatterLayout(accepted, w, phases, los_phase, gain)


def subcarrier_frequencies(params: ScenarioParams) -> np.ndarray:
    k = np.arange(N_SUBCARRIERS)
    return params.carrier_hz + (k - (N_SUBCARRIERS - 1) / 2.0) * params.subcarrier_spacing_hz


def los_delay(pose: TimedPose, params: ScenarioParams) -> float:
    return float(np.linalg.norm(ue_position(pose, params) - bs_position(params)) / SPEED_OF_LIGHT)


def _direction(vec: np.ndarray, params: ScenarioParams):
    az = np.arctan2(vec[..., 1], vec[..., 0]) - np.deg2rad(params.array_azimuth_deg)
    el = np.arctan2(vec[..., 2], np.hypot(vec[..., 0], vec[..., 1]))
    return az, el


def path_table(pose: TimedPose, params: ScenarioParams, layout: ScatterLayout | None = None):
    """(amplitudes (4, P'), delays (P',), azimuths, elevations) of every active path.

    Amplitudes include the per-block phase and gain offsets. The LoS path,
    when visible, comes first.
    """
    layout = layout or scatter_layout(params)
    bs = bs_position(params)
    ue = ue_position(pose, params)
    d_los = float(np.linalg.norm(ue - bs))
    if d_los > MAX_RANGE_M:
        raise GenerationError(f"pose {pose.position} is {d_los:.0f} m from the base station (max {MAX_RANGE_M:.0f})")
    k = params.k_linear
    pathloss = _REF_DISTANCE_M / max(d_los, 1.0)
    amps, delays, az, el = [], [], [], []
    if bool(params.los_visible(pose.lap_fraction)):
        a_los, e_los = _direction(ue - bs, params)
        amps.append(np.sqrt(k / (k + 1.0)) * pathloss * layout.block_gain * np.exp(1j * layout.los_phase))
        delays.append(d_los / SPEED_OF_LIGHT)
        az.append(a_los)
        el.append(e_los)
    if len(layout.positions):
        s = layout.positions
        d = np.linalg.norm(s - bs, axis=1) + np.linalg.norm(s - ue, axis=1)
        a_s, e_s = _direction(s - bs, params)
        amp = np.sqrt(layout.weights / (k + 1.0)) * pathloss
        amps.extend((layout.block_gain[:, None] * amp[None, :] * np.exp(1j * layout.phases)).T)
        delays.extend(d / SPEED_OF_LIGHT)
        az.extend(a_s)
        el.extend(e_s)
    amps = np.array(amps).reshape(-1, N_BLOCKS).T if amps else np.zeros((N_BLOCKS, 0), complex)
    return amps, np.array(delays, dtype=np.float64), np.array(az, dtype=np.float64), np.array(el, dtype=np.float64)


def ctf_from_paths(amps, delays, azimuths, elevations, params: ScenarioParams) -> np.ndarray:
    """Noise-free 128x46 CTF for explicit paths; amps has shape (4, P)."""
    delays = np.asarray(delays, dtype=np.float64)
    if len(delays) and delays.max() >= params.delay_window_s:
        raise GenerationError(
            f"path delay {delays.max() * 1e9:.1f} ns exceeds the {params.delay_window_s * 1e9:.1f} ns "
            "unambiguous window of the subcarrier grid")
    gains = beams.block_beam_matrix(azimuths, elevations)            # (32, P)
    phasor = np.exp(-2j * np.pi * np.outer(delays, subcarrier_frequencies(params)))  # (P, 46)
    per_block = (gains[None, :, :] * np.asarray(amps)[:, None, :]) @ phasor        # (4, 32, 46)
    return per_block.reshape(N_ROWS, N_SUBCARRIERS)


def synth_ctf(pose: TimedPose, params: ScenarioParams, rng: np.random.Generator,
              layout: ScatterLayout | None = None) -> ChannelSnapshot:
    """One noisy beam-space CTF; ``rng`` feeds only the measurement noise."""
    h = ctf_from_paths(*path_table(pose, params, layout), params)
    if np.isfinite(params.noise_floor_db):
        p_mean = float(np.mean(np.abs(h) ** 2))
        sigma = np.sqrt(p_mean * 10.0 ** (params.noise_floor_db / 10.0) / 2.0)
        h = h + sigma * (rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape))
    return ChannelSnapshot(h, pose, params.scenario_id)


def snapshot_rng(params: ScenarioParams, index: int) -> np.random.Generator:
    return Streams(params.seed).split(params.scenario_id).split("noise").get(int(index))


def synth_snapshots(poses, params: ScenarioParams):
    """Yield one snapshot per pose; snapshot i draws noise from its own substream."""
    layout = scatter_layout(params)
    for i, pose in enumerate(poses):
        yield synth_ctf(pose, params, snapshot_rng(params, i), layout)
