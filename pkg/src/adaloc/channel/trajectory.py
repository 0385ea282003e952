"""Constant-speed poses along a closed polygonal loop."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..rng import generator
from .scenario import ScenarioParams


@dataclass(frozen=True)
class TimedPose:
    t: float
    position: tuple[float, float]
    lap_index: int
    lap_fraction: float  # arc length along the lap / perimeter, in [0, 1)


class Loop:
    """Closed polyline parameterized by arc length."""

    def __init__(self, waypoints):
        pts = np.asarray(waypoints, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ConfigError("waypoints must be a list of (x, y) pairs")
        self.vertices = pts
        seg = np.roll(pts, -1, axis=0) - pts
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.perimeter = float(self.seg_len.sum())
        if not self.perimeter > 0:
            raise ConfigError("degenerate trajectory: loop perimeter is zero")
        self._seg = seg
        self._cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])

    def point_at(self, s) -> np.ndarray:
        """Positions (..., 2) at arc lengths ``s`` (wrapped onto the loop)."""
        s = np.mod(np.asarray(s, dtype=np.float64), self.perimeter)
        k = np.searchsorted(self._cum, s, side="right") - 1
        k = np.clip(k, 0, len(self.seg_len) - 1)
        frac = (s - self._cum[k]) / np.where(self.seg_len[k] > 0, self.seg_len[k], 1.0)
        return self.vertices[k] + frac[..., None] * self._seg[k]

    def segment_of(self, s) -> np.ndarray:
        s = np.mod(np.asarray(s, dtype=np.float64), self.perimeter)
        return np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self.seg_len) - 1)


def poses_per_lap(params: ScenarioParams) -> int:
    loop = Loop(params.waypoints)
    n = int(np.floor(loop.perimeter / params.pose_spacing_m + 1e-9))
    if n < 1:
        raise ConfigError("loop is shorter than one pose spacing")
    return n


def make_trajectory(params: ScenarioParams, laps: int, seed: int) -> list[TimedPose]:
    """Sample ``laps`` laps in a fixed driving direction.

    Poses are equally spaced in arc length (``speed * snapshot_interval``);
    the seed picks the starting arc offset within the first spacing. Each
    lap holds ``poses_per_lap`` poses, so any remainder of the perimeter
    slowly shifts later laps along the loop.
    """
    if laps < 1:
        raise ConfigError(f"laps must be >= 1, got {laps}")
    loop = Loop(params.waypoints)
    spacing = params.pose_spacing_m
    n_lap = poses_per_lap(params)
    offset = generator(seed, "trajectory").uniform(0.0, spacing)
    i = np.arange(laps * n_lap)
    s = offset + i * spacing
    xy = loop.point_at(s)
    frac = np.mod(s, loop.perimeter) / loop.perimeter
    t = i * params.snapshot_interval_s
    lap = i // n_lap + 1
    return [TimedPose(float(t[j]), (float(xy[j, 0]), float(xy[j, 1])), int(lap[j]), float(frac[j]))
            for j in range(len(i))]
