"""Synthetic beam-space channels along vehicle loops for three scenarios."""
from .beams import beam_gain, steering_azimuth, steering_frequency
from .scenario import (
    N_ROWS,
    N_SUBCARRIERS,
    SCENARIOS,
    SPEED_OF_LIGHT,
    ScenarioParams,
    load_scenario,
    normalize_scenario,
    preset,
    scenario_index,
)
from .synth import (
    ChannelSnapshot,
    ctf_from_paths,
    los_delay,
    path_table,
    scatter_layout,
    snapshot_rng,
    synth_ctf,
    synth_snapshots,
)
from .trajectory import Loop, TimedPose, make_trajectory, poses_per_lap

__all__ = [
    "ChannelSnapshot", "Loop", "N_ROWS", "N_SUBCARRIERS", "SCENARIOS", "SPEED_OF_LIGHT",
    "ScenarioParams", "TimedPose", "beam_gain", "ctf_from_paths", "load_scenario", "los_delay",
    "make_trajectory", "normalize_scenario", "path_table", "poses_per_lap", "preset",
    "scatter_layout", "scenario_index", "snapshot_rng", "steering_azimuth", "steering_frequency",
    "synth_ctf", "synth_snapshots",
]
