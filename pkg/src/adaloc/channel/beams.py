"""DFT beams of a 32-element half-wavelength uniform linear array.

``beam_gain`` indexes a 64-point (2x oversampled) spatial-frequency grid,
u_b = b / 64 wrapped into [-1/2, 1/2). The channel rows use the 32
critically sampled beams (even grid indices) in DFT-index order.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError

N_ELEMENTS = 32
N_GRID = 64


def steering_frequency(beam_index) -> np.ndarray:
    b = np.asarray(beam_index)
    if np.any((b < 0) | (b >= N_GRID)):
        raise ConfigError(f"beam index must be in 0..{N_GRID - 1}")
    u = b / N_GRID
    return np.where(u >= 0.5, u - 1.0, u)


def steering_azimuth(beam_index) -> np.ndarray:
    return np.arcsin(2.0 * steering_frequency(beam_index))


def spatial_frequency(azimuth, elevation=0.0) -> np.ndarray:
    """Phase progression per element (cycles) for a plane wave."""
    return 0.5 * np.sin(azimuth) * np.cos(elevation)


def beam_gain(beam_index: int, azimuth: float, elevation: float = 0.0) -> complex:
    """Normalized response of beam ``beam_index``; magnitude 1 on its steering direction."""
    ub = steering_frequency(beam_index)
    uw = spatial_frequency(azimuth, elevation)
    n = np.arange(N_ELEMENTS)
    return complex(np.exp(2j * np.pi * n * (uw - ub)).mean())


def block_beam_matrix(azimuths, elevations) -> np.ndarray:
    """Gains of the 32 row beams (rows) toward each path (columns)."""
    ub = steering_frequency(np.arange(0, N_GRID, 2))
    uw = spatial_frequency(np.asarray(azimuths, dtype=np.float64),
                           np.asarray(elevations, dtype=np.float64))
    n = np.arange(N_ELEMENTS)
    # (beam, element) @ (element, path)
    a_beam = np.exp(-2j * np.pi * np.outer(ub, n)) / N_ELEMENTS
    a_wave = np.exp(2j * np.pi * np.outer(n, uw))
    return a_beam @ a_wave
