"""Synthetic paired ambisonic/binaural material for tests and smoke runs."""
from __future__ import annotations

import math

import numpy as np

from .ambisonics import Direction, Normalization, PlaneWaveField, encode_plane_wave, sh_matrix
from .dsp import TimeSignal
from .grids import SphereGrid
from .training import ClipPair

__all__ = ["source_signal", "ear_response", "plane_wave_pair", "order1_hrirs"]

HEAD_RADIUS = 0.0875
SPEED_OF_SOUND = 343.0


def source_signal(n: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Band of harmonic partials over low-passed noise, peak-normalised to 0.5."""
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(110.0, 330.0)
    x = sum(rng.uniform(0.2, 1.0) / k * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
            for k in range(1, 9))
    noise = rng.standard_normal(n)
    noise = np.convolve(noise, np.ones(8) / 8, mode="same")
    x = x + 0.3 * noise
    return 0.5 * x / np.max(np.abs(x))


def ear_response(direction: Direction, sample_rate: int) -> list[tuple[float, int]]:
    """Per-ear (gain <= 1, integer delay) from a spherical-head ITD and a cosine ILD."""
    lateral = math.cos(direction.elevation) * math.sin(direction.azimuth)  # +1 = fully left
    itd = HEAD_RADIUS / SPEED_OF_SOUND * (math.asin(lateral) + lateral)
    out = []
    for side in (1.0, -1.0):  # left, right
        gain = 0.55 + 0.4 * side * lateral
        delay = int(round(max(0.0, -side * itd) * sample_rate))
        out.append((gain, delay))
    return out


def plane_wave_pair(seconds: float, sample_rate: int = 48000, seed: int = 0,
                    direction: Direction | None = None, segment_id: str = "synthetic") -> ClipPair:
    """FOA plane wave (SN3D) paired with a delayed, attenuated copy per ear."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sample_rate))
    if direction is None:
        direction = Direction(rng.uniform(-0.4, 0.4), rng.uniform(0, 2 * np.pi))
    s = source_signal(n, sample_rate, rng)
    clip = encode_plane_wave(PlaneWaveField(direction, TimeSignal(s, sample_rate)), 1, Normalization.SN3D)
    ears = np.zeros((2, n))
    for e, (gain, delay) in enumerate(ear_response(direction, sample_rate)):
        ears[e, delay:] = gain * s[: n - delay]
    return ClipPair(clip, TimeSignal(ears, sample_rate), (segment_id,))


def order1_hrirs(grid: SphereGrid, taps: int, rng: np.random.Generator) -> np.ndarray:
    """HRIRs ``[N, 2, taps]`` that are exactly order-1 band-limited over the sphere."""
    coef = rng.standard_normal((4, 2, taps)) * np.exp(-np.arange(taps) / (taps / 4))
    y = sh_matrix(1, grid.elevation, grid.azimuth, Normalization.N3D)
    return np.einsum("ji,iet->jet", y, coef)
