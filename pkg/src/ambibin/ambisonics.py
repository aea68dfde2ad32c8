"""Real spherical harmonics and ambisonic channel conventions.

Channels are ACN ordered, ``i = n**2 + n + m``.  Two normalisations exist:

``SN3D``
    Schmidt semi-normalised without Condon-Shortley phase (ambiX); the
    omnidirectional function is 1.  Used at every I/O boundary.
``N3D``
    Orthonormal on the unit sphere, ``integral(y_i * y_j dOmega) = delta_ij``,
    i.e. ``SN3D * sqrt(2n + 1) / sqrt(4 pi)``.  Used for decoding and the
    spherical Fourier transform of HRTFs.

Angles are elevation ``theta`` in (-pi/2, pi/2) and azimuth ``phi`` in
[0, 2pi), azimuth counter-clockwise from the front (x axis).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import factorial, lpmv

from .dsp import TimeSignal

__all__ = [
    "Normalization",
    "Direction",
    "AmbisonicClip",
    "PlaneWaveField",
    "acn_to_nm",
    "order_of_channels",
    "sh_real",
    "sh_matrix",
    "normalization_factors",
    "encode_plane_wave",
    "omni_channel",
    "convert_normalization",
]


class Normalization(str, enum.Enum):
    SN3D = "SN3D"
    N3D = "N3D"


@dataclass(frozen=True)
class Direction:
    elevation: float
    azimuth: float

    def __post_init__(self):
        if not -math.pi / 2 <= self.elevation <= math.pi / 2:
            raise ValueError(f"elevation {self.elevation} outside [-pi/2, pi/2]")
        object.__setattr__(self, "azimuth", float(self.azimuth) % (2 * math.pi))

    @classmethod
    def from_degrees(cls, elevation_deg: float, azimuth_deg: float) -> "Direction":
        return cls(math.radians(elevation_deg), math.radians(azimuth_deg))

    @classmethod
    def from_cartesian(cls, xyz) -> "Direction":
        x, y, z = np.asarray(xyz, dtype=float) / np.linalg.norm(xyz)
        return cls(math.asin(max(-1.0, min(1.0, z))), math.atan2(y, x))

    def cartesian(self) -> np.ndarray:
        c = math.cos(self.elevation)
        return np.array([c * math.cos(self.azimuth), c * math.sin(self.azimuth), math.sin(self.elevation)])


def acn_to_nm(acn: int) -> tuple[int, int]:
    n = math.isqrt(acn)
    return n, acn - n * n - n


def order_of_channels(channels: int) -> int:
    order = math.isqrt(channels) - 1
    if (order + 1) ** 2 != channels:
        raise ValueError(f"{channels} channels is not a full ambisonic order")
    return order


def _sh_sn3d(n: int, m: int, elevation, azimuth):
    am = abs(m)
    # lpmv carries the Condon-Shortley phase; ambiX drops it
    legendre = (-1.0) ** am * lpmv(am, n, np.sin(elevation))
    norm = math.sqrt((1.0 if m == 0 else 2.0) * factorial(n - am, exact=True) / factorial(n + am, exact=True))
    trig = np.cos(m * azimuth) if m >= 0 else np.sin(am * azimuth)
    return norm * legendre * trig


def normalization_factors(order: int, source: Normalization, target: Normalization) -> np.ndarray:
    """Per-channel gains mapping ``source``-normalised channels to ``target``."""
    source, target = Normalization(source), Normalization(target)
    n = np.array([acn_to_nm(i)[0] for i in range((order + 1) ** 2)], dtype=float)
    to_n3d = np.sqrt(2 * n + 1) / math.sqrt(4 * math.pi)
    if source == target:
        return np.ones_like(n)
    return to_n3d if target == Normalization.N3D else 1.0 / to_n3d


def sh_real(acn_index: int, direction: Direction, normalization: Normalization = Normalization.SN3D) -> float:
    if acn_index < 0:
        raise ValueError("acn_index must be non-negative")
    n, m = acn_to_nm(acn_index)
    value = float(_sh_sn3d(n, m, direction.elevation, direction.azimuth))
    if Normalization(normalization) == Normalization.N3D:
        value *= math.sqrt(2 * n + 1) / math.sqrt(4 * math.pi)
    return value


def sh_matrix(order: int, elevation, azimuth, normalization: Normalization = Normalization.SN3D) -> np.ndarray:
    """Vectorised basis, shape ``[len(directions), (order+1)**2]``."""
    elevation = np.atleast_1d(np.asarray(elevation, dtype=float))
    azimuth = np.atleast_1d(np.asarray(azimuth, dtype=float))
    cols = [_sh_sn3d(*acn_to_nm(i), elevation, azimuth) for i in range((order + 1) ** 2)]
    y = np.stack(cols, axis=-1)
    return y * normalization_factors(order, Normalization.SN3D, normalization)


@dataclass
class AmbisonicClip:
    signal: TimeSignal
    order: int = 1
    normalization: Normalization = Normalization.SN3D
    channel_order: str = "ACN"

    def __post_init__(self):
        self.normalization = Normalization(self.normalization)
        if self.channel_order != "ACN":
            raise ValueError(f"only ACN channel order is supported, got {self.channel_order!r}")
        if self.order < 0 or self.signal.channels != (self.order + 1) ** 2:
            raise ValueError(
                f"order {self.order} needs {(self.order + 1) ** 2} channels, got {self.signal.channels}"
            )

    @property
    def samples(self) -> np.ndarray:
        return self.signal.samples

    @property
    def sample_rate(self) -> int:
        return self.signal.sample_rate

    @classmethod
    def from_signal(cls, signal: TimeSignal, normalization=Normalization.SN3D) -> "AmbisonicClip":
        return cls(signal, order_of_channels(signal.channels), Normalization(normalization))


@dataclass
class PlaneWaveField:
    direction: Direction
    source: TimeSignal

    def __post_init__(self):
        if self.source.channels != 1:
            raise ValueError("plane-wave source must be a single channel")


def encode_plane_wave(field: PlaneWaveField, order: int = 1, normalization=Normalization.SN3D) -> AmbisonicClip:
    if order < 0:
        raise ValueError("order must be non-negative")
    d = field.direction
    gains = sh_matrix(order, d.elevation, d.azimuth, normalization)[0]
    samples = gains[:, None] * field.source.samples[0][None, :]
    return AmbisonicClip(TimeSignal(samples, field.source.sample_rate), order, normalization)


def omni_channel(clip: AmbisonicClip) -> TimeSignal:
    return TimeSignal(clip.samples[:1].copy(), clip.sample_rate)


def convert_normalization(clip: AmbisonicClip, target: Normalization) -> AmbisonicClip:
    gains = normalization_factors(clip.order, clip.normalization, target)
    return AmbisonicClip(
        TimeSignal(clip.samples * gains[:, None], clip.sample_rate), clip.order, Normalization(target)
    )
