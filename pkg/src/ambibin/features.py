"""Network input: Re/Im spectrogram planes plus omni-weighted phase differences."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .dsp import ComplexSpectrogram, ShapeError

__all__ = [
    "PhaseDiffFeature",
    "InputFeature",
    "channel_pairs",
    "feature_plane_count",
    "phase_differences",
    "phase_diff_feature",
    "assemble_input",
]


def channel_pairs(channels: int) -> list[tuple[int, int]]:
    return list(itertools.combinations(range(channels), 2))


def feature_plane_count(channels: int) -> int:
    return 2 * channels + 2 * len(channel_pairs(channels))


@dataclass
class PhaseDiffFeature:
    planes: np.ndarray  # [2P, T, F]: P cos-weighted planes then P sin-weighted planes
    pair_index: list[tuple[int, int]]

    @property
    def cos_half(self) -> np.ndarray:
        return self.planes[: len(self.pair_index)]

    @property
    def sin_half(self) -> np.ndarray:
        return self.planes[len(self.pair_index) :]


@dataclass
class InputFeature:
    planes: np.ndarray  # [2C + 2P, T, F]
    channels: int
    layout: list[str] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.planes.shape


def _phase(bins: np.ndarray) -> np.ndarray:
    # np.angle(0) is already 0, which is the convention for silent bins
    return np.angle(bins)


def phase_differences(spec: ComplexSpectrogram) -> np.ndarray:
    """Pairwise ``angle(X_a) - angle(X_b)`` for a < b, wrapped into [0, 2pi)."""
    if spec.channels < 2:
        raise ShapeError("phase differences need at least two channels")
    phase = _phase(spec.bins)
    pairs = channel_pairs(spec.channels)
    a = [p[0] for p in pairs]
    b = [p[1] for p in pairs]
    diff = np.mod(phase[a] - phase[b], 2 * np.pi)
    # mod can round a tiny negative up to exactly 2pi
    diff[diff >= 2 * np.pi] = 0.0
    return diff


def phase_diff_feature(spec: ComplexSpectrogram, omni: ComplexSpectrogram) -> PhaseDiffFeature:
    omni_bins = omni.bins[0] if omni.bins.ndim == 3 else omni.bins
    if omni_bins.shape != spec.bins.shape[1:]:
        raise ShapeError(f"omni spectrogram {omni_bins.shape} does not match {spec.bins.shape[1:]}")
    dphi = phase_differences(spec)
    mag = np.abs(omni_bins)[None]
    planes = np.concatenate([mag * np.cos(dphi), mag * np.sin(dphi)], axis=0)
    return PhaseDiffFeature(planes, channel_pairs(spec.channels))


def assemble_input(spec: ComplexSpectrogram, gain: float | None = None) -> InputFeature:
    """Stack ``[Re X_0..Re X_{C-1}, Im X_0..Im X_{C-1}, D_cos..., D_sin...]``.

    Channel 0 must be the omnidirectional (ACN 0) channel.  ``gain`` optionally
    scales every plane; it is off by default.
    """
    C = spec.channels
    d = phase_diff_feature(spec, spec.channel(0))
    planes = np.concatenate([spec.bins.real, spec.bins.imag, d.planes], axis=0)
    if gain is not None:
        planes = planes * gain
    layout = (
        [f"re{c}" for c in range(C)]
        + [f"im{c}" for c in range(C)]
        + [f"dcos{a}{b}" for a, b in d.pair_index]
        + [f"dsin{a}{b}" for a, b in d.pair_index]
    )
    return InputFeature(planes, C, layout)
