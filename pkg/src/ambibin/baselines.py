"""Conventional ambisonic-to-binaural renderers.

* Virtual loudspeakers: sample the sound field at a grid of directions with
  a quadrature-weighted projection decoder, convolve each feed with that
  direction's HRIR and sum per ear.
* Spherical HRTF: project the HRTF set onto the N3D spherical-harmonic basis
  (quadrature spherical Fourier transform) and filter each ambisonic channel
  with its coefficient, summing per ear.

With an order-limited HRTF and a grid that integrates degree ``2 * order``
exactly, both reduce to the same sum and agree to rounding error.

The sp-HRTF renderer here is plain least-squares/quadrature SFT; no
magnitude-least-squares (MagLS) optimisation is applied.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .ambisonics import AmbisonicClip, Direction, Normalization, convert_normalization, sh_matrix
from .dsp import TimeSignal
from .grids import SphereGrid
from .io import read_wav, write_wav

__all__ = [
    "HrirSet",
    "SpHrtf",
    "vls_decode",
    "vls_render",
    "sft_encode",
    "sphrtf_render",
    "load_hrir_manifest",
    "save_hrir_manifest",
    "DIRECT_CONV_MAX_TAPS",
]

DIRECT_CONV_MAX_TAPS = 512


@dataclass
class HrirSet:
    elevation: np.ndarray  # [N] radians
    azimuth: np.ndarray  # [N] radians
    impulse_responses: np.ndarray  # [N, 2, taps]
    sample_rate: int
    weights: np.ndarray | None = None  # [N], sum 4*pi

    def __post_init__(self):
        self.elevation = np.asarray(self.elevation, dtype=float).reshape(-1)
        self.azimuth = np.asarray(self.azimuth, dtype=float).reshape(-1)
        self.impulse_responses = np.asarray(self.impulse_responses, dtype=float)
        n = len(self.elevation)
        if self.impulse_responses.ndim != 3 or self.impulse_responses.shape[:2] != (n, 2):
            raise ValueError(f"impulse_responses must be [{n}, 2, taps], got {self.impulse_responses.shape}")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
            if len(self.weights) != n or np.any(self.weights <= 0):
                raise ValueError("quadrature weights must be positive, one per direction")

    @classmethod
    def from_grid(cls, grid: SphereGrid, impulse_responses, sample_rate: int) -> "HrirSet":
        return cls(grid.elevation, grid.azimuth, impulse_responses, sample_rate, grid.weights)

    def __len__(self) -> int:
        return len(self.elevation)

    @property
    def taps(self) -> int:
        return self.impulse_responses.shape[-1]

    def directions(self) -> list[Direction]:
        return [Direction(float(e), float(a)) for e, a in zip(self.elevation, self.azimuth)]

    def quadrature_weights(self) -> np.ndarray:
        if self.weights is not None:
            return self.weights
        return np.full(len(self), 4 * np.pi / len(self))


@dataclass
class SpHrtf:
    coefficients: np.ndarray  # [(order+1)**2, 2, taps//2 + 1] complex
    taps: int
    sample_rate: int

    @property
    def order(self) -> int:
        return int(round(np.sqrt(self.coefficients.shape[0]))) - 1

    def filters(self) -> np.ndarray:
        """Time-domain filters ``[(order+1)**2, 2, taps]``."""
        return np.fft.irfft(self.coefficients, n=self.taps, axis=-1)


def _n3d(clip: AmbisonicClip) -> np.ndarray:
    return convert_normalization(clip, Normalization.N3D).samples


def _convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    method = "direct" if len(h) <= DIRECT_CONV_MAX_TAPS else "fft"
    return sps.convolve(x, h, mode="full", method=method)


def _grid_angles(grid) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    if isinstance(grid, (SphereGrid, HrirSet)):
        w = grid.weights
        return np.asarray(grid.elevation), np.asarray(grid.azimuth), w
    dirs = list(grid)
    return (np.array([d.elevation for d in dirs], dtype=float),
            np.array([d.azimuth for d in dirs], dtype=float), None)


def vls_decode(clip: AmbisonicClip, grid, weights=None) -> np.ndarray:
    """Sampling decoder to loudspeakers at ``grid`` (Directions, SphereGrid or HrirSet).

    Feed j is ``w_j * sum_i A_i(t) y_i(Omega_j)`` with the N3D basis; returns ``[N, L]``.
    Weights default to the grid's own, else uniform ``4 pi / N``.
    """
    elevation, azimuth, grid_w = _grid_angles(grid)
    if elevation.size == 0:
        raise ValueError("loudspeaker grid is empty")
    if weights is None:
        weights = grid_w if grid_w is not None else np.full(elevation.size, 4 * np.pi / elevation.size)
    y = sh_matrix(clip.order, elevation, azimuth, Normalization.N3D)
    return (np.asarray(weights, dtype=float)[:, None] * y) @ _n3d(clip)


def _sum_filtered(feeds: np.ndarray, filters: np.ndarray, length: int) -> np.ndarray:
    out = np.zeros((2, length))
    for j in range(feeds.shape[0]):
        for ear in range(2):
            out[ear] += _convolve(feeds[j], filters[j, ear])
    return out


def vls_render(clip: AmbisonicClip, hrirs: HrirSet, crop: bool = True) -> TimeSignal:
    """Decode to the HRIR directions as virtual loudspeakers and binauralise."""
    if clip.sample_rate != hrirs.sample_rate:
        raise ValueError(f"clip rate {clip.sample_rate} Hz != HRIR rate {hrirs.sample_rate} Hz")
    feeds = vls_decode(clip, hrirs, hrirs.quadrature_weights())
    L = clip.signal.length
    out = _sum_filtered(feeds, hrirs.impulse_responses, L + hrirs.taps - 1)
    return TimeSignal(out[:, :L] if crop else out, clip.sample_rate)


def sft_encode(hrirs: HrirSet, order: int) -> SpHrtf:
    """Quadrature spherical Fourier transform of the HRTF set up to ``order``."""
    n_coef = (order + 1) ** 2
    if len(hrirs) < n_coef:
        raise ValueError(f"{len(hrirs)} directions cannot resolve order {order} ({n_coef} coefficients)")
    H = np.fft.rfft(hrirs.impulse_responses, axis=-1)  # [N, 2, bins]
    y = sh_matrix(order, hrirs.elevation, hrirs.azimuth, Normalization.N3D)  # [N, n_coef]
    coef = np.einsum("j,ji,jeb->ieb", hrirs.quadrature_weights(), y, H)
    return SpHrtf(coef, hrirs.taps, hrirs.sample_rate)


def sphrtf_render(clip: AmbisonicClip, sp: SpHrtf, crop: bool = True) -> TimeSignal:
    """Filter each N3D channel with its sp-HRTF coefficient and sum per ear."""
    if clip.order > sp.order:
        raise ValueError(f"clip order {clip.order} exceeds sp-HRTF order {sp.order}")
    if clip.sample_rate != sp.sample_rate:
        raise ValueError(f"clip rate {clip.sample_rate} Hz != sp-HRTF rate {sp.sample_rate} Hz")
    a = _n3d(clip)
    filters = sp.filters()[: a.shape[0]]
    L = clip.signal.length
    out = _sum_filtered(a, filters, L + sp.taps - 1)
    return TimeSignal(out[:, :L] if crop else out, clip.sample_rate)


def load_hrir_manifest(path) -> HrirSet:
    """Read an HRIR grid: JSON ``{sample_rate, directions: [{elevation_deg, azimuth_deg, weight?, wav_path}]}``."""
    path = Path(path)
    raw = json.loads(path.read_text())
    rate = int(raw["sample_rate"])
    els, azs, irs, ws = [], [], [], []
    for k, d in enumerate(raw["directions"]):
        wav = Path(d["wav_path"])
        sig = read_wav(wav if wav.is_absolute() else path.parent / wav)
        if sig.channels != 2:
            raise ValueError(f"{wav}: HRIR must have 2 channels (left, right), got {sig.channels}")
        if sig.sample_rate != rate:
            raise ValueError(f"{wav}: sample rate {sig.sample_rate} != manifest {rate}")
        els.append(np.radians(d["elevation_deg"]))
        azs.append(np.radians(d["azimuth_deg"]))
        irs.append(sig.samples)
        ws.append(d.get("weight"))
    taps = max(ir.shape[1] for ir in irs)
    irs = np.stack([np.pad(ir, ((0, 0), (0, taps - ir.shape[1]))) for ir in irs])
    if all(w is None for w in ws):
        weights = None
    elif any(w is None for w in ws):
        raise ValueError("either every direction or none must carry a quadrature weight")
    else:
        weights = np.array(ws, dtype=float)
    return HrirSet(np.array(els), np.array(azs), irs, rate, weights)


def save_hrir_manifest(hrirs: HrirSet, path, codec: str = "float32") -> None:
    path = Path(path)
    entries = []
    for j in range(len(hrirs)):
        name = f"{path.stem}_{j:03d}.wav"
        write_wav(TimeSignal(hrirs.impulse_responses[j], hrirs.sample_rate), path.parent / name, codec)
        entry = {
            "elevation_deg": float(np.degrees(hrirs.elevation[j])),
            "azimuth_deg": float(np.degrees(hrirs.azimuth[j])),
            "wav_path": name,
        }
        if hrirs.weights is not None:
            entry["weight"] = float(hrirs.weights[j])
        entries.append(entry)
    path.write_text(json.dumps({"sample_rate": hrirs.sample_rate, "directions": entries}, indent=2) + "\n")
