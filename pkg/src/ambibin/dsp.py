"""Signal containers and the windowed STFT / inverse STFT.

Two implementations of the same framing live here: a float64 numpy path used
for analysis, metrics and the conventional renderers, and a torch path that
is differentiable and used inside the training loss.  Both share
:class:`StftConfig` and produce identical frame layouts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.signal import get_window

__all__ = [
    "TimeSignal",
    "StftConfig",
    "ComplexSpectrogram",
    "InputTooShortError",
    "ShapeError",
    "stft",
    "istft",
    "stft_torch",
    "istft_torch",
    "num_frames",
]

# overlap-add positions whose squared-window sum falls below this are left unscaled
_NOLA_FLOOR = 1e-11


class InputTooShortError(ValueError):
    pass


class ShapeError(ValueError):
    pass


@dataclass
class TimeSignal:
    """Real multichannel signal, ``samples`` is ``[channels, length]``."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2:
            raise ShapeError(f"samples must be [channels, length], got shape {x.shape}")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise ShapeError(f"empty signal of shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("signal contains non-finite samples")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        self.samples = x
        self.sample_rate = int(self.sample_rate)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    window_length: int = 1024
    hop: int = 512
    fft_size: int = 1024
    window_kind: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop <= self.window_length <= self.fft_size:
            raise ValueError(
                "need 0 < hop <= window_length <= fft_size, got "
                f"hop={self.hop} window_length={self.window_length} fft_size={self.fft_size}"
            )
        if self.window_kind != "hann":
            raise ValueError(f"unsupported window kind {self.window_kind!r}")
        # periodic Hann overlap-adds to a constant iff the overlap factor is an integer >= 2
        if self.window_length % self.hop or self.window_length // self.hop < 2:
            raise ValueError(
                f"hann window of length {self.window_length} is not COLA at hop {self.hop}"
            )

    @property
    def freq_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window(self) -> np.ndarray:
        return get_window(self.window_kind, self.window_length, fftbins=True).astype(np.float64)

    def to_dict(self) -> dict:
        return {
            "window_length": self.window_length,
            "hop": self.hop,
            "fft_size": self.fft_size,
            "window_kind": self.window_kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StftConfig":
        return cls(**d)


@dataclass
class ComplexSpectrogram:
    """One-sided complex STFT, ``bins`` is ``[channels, frames, freq_bins]``."""

    bins: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        b = np.asarray(self.bins)
        if b.ndim == 2:
            b = b[None]
        if b.ndim != 3:
            raise ShapeError(f"bins must be [channels, frames, freq_bins], got {b.shape}")
        if b.shape[2] != self.config.freq_bins:
            raise ShapeError(
                f"{b.shape[2]} frequency bins do not match fft_size {self.config.fft_size}"
            )
        self.bins = b.astype(np.complex128, copy=False)

    @property
    def channels(self) -> int:
        return self.bins.shape[0]

    @property
    def frames(self) -> int:
        return self.bins.shape[1]

    def channel(self, i: int) -> "ComplexSpectrogram":
        return ComplexSpectrogram(self.bins[i : i + 1], self.config)


def num_frames(length: int, config: StftConfig) -> int:
    """Frame count for a signal of ``length`` samples under centre padding."""
    return 1 + math.ceil(length / config.hop)


def _padding(length: int, config: StftConfig) -> tuple[int, int]:
    left = config.window_length // 2
    padded = config.window_length + config.hop * (num_frames(length, config) - 1)
    return left, padded - length - left


def stft(signal: TimeSignal | np.ndarray, config: StftConfig | None = None) -> ComplexSpectrogram:
    config = config or StftConfig()
    x = signal.samples if isinstance(signal, TimeSignal) else np.atleast_2d(np.asarray(signal, float))
    if x.shape[-1] < config.window_length:
        raise InputTooShortError(
            f"signal of {x.shape[-1]} samples is shorter than one window ({config.window_length})"
        )
    left, right = _padding(x.shape[-1], config)
    xp = np.pad(x, ((0, 0), (left, right)))
    frames = np.lib.stride_tricks.sliding_window_view(xp, config.window_length, axis=-1)
    frames = frames[:, :: config.hop] * config.window()
    bins = np.fft.rfft(frames, n=config.fft_size, axis=-1)
    return ComplexSpectrogram(bins, config)


def _ola_norm(n_frames: int, config: StftConfig) -> np.ndarray:
    w2 = config.window() ** 2
    total = config.window_length + config.hop * (n_frames - 1)
    norm = np.zeros(total)
    for t in range(n_frames):
        norm[t * config.hop : t * config.hop + config.window_length] += w2
    norm[norm < _NOLA_FLOOR] = 1.0
    return norm


def istft(spec: ComplexSpectrogram, out_length: int, sample_rate: int = 48000) -> TimeSignal:
    """Weighted overlap-add inverse of :func:`stft`, cut or zero-padded to ``out_length``."""
    config = spec.config
    bins = spec.bins
    if bins.shape[-1] != config.freq_bins:
        raise ShapeError(f"{bins.shape[-1]} bins inconsistent with fft_size {config.fft_size}")
    n_ch, n_frames, _ = bins.shape
    frames = np.fft.irfft(bins, n=config.fft_size, axis=-1)[..., : config.window_length]
    frames = frames * config.window()
    total = config.window_length + config.hop * (n_frames - 1)
    out = np.zeros((n_ch, total))
    for t in range(n_frames):
        out[:, t * config.hop : t * config.hop + config.window_length] += frames[:, t]
    out /= _ola_norm(n_frames, config)
    left = config.window_length // 2
    out = out[:, left : left + out_length]
    if out.shape[1] < out_length:
        out = np.pad(out, ((0, 0), (0, out_length - out.shape[1])))
    return TimeSignal(out, sample_rate)


def _torch_window(config: StftConfig, like: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(config.window(), dtype=like.dtype, device=like.device)


def stft_torch(x: torch.Tensor, config: StftConfig) -> torch.Tensor:
    """Differentiable STFT of ``[..., length]`` real input -> ``[..., frames, freq_bins]`` complex."""
    length = x.shape[-1]
    if length < config.window_length:
        raise InputTooShortError(
            f"signal of {length} samples is shorter than one window ({config.window_length})"
        )
    left, right = _padding(length, config)
    xp = torch.nn.functional.pad(x, (left, right))
    frames = xp.unfold(-1, config.window_length, config.hop) * _torch_window(config, x)
    return torch.fft.rfft(frames, n=config.fft_size, dim=-1)


def istft_torch(bins: torch.Tensor, config: StftConfig, out_length: int) -> torch.Tensor:
    """Differentiable inverse of :func:`stft_torch`; ``[..., frames, freq_bins]`` -> ``[..., out_length]``."""
    if bins.shape[-1] != config.freq_bins:
        raise ShapeError(f"{bins.shape[-1]} bins inconsistent with fft_size {config.fft_size}")
    n_frames = bins.shape[-2]
    frames = torch.fft.irfft(bins, n=config.fft_size, dim=-1)[..., : config.window_length]
    frames = frames * _torch_window(config, frames)
    lead = frames.shape[:-2]
    total = config.window_length + config.hop * (n_frames - 1)
    # fold performs the overlap-add: [N, C*k, L] columns -> [N, C, 1, total]
    cols = frames.reshape(-1, n_frames, config.window_length).transpose(1, 2)
    out = torch.nn.functional.fold(
        cols, output_size=(1, total), kernel_size=(1, config.window_length), stride=(1, config.hop)
    ).reshape(*lead, total)
    norm = torch.as_tensor(_ola_norm(n_frames, config), dtype=out.dtype, device=out.device)
    out = out / norm
    left = config.window_length // 2
    out = out[..., left : left + out_length]
    if out.shape[-1] < out_length:
        out = torch.nn.functional.pad(out, (0, out_length - out.shape[-1]))
    return out
