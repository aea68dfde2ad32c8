"""Objective evaluation: signal-to-distortion ratio and log-spectral distance."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .dsp import ShapeError, StftConfig, TimeSignal, stft

__all__ = ["SDR_CAP_DB", "LSD_FLOOR", "sdr", "lsd", "ClipScore", "EvalReport", "evaluate"]

SDR_CAP_DB = 300.0
LSD_FLOOR = 1e-8


def _as_array(x) -> np.ndarray:
    return x.samples if isinstance(x, TimeSignal) else np.atleast_2d(np.asarray(x, dtype=float))


def _check_shapes(ref, est):
    if ref.shape != est.shape:
        raise ShapeError(f"reference {ref.shape} and estimate {est.shape} differ")


def sdr(ref, est) -> tuple[np.ndarray, float]:
    """Per-channel ``10 log10(sum y^2 / sum (y - y_hat)^2)`` and the channel mean.

    A zero residual gives ``+inf`` for that channel; the mean is capped at
    :data:`SDR_CAP_DB` for reporting.
    """
    y, y_hat = _as_array(ref), _as_array(est)
    _check_shapes(y, y_hat)
    signal = np.sum(y * y, axis=-1)
    if np.any(signal == 0):
        raise ValueError("SDR is undefined for an all-zero reference channel")
    residual = np.sum((y - y_hat) ** 2, axis=-1)
    with np.errstate(divide="ignore"):
        per_channel = 10.0 * np.log10(signal / residual)
    return per_channel, float(np.mean(np.minimum(per_channel, SDR_CAP_DB)))


def lsd(ref, est, config: StftConfig | None = None) -> tuple[np.ndarray, float]:
    """Per-channel log-spectral distance and the channel mean.

    Per frame: RMS over frequency bins of ``10 log10(|Y| / |Y_hat|)`` with both
    magnitudes floored at 1e-8; frames are then averaged.
    """
    config = config or StftConfig()
    y, y_hat = _as_array(ref), _as_array(est)
    _check_shapes(y, y_hat)
    mag = np.maximum(np.abs(stft(y, config).bins), LSD_FLOOR)
    mag_hat = np.maximum(np.abs(stft(y_hat, config).bins), LSD_FLOOR)
    log_ratio = 10.0 * np.log10(mag / mag_hat)
    per_frame = np.sqrt(np.mean(log_ratio ** 2, axis=-1))
    per_channel = per_frame.mean(axis=-1)
    return per_channel, float(per_channel.mean())


@dataclass
class ClipScore:
    clip_id: str
    sdr_db: float
    lsd: float
    sdr_channels: list[float]
    lsd_channels: list[float]


@dataclass
class EvalReport:
    clips: list[ClipScore] = field(default_factory=list)

    @property
    def sdr_db(self) -> float:
        return math.fsum(c.sdr_db for c in self.clips) / len(self.clips)

    @property
    def lsd(self) -> float:
        return math.fsum(c.lsd for c in self.clips) / len(self.clips)

    def to_dict(self) -> dict:
        return {
            "aggregate": {"sdr_db": self.sdr_db, "lsd": self.lsd, "clips": len(self.clips)},
            "clips": [vars(c) for c in self.clips],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        width = max([len("clip")] + [len(c.clip_id) for c in self.clips])
        lines = [f"{'clip':<{width}}  {'SDR [dB]':>9}  {'LSD':>7}"]
        lines += [f"{c.clip_id:<{width}}  {c.sdr_db:9.3f}  {c.lsd:7.4f}" for c in self.clips]
        lines.append(f"{'mean':<{width}}  {self.sdr_db:9.3f}  {self.lsd:7.4f}")
        return "\n".join(lines)


def _capped(values) -> list[float]:
    return [float(min(v, SDR_CAP_DB)) for v in values]


def evaluate(render: Callable, pairs: Iterable, config: StftConfig | None = None) -> EvalReport:
    """Render every ``(clip_id, input, reference)`` triple and score it.

    ``render`` maps the input to a 2-channel :class:`TimeSignal`.
    """
    report = EvalReport()
    for clip_id, source, reference in pairs:
        try:
            estimate = render(source)
        except Exception as exc:
            raise RuntimeError(f"rendering clip {clip_id!r} failed: {exc}") from exc
        s_ch, s = sdr(reference, estimate)
        l_ch, l = lsd(reference, estimate, config)
        report.clips.append(ClipScore(str(clip_id), s, l, _capped(s_ch), [float(v) for v in l_ch]))
    if not report.clips:
        raise ValueError("evaluation split is empty")
    return report
