"""Renderer front-ends: a trained network or one of the conventional baselines."""
from __future__ import annotations

import numpy as np
import torch

from .ambisonics import AmbisonicClip
from .baselines import HrirSet, sft_encode, sphrtf_render, vls_render
from .checkpoint import Checkpoint
from .dsp import TimeSignal, stft
from .features import assemble_input
from .neural import MaskTriplet, build_model, oracle_triplet, reconstruct

__all__ = ["NeuralRenderer", "VlsRenderer", "SpHrtfRenderer", "OracleMaskRenderer"]


class NeuralRenderer:
    """Inference with batch-norm in running-statistics mode."""

    def __init__(self, ckpt: Checkpoint):
        self.spec = ckpt.model_spec
        self.stft = ckpt.stft
        self.model = build_model(self.spec, ckpt.params.clone()).eval()
        self.dtype = next(self.model.parameters()).dtype

    def triplet(self, clip: AmbisonicClip) -> tuple[MaskTriplet, object]:
        spec = stft(clip.signal, self.stft)
        x = torch.as_tensor(assemble_input(spec).planes[None], dtype=self.dtype)
        with torch.no_grad():
            mask, c, s = self.model(x)
        return MaskTriplet(*(t[0].double().numpy() for t in (mask, c, s))), spec

    def __call__(self, clip: AmbisonicClip) -> TimeSignal:
        trip, spec = self.triplet(clip)
        return reconstruct(trip, spec.channel(0), clip.signal.length, clip.sample_rate)


class VlsRenderer:
    def __init__(self, hrirs: HrirSet):
        self.hrirs = hrirs

    def __call__(self, clip: AmbisonicClip) -> TimeSignal:
        return vls_render(clip, self.hrirs)


class SpHrtfRenderer:
    def __init__(self, hrirs: HrirSet, order: int = 1):
        self.sp = sft_encode(hrirs, order)

    def __call__(self, clip: AmbisonicClip) -> TimeSignal:
        return sphrtf_render(clip, self.sp)


class OracleMaskRenderer:
    """Upper bound: triplet computed from the known binaural target."""

    def __init__(self, stft_config):
        self.stft = stft_config

    def __call__(self, pair) -> TimeSignal:
        clip, target = pair
        spec = stft(clip.signal, self.stft)
        trip = oracle_triplet(stft(target, self.stft), spec.channel(0))
        return reconstruct(trip, spec.channel(0), clip.signal.length, clip.sample_rate)
