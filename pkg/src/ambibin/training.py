"""Loss, optimiser, clip pipeline and the training loop.

Every random choice in training (clip order, mixing partners) is drawn from a
generator keyed on ``(seed, step)``, so a run resumed from a checkpoint at step
``s`` replays exactly the batches the uninterrupted run would have seen.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
import torch

from .ambisonics import AmbisonicClip
from .checkpoint import AdamState, Checkpoint, save_checkpoint
from .dsp import ShapeError, StftConfig, TimeSignal, stft, stft_torch
from .features import assemble_input, feature_plane_count
from .neural import ModelSpec, NumericError, Parameters, build_model, init_params, reconstruct_torch

log = logging.getLogger(__name__)

__all__ = [
    "LossConfig",
    "AdamConfig",
    "TrainConfig",
    "ClipPair",
    "loss",
    "loss_torch",
    "adam_step",
    "make_clips",
    "mix_clip",
    "mix_augment",
    "prepare_example",
    "batch_indices",
    "train",
]


@dataclass
class LossConfig:
    gamma: float = 1.0
    norm: str = "L1"
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if not math.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"gamma must be finite and non-negative, got {self.gamma}")
        if self.norm not in ("L1", "L2"):
            raise ValueError(f"norm must be 'L1' or 'L2', got {self.norm!r}")


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _distance(diff: torch.Tensor, norm: str) -> torch.Tensor:
    mag = diff.abs()
    return mag.mean() if norm == "L1" else (mag * mag).mean()


def loss_torch(pred: torch.Tensor, target: torch.Tensor, cfg: LossConfig,
               time_weight: float = 1.0) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Returns ``(total, wav_term, spectral_term)``; total = time_weight * wav + gamma * spectral.

    The spectral term is the mean complex modulus ``|STFT(pred) - STFT(target)|``.
    ``time_weight`` exists only to express the spectral-only ablation.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    wav = _distance(pred - target, cfg.norm)
    if cfg.gamma == 0:
        sp = torch.zeros((), dtype=pred.dtype)
    else:
        sp = _distance(stft_torch(pred, cfg.stft) - stft_torch(target, cfg.stft), cfg.norm)
    return time_weight * wav + cfg.gamma * sp, wav, sp


def loss(pred: TimeSignal, target: TimeSignal, cfg: LossConfig | None = None) -> tuple[float, dict]:
    cfg = cfg or LossConfig()
    total, wav, sp = loss_torch(torch.from_numpy(pred.samples), torch.from_numpy(target.samples), cfg)
    return float(total), {"wav": float(wav), "sp": float(sp)}


def adam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: AdamState,
              hyper: AdamConfig | None = None) -> tuple[dict[str, torch.Tensor], AdamState]:
    """One bias-corrected Adam update; returns new tensors and state, inputs untouched."""
    hyper = hyper or AdamConfig()
    bad = [k for k, g in grads.items() if not torch.isfinite(g).all()]
    if bad:
        raise NumericError(f"non-finite gradients for {', '.join(bad)}")
    t = state.step + 1
    c1 = 1.0 - hyper.beta1 ** t
    c2 = 1.0 - hyper.beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {k} has shape {tuple(g.shape)}, parameter {tuple(p.shape)}")
        m = hyper.beta1 * state.m[k] + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * state.v[k] + (1.0 - hyper.beta2) * g * g
        new_p[k] = p - hyper.lr * (m / c1) / ((v / c2).sqrt() + hyper.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(t, new_m, new_v)


@dataclass
class ClipPair:
    ambisonic: AmbisonicClip
    binaural: TimeSignal
    ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.binaural.channels != 2:
            raise ShapeError(f"binaural signal needs 2 channels, got {self.binaural.channels}")
        if self.ambisonic.signal.length != self.binaural.length:
            raise ShapeError(
                f"ambisonic ({self.ambisonic.signal.length}) and binaural ({self.binaural.length}) lengths differ"
            )
        if self.ambisonic.sample_rate != self.binaural.sample_rate:
            raise ValueError("ambisonic and binaural sample rates differ")

    @property
    def sample_rate(self) -> int:
        return self.binaural.sample_rate


def make_clips(pair: ClipPair, clip_seconds: float = 3.0) -> list[ClipPair]:
    """Cut into consecutive non-overlapping clips; the trailing remainder is dropped."""
    n = int(round(clip_seconds * pair.sample_rate))
    total = pair.binaural.length
    if n <= 0 or total < n:
        raise ValueError(f"{total} samples is shorter than one {clip_seconds} s clip")
    base = pair.ids[0] if pair.ids else "clip"
    out = []
    for k in range(total // n):
        sl = slice(k * n, (k + 1) * n)
        amb = AmbisonicClip(
            TimeSignal(pair.ambisonic.samples[:, sl], pair.sample_rate),
            pair.ambisonic.order,
            pair.ambisonic.normalization,
        )
        out.append(ClipPair(amb, TimeSignal(pair.binaural.samples[:, sl], pair.sample_rate), (f"{base}@{k}",)))
    return out


def mix_clip(clips: Sequence[ClipPair], index: int, k: int, rng: np.random.Generator,
             rescale: bool = False) -> ClipPair:
    """Sum clip ``index`` with ``k`` distinct other clips drawn uniformly.

    Summation runs in constituent order (base first), which is the order
    recorded in ``ids``.  ``rescale`` divides the sums by ``k + 1``.
    """
    n = len(clips)
    if k >= n:
        raise ValueError(f"cannot mix {k} partners from {n} clips")
    if k == 0:
        return clips[index]
    others = rng.choice(n - 1, size=k, replace=False)
    others = [int(o) + (o >= index) for o in others]
    members = [clips[index]] + [clips[o] for o in others]
    amb = members[0].ambisonic.samples.copy()
    bin_ = members[0].binaural.samples.copy()
    for m in members[1:]:
        amb += m.ambisonic.samples
        bin_ += m.binaural.samples
    if rescale:
        amb /= k + 1
        bin_ /= k + 1
    base = members[0].ambisonic
    ids = tuple(i for m in members for i in m.ids)
    return ClipPair(
        AmbisonicClip(TimeSignal(amb, base.sample_rate), base.order, base.normalization),
        TimeSignal(bin_, members[0].sample_rate),
        ids,
    )


def mix_augment(clips: Sequence[ClipPair], k: int, rng: np.random.Generator,
                rescale: bool = False) -> Iterator[ClipPair]:
    """Yield one mixture per clip, in clip order."""
    if k >= len(clips):
        raise ValueError(f"cannot mix {k} partners from {len(clips)} clips")
    for i in range(len(clips)):
        yield mix_clip(clips, i, k, rng, rescale)


@dataclass
class TrainConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    batch_size: int = 16
    steps: int = 100_000
    clip_seconds: float = 3.0
    mix_k: int = 0
    mix_rescale: bool = False
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0
    grad_clip: float | None = None
    time_weight: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.mix_k < 0:
            raise ValueError("mix_k must be >= 0")

    @property
    def stft(self) -> StftConfig:
        return self.loss.stft

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["loss"] = {"gamma": self.loss.gamma, "norm": self.loss.norm, "stft": self.loss.stft.to_dict()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelSpec.from_dict(d.pop("model", {}))
        loss_d = dict(d.pop("loss", {}))
        stft_cfg = StftConfig.from_dict(loss_d.pop("stft", {}))
        adam = AdamConfig(**d.pop("adam", {}))
        return cls(model=model, loss=LossConfig(stft=stft_cfg, **loss_d), adam=adam, **d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def prepare_example(pair: ClipPair, config: StftConfig) -> dict[str, np.ndarray]:
    """Network input, omni spectrogram and target waveform for one clip pair."""
    spec = stft(pair.ambisonic.signal, config)
    return {
        "feature": assemble_input(spec).planes.astype(np.float32),
        "omni": spec.bins[0].astype(np.complex64),
        "target": pair.binaural.samples.astype(np.float32),
    }


def batch_indices(n_clips: int, batch_size: int, seed: int, step: int) -> list[int]:
    """Clip indices for ``step``: walk per-epoch permutations keyed on ``(seed, epoch)``."""
    out = []
    for b in range(batch_size):
        pos = step * batch_size + b
        epoch, offset = divmod(pos, n_clips)
        perm = np.random.default_rng([seed, 1, epoch]).permutation(n_clips)
        out.append(int(perm[offset]))
    return out


def _grad_norm_clip(grads: dict[str, torch.Tensor], max_norm: float) -> dict[str, torch.Tensor]:
    total = torch.sqrt(sum((g.double() ** 2).sum() for g in grads.values()))
    scale = min(1.0, max_norm / (float(total) + 1e-12))
    return grads if scale >= 1.0 else {k: g * scale for k, g in grads.items()}


def _check_model_matches(spec: ModelSpec, clips: Sequence[ClipPair]):
    planes = feature_plane_count(clips[0].ambisonic.signal.channels)
    if planes != spec.in_planes:
        raise ShapeError(f"clips give {planes} input planes, model expects {spec.in_planes}")


def train(
    config: TrainConfig,
    clips: Sequence[ClipPair],
    resume: Checkpoint | None = None,
    checkpoint_dir=None,
    on_log: Callable[[dict], None] | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Run forward -> loss -> gradient -> Adam for ``config.steps`` steps.

    Returns the final checkpoint and the metric log (records
    ``{step, loss_wav, loss_sp, loss_total}`` every ``log_every`` steps and at
    the last step).
    """
    if not clips:
        raise ValueError("training split is empty")
    if config.stft.freq_bins != config.model.freq_bins:
        raise ShapeError(
            f"model expects {config.model.freq_bins} bins, STFT gives {config.stft.freq_bins}"
        )
    _check_model_matches(config.model, clips)
    torch.use_deterministic_algorithms(True)

    if resume is not None:
        if resume.model_spec != config.model:
            raise ValueError("checkpoint model spec does not match the training config")
        params, opt, start = resume.params.clone(), resume.optimizer, resume.step
        if opt is None:
            raise ValueError("checkpoint carries no optimiser state; cannot resume")
        opt = AdamState(opt.step, {k: v.clone() for k, v in opt.m.items()}, {k: v.clone() for k, v in opt.v.items()})
    else:
        params = init_params(config.model, config.seed, torch.float32)
        opt = AdamState.zeros_like(params.tensors)
        start = 0
    model = build_model(config.model, params)
    model.train(True)
    names = list(params.tensors)

    cache: dict[int, dict] = {}

    def example(pair_index: int, step: int, slot: int) -> dict:
        if config.mix_k == 0:
            if pair_index not in cache:
                cache[pair_index] = prepare_example(clips[pair_index], config.stft)
            return cache[pair_index]
        rng = np.random.default_rng([config.seed, 2, step, slot])
        mixed = mix_clip(clips, pair_index, config.mix_k, rng, config.mix_rescale)
        return prepare_example(mixed, config.stft)

    meta = {"train_config": config.to_dict(), "clips": len(clips)}
    records: list[dict] = []
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    length = clips[0].binaural.length

    for step in range(start, config.steps):
        batch = [example(i, step, b) for b, i in enumerate(batch_indices(len(clips), config.batch_size, config.seed, step))]
        x = torch.from_numpy(np.stack([e["feature"] for e in batch]))
        omni = torch.from_numpy(np.stack([e["omni"] for e in batch]))
        target = torch.from_numpy(np.stack([e["target"] for e in batch]))
        try:
            mask, c, s = model(x)
            pred = reconstruct_torch(mask, c, s, omni, config.stft, length)
            total, wav, sp = loss_torch(pred, target, config.loss, config.time_weight)
            wav, sp = wav.detach(), sp.detach()
            grads = torch.autograd.grad(total, [model.get_parameter(n) for n in names])
            grads = dict(zip(names, grads))
            if config.grad_clip:
                grads = _grad_norm_clip(grads, config.grad_clip)
            current = {n: model.get_parameter(n).detach() for n in names}
            new_params, opt = adam_step(current, grads, opt, config.adam)
        except NumericError as exc:
            raise NumericError(f"step {step}: {exc}") from exc
        with torch.no_grad():
            for n in names:
                model.get_parameter(n).copy_(new_params[n])

        done = step + 1
        if step % config.log_every == 0 or done == config.steps:
            rec = {"step": step, "loss_wav": wav.item(), "loss_sp": sp.item(), "loss_total": total.item()}
            records.append(rec)
            log.info("step %d loss %.6f (wav %.6f, sp %.6f)", step, rec["loss_total"], rec["loss_wav"], rec["loss_sp"])
            if on_log:
                on_log(rec)
        if ckpt_dir and config.checkpoint_every and done % config.checkpoint_every == 0 and done != config.steps:
            save_checkpoint(_snapshot(model, config, opt, done, params.seed, meta), ckpt_dir / f"step_{done:07d}.ckpt")

    final = _snapshot(model, config, opt, config.steps, params.seed, meta)
    if ckpt_dir:
        save_checkpoint(final, ckpt_dir / f"step_{config.steps:07d}.ckpt")
    return final, records


def _snapshot(model, config: TrainConfig, opt: AdamState, step: int, seed, meta) -> Checkpoint:
    tensors = {n: p.detach().clone() for n, p in model.named_parameters()}
    buffers = {n: b.detach().clone() for n, b in model.named_buffers()}
    opt_copy = AdamState(opt.step, {k: v.clone() for k, v in opt.m.items()}, {k: v.clone() for k, v in opt.v.items()})
    return Checkpoint(config.model, config.stft, Parameters(tensors, buffers, seed), opt_copy, step, dict(meta))
