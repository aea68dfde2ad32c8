"""Mask-and-phase renderers: DNN-4, GRU-4 and UNet.

Every network maps an input feature ``[N, planes, T, F]`` to six raw planes
``[N, 6, T, F]`` laid out as (mask_L, mask_R, cos_L, cos_R, sin_L, sin_R).
The shared head bounds them: the mask goes through a logistic, the phase
pair through tanh followed by joint normalisation onto the unit circle.

The predicted triplet is applied to the omnidirectional spectrogram,
``Y = |M| * |O| * exp(i(angle M + angle O))``, and inverted with the STFT.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np
import torch
from torch import nn
from torch.nn import functional as tF

from .dsp import ComplexSpectrogram, ShapeError, StftConfig, TimeSignal, istft, istft_torch
from .features import InputFeature

__all__ = [
    "NumericError",
    "ModelSpec",
    "Parameters",
    "MaskTriplet",
    "BinauralNet",
    "build_model",
    "init_params",
    "load_params",
    "forward",
    "gradient",
    "reconstruct",
    "reconstruct_torch",
    "oracle_triplet",
    "bounded_head",
]

ARCHITECTURES = ("dnn4", "gru4", "unet")
HEAD_EPS = 1e-8
EARS = 2


class NumericError(FloatingPointError):
    pass


@dataclass
class ModelSpec:
    architecture: str = "gru4"
    in_planes: int = 20
    freq_bins: int = 513
    dnn_widths: tuple[int, ...] = (1024, 1024, 128)
    gru_hidden: int = 1024
    gru_layers: int = 3
    unet_channels: tuple[int, ...] = (32, 64, 128, 256, 384, 384)
    unet_kernel: int = 3
    unet_stride: int = 2
    negative_slope: float = 0.01

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        self.dnn_widths = tuple(int(w) for w in self.dnn_widths)
        self.unet_channels = tuple(int(c) for c in self.unet_channels)
        if self.unet_kernel % 2 == 0:
            raise ValueError("unet_kernel must be odd to keep 'same' padding")

    @property
    def out_planes(self) -> int:
        return 3 * EARS

    @property
    def unet_multiple(self) -> int:
        return self.unet_stride ** len(self.unet_channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dnn_widths"] = list(self.dnn_widths)
        d["unet_channels"] = list(self.unet_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


@dataclass
class Parameters:
    """Named trainable tensors plus batch-norm running statistics."""

    tensors: dict[str, torch.Tensor]
    buffers: dict[str, torch.Tensor] = field(default_factory=dict)
    seed: int | None = None

    def clone(self) -> "Parameters":
        return Parameters(
            {k: v.detach().clone() for k, v in self.tensors.items()},
            {k: v.detach().clone() for k, v in self.buffers.items()},
            self.seed,
        )

    def to(self, dtype: torch.dtype) -> "Parameters":
        cast = lambda t: t.to(dtype) if t.is_floating_point() else t.clone()
        return Parameters(
            {k: cast(v) for k, v in self.tensors.items()},
            {k: cast(v) for k, v in self.buffers.items()},
            self.seed,
        )

    def numel(self) -> int:
        return sum(t.numel() for t in self.tensors.values())


@dataclass
class MaskTriplet:
    """Per-ear magnitude mask and unit phase offset, each ``[..., 2, T, F]``."""

    mask: np.ndarray
    cos_phase: np.ndarray
    sin_phase: np.ndarray

    @property
    def angle(self) -> np.ndarray:
        return np.arctan2(self.sin_phase, self.cos_phase)

    @classmethod
    def from_angle(cls, mask, angle) -> "MaskTriplet":
        return cls(np.asarray(mask, float), np.cos(angle), np.sin(angle))


def bounded_head(raw: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Split ``[N, 6, T, F]`` raw planes into (mask, cos, sin), each ``[N, 2, T, F]``."""
    mask = torch.sigmoid(raw[:, 0:EARS])
    c = torch.tanh(raw[:, EARS : 2 * EARS])
    s = torch.tanh(raw[:, 2 * EARS : 3 * EARS])
    # eps floors the norm instead of biasing it, so the pair is exactly unit
    # length everywhere except in an eps-ball around the origin
    norm = torch.sqrt((c * c + s * s).clamp_min(HEAD_EPS * HEAD_EPS))
    return mask, c / norm, s / norm


def _check_finite(x: torch.Tensor, where: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NumericError(f"non-finite activations after {where}")
    return x


class DNN4(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        widths = (spec.in_planes * spec.freq_bins, *spec.dnn_widths, spec.out_planes * spec.freq_bins)
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(widths[:-1], widths[1:]))
        self.slope = spec.negative_slope
        self.spec = spec

    def forward(self, x):
        n, p, t, f = x.shape
        h = x.permute(0, 2, 1, 3).reshape(n, t, p * f)
        for k, layer in enumerate(self.layers):
            h = layer(h)
            if k < len(self.layers) - 1:
                h = tF.leaky_relu(h, self.slope)
            _check_finite(h, f"dnn4 layer {k}")
        return h.reshape(n, t, self.spec.out_planes, f).permute(0, 2, 1, 3)


class GRU4(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.gru = nn.GRU(
            spec.in_planes * spec.freq_bins,
            spec.gru_hidden,
            num_layers=spec.gru_layers,
            batch_first=True,
            bidirectional=True,
        )
        self.proj = nn.Linear(2 * spec.gru_hidden, spec.out_planes * spec.freq_bins)
        self.spec = spec

    def forward(self, x):
        n, p, t, f = x.shape
        h = x.permute(0, 2, 1, 3).reshape(n, t, p * f)
        h, _ = self.gru(h)
        _check_finite(h, "gru4 recurrent stack")
        h = _check_finite(self.proj(h), "gru4 projection")
        return h.reshape(n, t, self.spec.out_planes, f).permute(0, 2, 1, 3)


class ConvBlock(nn.Module):
    def __init__(self, c_in, c_out, k, slope):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, k, padding=k // 2, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, k, padding=k // 2, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.slope = slope

    def forward(self, x):
        x = tF.leaky_relu(self.bn1(self.conv1(x)), self.slope)
        return tF.leaky_relu(self.bn2(self.conv2(x)), self.slope)


class EncoderBlock(nn.Module):
    def __init__(self, c_in, c_out, k, s, slope):
        super().__init__()
        self.conv = ConvBlock(c_in, c_out, k, slope)
        self.pool = nn.AvgPool2d(s)

    def forward(self, x):
        skip = self.conv(x)
        return self.pool(skip), skip


class DecoderBlock(nn.Module):
    def __init__(self, c_in, c_out, k, s, slope):
        super().__init__()
        self.up = nn.ConvTranspose2d(c_in, c_out, kernel_size=s, stride=s)
        self.conv = ConvBlock(2 * c_out, c_out, k, slope)

    def forward(self, x, skip):
        return self.conv(torch.cat([self.up(x), skip], dim=1))


class UNet(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        k, s, slope = spec.unet_kernel, spec.unet_stride, spec.negative_slope
        chans = spec.unet_channels
        ins = (spec.in_planes, *chans[:-1])
        self.encoders = nn.ModuleList(EncoderBlock(a, b, k, s, slope) for a, b in zip(ins, chans))
        dec_in = (chans[-1], *chans[::-1][:-1])
        self.decoders = nn.ModuleList(
            DecoderBlock(a, b, k, s, slope) for a, b in zip(dec_in, chans[::-1])
        )
        self.final = ConvBlock(chans[0], chans[0], k, slope)
        self.out = nn.Conv2d(chans[0], spec.out_planes, 1)
        self.spec = spec

    def forward(self, x):
        t, f = x.shape[-2:]
        mult = self.spec.unet_multiple
        x = tF.pad(x, (0, -f % mult, 0, -t % mult))
        skips = []
        for i, enc in enumerate(self.encoders):
            x, skip = enc(x)
            skips.append(skip)
            _check_finite(x, f"unet encoder {i}")
        for i, (dec, skip) in enumerate(zip(self.decoders, reversed(skips))):
            x = _check_finite(dec(x, skip), f"unet decoder {i}")
        x = self.out(self.final(x))
        return _check_finite(x, "unet output")[..., :t, :f]


_NETS = {"dnn4": DNN4, "gru4": GRU4, "unet": UNet}


class BinauralNet(nn.Module):
    """Backbone plus the bounded mask/phase head."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.backbone = _NETS[spec.architecture](spec)

    def forward(self, x: torch.Tensor):
        if x.ndim != 4 or x.shape[1] != self.spec.in_planes or x.shape[3] != self.spec.freq_bins:
            raise ShapeError(
                f"expected input [N, {self.spec.in_planes}, T, {self.spec.freq_bins}], got {tuple(x.shape)}"
            )
        return bounded_head(self.backbone(x))


def _fan_in(module: nn.Module, shape) -> int:
    if isinstance(module, nn.ConvTranspose2d):
        # kernel == stride: every output pixel sees exactly c_in inputs
        return shape[0] * math.prod(shape[2:]) // math.prod(module.stride)
    return math.prod(shape[1:])


def _skeleton(spec: ModelSpec) -> BinauralNet:
    with torch.device("meta"):
        return BinauralNet(spec)


def build_model(spec: ModelSpec, params: Parameters) -> BinauralNet:
    """Module whose tensors *are* ``params`` (no copy); clone first to keep ``params`` intact."""
    model = _skeleton(spec)
    load_params(model, params)
    return model


def load_params(model: nn.Module, params: Parameters) -> None:
    state = {**params.tensors, **params.buffers}
    try:
        model.load_state_dict(state, strict=True, assign=True)
    except RuntimeError as exc:
        raise ShapeError(f"parameters do not match the model: {exc}") from None


def init_params(spec: ModelSpec, seed: int, dtype=torch.float32) -> Parameters:
    """Weights ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)), biases zero, batch-norm at identity.

    Draws happen in float64 in ``named_parameters`` order, so the same seed
    gives the same values (up to rounding) for every dtype.
    """
    model = _skeleton(spec)
    owners = dict(model.named_modules())
    gen = torch.Generator().manual_seed(int(seed))
    tensors = {}
    for name, p in model.named_parameters():
        owner = owners[name.rpartition(".")[0]]
        leaf = name.rpartition(".")[2]
        if isinstance(owner, nn.BatchNorm2d):
            value = torch.ones(p.shape) if leaf == "weight" else torch.zeros(p.shape)
        elif "bias" in leaf:
            value = torch.zeros(p.shape)
        else:
            bound = math.sqrt(1.0 / _fan_in(owner, p.shape))
            value = (torch.rand(p.shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound
        tensors[name] = value.to(dtype)
    buffers = {}
    for name, b in model.named_buffers():
        if name.endswith("num_batches_tracked"):
            buffers[name] = torch.zeros((), dtype=torch.long)
        elif name.endswith("running_var"):
            buffers[name] = torch.ones(b.shape, dtype=dtype)
        else:
            buffers[name] = torch.zeros(b.shape, dtype=dtype)
    return Parameters(tensors, buffers, seed)


def _feature_tensor(feature, dtype) -> torch.Tensor:
    planes = feature.planes if isinstance(feature, InputFeature) else feature
    x = torch.as_tensor(np.asarray(planes) if not torch.is_tensor(planes) else planes, dtype=dtype)
    return x[None] if x.ndim == 3 else x


def _dtype_of(params: Parameters) -> torch.dtype:
    return next(iter(params.tensors.values())).dtype


def forward(spec: ModelSpec, params: Parameters, feature, training: bool = False) -> MaskTriplet:
    """Evaluate the network on one feature ``[P, T, F]`` (or a batch ``[N, P, T, F]``).

    ``training=True`` uses batch statistics in batch-norm; the caller's
    running statistics are never modified.
    """
    dtype = _dtype_of(params)
    model = build_model(spec, params.clone())
    model.train(training)
    x = _feature_tensor(feature, dtype)
    single = not torch.is_tensor(feature) and np.ndim(getattr(feature, "planes", feature)) == 3
    with torch.no_grad():
        mask, c, s = model(x)
    out = [t.double().numpy() for t in (mask, c, s)]
    if single:
        out = [o[0] for o in out]
    return MaskTriplet(*out)


def gradient(
    spec: ModelSpec,
    params: Parameters,
    feature,
    loss_closure: Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor],
    training: bool = True,
) -> dict[str, torch.Tensor]:
    """Reverse-mode gradient of ``loss_closure(mask, cos, sin)`` w.r.t. every parameter.

    The closure receives batched ``[N, 2, T, F]`` tensors and returns a scalar.
    Parameters the loss does not reach get exact zeros.
    """
    dtype = _dtype_of(params)
    model = build_model(spec, params.clone())
    model.train(training)
    x = _feature_tensor(feature, dtype)
    loss = loss_closure(*model(x))
    names = [n for n, _ in model.named_parameters()]
    leaves = [p for _, p in model.named_parameters()]
    if not torch.is_tensor(loss) or not loss.requires_grad:
        return {n: torch.zeros_like(p) for n, p in zip(names, leaves)}
    grads = torch.autograd.grad(loss, leaves, allow_unused=True)
    out = {}
    for n, p, g in zip(names, leaves, grads):
        g = torch.zeros_like(p) if g is None else g
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {n}")
        out[n] = g.detach()
    return out


def reconstruct(triplet: MaskTriplet, omni_spec: ComplexSpectrogram, out_length: int,
                sample_rate: int = 48000) -> TimeSignal:
    """Apply the triplet to the omni spectrogram and invert, giving a 2-channel signal."""
    omni = omni_spec.bins[0] if omni_spec.bins.ndim == 3 else omni_spec.bins
    if triplet.mask.shape != (EARS, *omni.shape):
        raise ShapeError(f"triplet {triplet.mask.shape} does not match omni {omni.shape}")
    mag = triplet.mask * np.abs(omni)[None]
    phase = triplet.angle + np.angle(omni)[None]
    bins = mag * np.exp(1j * phase)
    return istft(ComplexSpectrogram(bins, omni_spec.config), out_length, sample_rate)


def reconstruct_torch(mask, cos_phase, sin_phase, omni_bins: torch.Tensor, config: StftConfig,
                      out_length: int) -> torch.Tensor:
    """Batched, differentiable reconstruction: omni ``[N, T, F]`` complex -> ``[N, 2, out_length]``.

    Uses ``O * (cos + i sin)`` which equals ``|O| exp(i(angle M + angle O))``
    whenever (cos, sin) lies on the unit circle, and avoids atan2.
    """
    rot = torch.complex(cos_phase, sin_phase)
    bins = mask * omni_bins[:, None] * rot
    return istft_torch(bins, config, out_length)


def oracle_triplet(target: ComplexSpectrogram, omni_spec: ComplexSpectrogram) -> MaskTriplet:
    """Best triplet for a known binaural spectrogram: clipped magnitude ratio and phase offset."""
    omni = omni_spec.bins[0]
    mag_o = np.abs(omni)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mag_o > 0, np.abs(target.bins) / mag_o, 0.0)
    return MaskTriplet.from_angle(np.clip(ratio, 0.0, 1.0), np.angle(target.bins) - np.angle(omni)[None])
