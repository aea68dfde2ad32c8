"""Versioned checkpoint container.

Layout::

    magic    8 bytes   b"AMBIBIN\\0"
    version  uint32 LE
    hdr_len  uint64 LE
    header   hdr_len bytes of UTF-8 JSON (sorted keys)
    payload  raw little-endian tensors, in header order

The header holds the model spec, STFT config, training step and metadata,
plus ``name / group / dtype / shape / offset`` for every tensor.  Groups are
``param`` and ``buffer`` (model state) and ``adam_m`` / ``adam_v`` (optimiser
moments).  Writing then reading reproduces every tensor bit for bit.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dsp import StftConfig
from .neural import ModelSpec, Parameters

__all__ = ["Checkpoint", "AdamState", "save_checkpoint", "load_checkpoint", "CheckpointError", "FORMAT_VERSION"]

MAGIC = b"AMBIBIN\0"
FORMAT_VERSION = 1
_DTYPES = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8"}


class CheckpointError(ValueError):
    pass


@dataclass
class AdamState:
    step: int
    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]

    @classmethod
    def zeros_like(cls, tensors: dict[str, torch.Tensor]) -> "AdamState":
        return cls(0, {k: torch.zeros_like(t) for k, t in tensors.items()},
                   {k: torch.zeros_like(t) for k, t in tensors.items()})


@dataclass
class Checkpoint:
    model_spec: ModelSpec
    stft: StftConfig
    params: Parameters
    optimizer: AdamState | None = None
    step: int = 0
    meta: dict = field(default_factory=dict)


def _blob(t: torch.Tensor) -> tuple[str, bytes]:
    try:
        dtype = _DTYPES[t.dtype]
    except KeyError:
        raise CheckpointError(f"cannot serialise dtype {t.dtype}") from None
    return dtype, np.ascontiguousarray(t.detach().cpu().numpy()).astype(dtype, copy=False).tobytes()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    groups = [("param", ckpt.params.tensors), ("buffer", ckpt.params.buffers)]
    if ckpt.optimizer is not None:
        groups += [("adam_m", ckpt.optimizer.m), ("adam_v", ckpt.optimizer.v)]
    index, chunks, offset = [], [], 0
    for group, tensors in groups:
        for name, t in tensors.items():
            dtype, data = _blob(t)
            index.append({"group": group, "name": name, "dtype": dtype,
                          "shape": list(t.shape), "offset": offset, "nbytes": len(data)})
            chunks.append(data)
            offset += len(data)
    header = {
        "model_spec": ckpt.model_spec.to_dict(),
        "stft": ckpt.stft.to_dict(),
        "step": int(ckpt.step),
        "seed": ckpt.params.seed,
        "optimizer_step": None if ckpt.optimizer is None else int(ckpt.optimizer.step),
        "meta": ckpt.meta,
        "tensors": index,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(head)))
        f.write(head)
        for chunk in chunks:
            f.write(chunk)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 20:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20 : 20 + hlen].decode("utf-8"))
    base = 20 + hlen
    groups: dict[str, dict[str, torch.Tensor]] = {"param": {}, "buffer": {}, "adam_m": {}, "adam_v": {}}
    for item in header["tensors"]:
        start = base + item["offset"]
        if start + item["nbytes"] > len(raw):
            raise CheckpointError(f"{path}: truncated payload at {item['name']}")
        arr = np.frombuffer(raw, dtype=item["dtype"], count=item["nbytes"] // np.dtype(item["dtype"]).itemsize,
                            offset=start).reshape(item["shape"])
        groups[item["group"]][item["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    params = Parameters(groups["param"], groups["buffer"], header.get("seed"))
    optimizer = None
    if header.get("optimizer_step") is not None:
        optimizer = AdamState(header["optimizer_step"], groups["adam_m"], groups["adam_v"])
    return Checkpoint(
        ModelSpec.from_dict(header["model_spec"]),
        StftConfig.from_dict(header["stft"]),
        params,
        optimizer,
        header["step"],
        header.get("meta", {}),
    )
