"""WAV ingestion/emission and the paired-dataset manifest."""
from __future__ import annotations

import json
import logging
import os
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io.wavfile

from .dsp import TimeSignal

log = logging.getLogger(__name__)

__all__ = [
    "WavError",
    "ManifestError",
    "read_wav",
    "write_wav",
    "ManifestEntry",
    "DatasetManifest",
    "load_manifest",
    "save_manifest",
    "scan_pairs",
]

CODECS = ("float32", "pcm16", "pcm24")


class WavError(ValueError):
    pass


class ManifestError(ValueError):
    """Raised with every violation found, one per line."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


def read_wav(path) -> TimeSignal:
    """Read PCM16/PCM24/float32 RIFF-WAVE into a float signal in [-1, 1]."""
    path = Path(path)
    try:
        rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, struct.error, EOFError, OSError) as exc:
        raise WavError(f"{path}: cannot parse WAV ({exc})") from exc
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit samples into int32
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise WavError(f"{path}: unsupported sample format {data.dtype}")
    if data.shape[0] == 0:
        raise WavError(f"{path}: no audio frames")
    return TimeSignal(x.T, rate)


def _to_int(x: np.ndarray, bits: int, path) -> tuple[np.ndarray, int]:
    full = float(2 ** (bits - 1))
    scaled = np.round(x * full)
    over = int(np.count_nonzero((scaled > full - 1) | (scaled < -full)))
    if over:
        log.warning("%s: %d samples clipped to %d-bit range", path, over, bits)
    return np.clip(scaled, -full, full - 1).astype(np.int32), over


def write_wav(signal: TimeSignal, path, codec: str = "float32") -> int:
    """Write ``signal``; returns the number of samples clipped by an integer codec."""
    if codec not in CODECS:
        raise WavError(f"unknown codec {codec!r}, expected one of {CODECS}")
    x = np.asarray(signal.samples)
    if x.size == 0:
        raise WavError("refusing to write an empty signal")
    path = Path(path)
    if not path.parent.exists():
        raise OSError(f"directory {path.parent} does not exist")
    if codec == "float32":
        scipy.io.wavfile.write(path, signal.sample_rate, np.ascontiguousarray(x.T.astype(np.float32)))
        return 0
    if codec == "pcm16":
        ints, over = _to_int(x, 16, path)
        scipy.io.wavfile.write(path, signal.sample_rate, np.ascontiguousarray(ints.T.astype(np.int16)))
        return over
    ints, over = _to_int(x, 24, path)
    raw = np.ascontiguousarray(ints.T).astype("<i4").view(np.uint8).reshape(-1, 4)[:, :3]
    with wave.open(str(path), "wb") as w:
        w.setnchannels(x.shape[0])
        w.setsampwidth(3)
        w.setframerate(signal.sample_rate)
        w.writeframes(raw.tobytes())
    return over


def _wav_info(path: Path) -> tuple[int, int, int]:
    """(channels, sample_rate, frames) without decoding the samples."""
    sig = read_wav(path)
    return sig.channels, sig.sample_rate, sig.length


@dataclass
class ManifestEntry:
    segment_id: str
    ambisonic_wav_path: str
    binaural_wav_path: str
    split: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    sample_rate: int
    order: int = 1
    root: Path = field(default_factory=Path)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.root / q

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "order": self.order,
            "entries": [vars(e) for e in self.entries],
        }


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")


def load_manifest(path, check_audio: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError([f"manifest {path} not found"]) from None
    except json.JSONDecodeError as exc:
        raise ManifestError([f"manifest {path} is not valid JSON: {exc}"]) from None

    problems: list[str] = []
    rate = raw.get("sample_rate")
    order = raw.get("order", 1)
    if not isinstance(rate, int) or rate <= 0:
        problems.append(f"sample_rate must be a positive integer, got {rate!r}")
    if not isinstance(order, int) or order < 0:
        problems.append(f"order must be a non-negative integer, got {order!r}")
        order = 1
    entries = []
    required = ("segment_id", "ambisonic_wav_path", "binaural_wav_path", "split")
    for k, item in enumerate(raw.get("entries", [])):
        missing = [f for f in required if f not in item]
        if missing:
            problems.append(f"entry {k}: missing field(s) {', '.join(missing)}")
            continue
        entries.append(ManifestEntry(**{f: item[f] for f in required}))
    if not entries:
        problems.append("manifest has no entries")
    manifest = DatasetManifest(entries, rate if isinstance(rate, int) else 0, order, path.parent)

    seen: dict[str, str] = {}
    by_path: dict[str, set[str]] = {}
    for e in entries:
        if e.segment_id in seen:
            problems.append(f"duplicate segment_id {e.segment_id!r}")
        seen[e.segment_id] = e.split
        if e.split not in ("train", "eval"):
            problems.append(f"{e.segment_id}: split must be 'train' or 'eval', got {e.split!r}")
        for p in (e.ambisonic_wav_path, e.binaural_wav_path):
            by_path.setdefault(str(manifest.resolve(p)), set()).add(e.split)
    for p, splits in sorted(by_path.items()):
        if len(splits) > 1:
            problems.append(f"{p} appears in overlapping splits {sorted(splits)}")

    if check_audio:
        n_ambi = (order + 1) ** 2
        for e in entries:
            infos = {}
            for kind, p, want in (
                ("ambisonic", e.ambisonic_wav_path, n_ambi),
                ("binaural", e.binaural_wav_path, 2),
            ):
                f = manifest.resolve(p)
                if not f.exists():
                    problems.append(f"{e.segment_id}: {kind} file {f} does not exist")
                    continue
                try:
                    ch, sr, n = _wav_info(f)
                except WavError as exc:
                    problems.append(f"{e.segment_id}: {exc}")
                    continue
                infos[kind] = n
                if ch != want:
                    problems.append(f"{e.segment_id}: {kind} file has {ch} channels, expected {want}")
                if isinstance(rate, int) and sr != rate:
                    problems.append(f"{e.segment_id}: {kind} sample rate {sr} != manifest {rate}")
            if len(infos) == 2 and infos["ambisonic"] != infos["binaural"]:
                problems.append(
                    f"{e.segment_id}: ambisonic has {infos['ambisonic']} frames, "
                    f"binaural has {infos['binaural']}"
                )
    if problems:
        raise ManifestError(problems)
    return manifest


def scan_pairs(directory, eval_ids=(), sample_rate: int | None = None, order: int = 1,
               ambi_suffix: str = "_ambi.wav", binaural_suffix: str = "_binaural.wav") -> DatasetManifest:
    """Pair ``<id>_ambi.wav`` with ``<id>_binaural.wav`` under ``directory``."""
    directory = Path(directory)
    eval_ids = set(eval_ids)
    entries = []
    for ambi in sorted(directory.glob("*" + ambi_suffix)):
        seg = ambi.name[: -len(ambi_suffix)]
        binaural = ambi.with_name(seg + binaural_suffix)
        if not binaural.exists():
            log.warning("no binaural partner for %s", ambi.name)
            continue
        entries.append(ManifestEntry(seg, ambi.name, binaural.name, "eval" if seg in eval_ids else "train"))
    if not entries:
        raise ManifestError([f"no '*{ambi_suffix}' / '*{binaural_suffix}' pairs in {directory}"])
    if sample_rate is None:
        sample_rate = read_wav(directory / entries[0].ambisonic_wav_path).sample_rate
    return DatasetManifest(entries, sample_rate, order, directory)


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
