import json

import pytest

from ambibin.io import DatasetManifest, ManifestEntry, save_manifest, write_wav
from ambibin.synthetic import plane_wave_pair

TOY_RATE = 8000


def write_toy_dataset(root, n_train=2, n_eval=0, seconds=0.2, rate=TOY_RATE):
    """Paired FOA/binaural WAVs plus manifest.json under ``root``."""
    entries = []
    for k in range(n_train + n_eval):
        seg = f"seg{k:02d}"
        pair = plane_wave_pair(seconds, rate, seed=k, segment_id=seg)
        write_wav(pair.ambisonic.signal, root / f"{seg}_ambi.wav")
        write_wav(pair.binaural, root / f"{seg}_binaural.wav")
        split = "train" if k < n_train else "eval"
        entries.append(ManifestEntry(seg, f"{seg}_ambi.wav", f"{seg}_binaural.wav", split))
    path = root / "manifest.json"
    save_manifest(DatasetManifest(entries, rate, 1, root), path)
    return path


def write_toy_config(path, **overrides):
    cfg = {
        "model": {"architecture": "dnn4", "freq_bins": 33, "dnn_widths": [16, 16, 8]},
        "loss": {"gamma": 1.0, "stft": {"window_length": 64, "hop": 32, "fft_size": 64}},
        "batch_size": 2,
        "clip_seconds": 0.1,
        "log_every": 10,
    }
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def toy_dataset(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    return write_toy_dataset(data, n_train=2, n_eval=1)


@pytest.fixture
def toy_config(tmp_path):
    return write_toy_config(tmp_path / "train.json")


# acceptance verdicts, one line per criterion, echoed at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
