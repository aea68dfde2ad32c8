import json
import logging

import numpy as np
import pytest

from ambibin.dsp import TimeSignal
from ambibin.io import (
    DatasetManifest,
    ManifestEntry,
    ManifestError,
    WavError,
    load_manifest,
    read_wav,
    save_manifest,
    scan_pairs,
    write_wav,
)


def sig(channels=4, n=480, rate=48000, seed=0, scale=0.5):
    x = np.random.default_rng(seed).uniform(-scale, scale, (channels, n))
    return TimeSignal(x, rate)


def test_float_round_trip_is_bit_exact(tmp_path):
    s = TimeSignal(sig().samples.astype(np.float32).astype(np.float64), 48000)
    write_wav(s, tmp_path / "a.wav")
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 48000 and back.channels == 4
    assert np.array_equal(back.samples, s.samples)


def test_pcm16_full_scale(tmp_path):
    write_wav(TimeSignal(np.array([[32767 / 32768, -1.0, 0.0]]), 16000), tmp_path / "a.wav", "pcm16")
    x = read_wav(tmp_path / "a.wav").samples[0]
    assert x[0] == pytest.approx(0.99997, abs=1e-5) and x[1] == -1.0 and x[2] == 0.0


@pytest.mark.parametrize("codec,bits", [("pcm16", 16), ("pcm24", 24)])
def test_integer_codecs_quantise_within_half_lsb(tmp_path, codec, bits):
    s = sig(2, 300, seed=1, scale=0.9)
    assert write_wav(s, tmp_path / "a.wav", codec) == 0
    back = read_wav(tmp_path / "a.wav")
    assert np.abs(back.samples - s.samples).max() <= 0.5 / 2 ** (bits - 1) + 1e-12


def test_clipping_counted_and_warned(tmp_path, caplog):
    s = TimeSignal(np.array([[0.1, 1.5, -2.0, 0.2]]), 8000)
    with caplog.at_level(logging.WARNING):
        assert write_wav(s, tmp_path / "a.wav", "pcm16") == 2
    assert "clipped" in caplog.text
    assert read_wav(tmp_path / "a.wav").samples[0, 1] == pytest.approx(32767 / 32768)


def test_truncated_file_is_a_parse_error(tmp_path):
    write_wav(sig(), tmp_path / "a.wav")
    raw = (tmp_path / "a.wav").read_bytes()
    (tmp_path / "cut.wav").write_bytes(raw[:30])
    with pytest.raises(WavError):
        read_wav(tmp_path / "cut.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wave file at all")
    with pytest.raises(WavError):
        read_wav(tmp_path / "junk.wav")


def test_write_errors(tmp_path):
    with pytest.raises(WavError):
        write_wav(sig(), tmp_path / "a.wav", "mp3")
    with pytest.raises(OSError):
        write_wav(sig(), tmp_path / "missing" / "a.wav")
    with pytest.raises(ValueError):  # empty signals cannot even be constructed
        write_wav(TimeSignal(np.zeros((2, 0)), 8000), tmp_path / "b.wav")


def make_dataset(root, n_train, n_eval, rate=8000, n=64):
    entries = []
    for k in range(n_train + n_eval):
        seg = f"s{k:02d}"
        write_wav(sig(4, n, rate, seed=k), root / f"{seg}_ambi.wav")
        write_wav(sig(2, n, rate, seed=100 + k), root / f"{seg}_binaural.wav")
        entries.append(ManifestEntry(seg, f"{seg}_ambi.wav", f"{seg}_binaural.wav",
                                     "train" if k < n_train else "eval"))
    path = root / "manifest.json"
    save_manifest(DatasetManifest(entries, rate, 1, root), path)
    return path


def test_49_segment_manifest_validates(tmp_path):
    m = load_manifest(make_dataset(tmp_path, 31, 18))
    assert len(m.entries) == 49 and len(m.split("train")) == 31 and len(m.split("eval")) == 18


def rewrite(path, mutate):
    d = json.loads(path.read_text())
    mutate(d)
    path.write_text(json.dumps(d))


# corpus of malformed manifests: (mutation, fragment expected in the diagnostics)
def _dup(d):
    d["entries"][1]["segment_id"] = d["entries"][0]["segment_id"]


def _overlap(d):
    d["entries"][2]["ambisonic_wav_path"] = d["entries"][0]["ambisonic_wav_path"]
    d["entries"][2]["binaural_wav_path"] = d["entries"][0]["binaural_wav_path"]


def _missing(d):
    d["entries"][0]["binaural_wav_path"] = "nowhere.wav"


def _bad_split(d):
    d["entries"][0]["split"] = "test"


def _bad_rate(d):
    d["sample_rate"] = 44100


def _channels(d):
    d["entries"][1]["binaural_wav_path"] = d["entries"][1]["ambisonic_wav_path"]


def _no_field(d):
    del d["entries"][0]["split"]


def _empty(d):
    d["entries"] = []


CORPUS = [
    (_dup, "duplicate segment_id"),
    (_overlap, "overlapping splits"),
    (_missing, "does not exist"),
    (_bad_split, "split must be"),
    (_bad_rate, "sample rate 8000 != manifest 44100"),
    (_channels, "has 4 channels, expected 2"),
    (_no_field, "missing field"),
    (_empty, "no entries"),
]


@pytest.mark.parametrize("mutate,fragment", CORPUS, ids=[f.__name__ for f, _ in CORPUS])
def test_malformed_manifest_corpus(tmp_path, mutate, fragment):
    path = make_dataset(tmp_path, 2, 1)
    rewrite(path, mutate)
    with pytest.raises(ManifestError) as err:
        load_manifest(path)
    assert any(fragment in p for p in err.value.problems), err.value.problems


def test_all_violations_reported_together(tmp_path):
    path = make_dataset(tmp_path, 2, 1)
    rewrite(path, lambda d: (_dup(d), _missing(d), _bad_split(d)))
    with pytest.raises(ManifestError) as err:
        load_manifest(path)
    assert len(err.value.problems) >= 3


def test_three_channel_ambisonic_rejected(tmp_path):
    path = make_dataset(tmp_path, 1, 0)
    write_wav(sig(3, 64, 8000), tmp_path / "s00_ambi.wav")
    with pytest.raises(ManifestError, match="3 channels, expected 4"):
        load_manifest(path)


def test_length_mismatch_and_missing_manifest(tmp_path):
    path = make_dataset(tmp_path, 1, 0)
    write_wav(sig(2, 65, 8000), tmp_path / "s00_binaural.wav")
    with pytest.raises(ManifestError, match="frames"):
        load_manifest(path)
    with pytest.raises(ManifestError, match="not found"):
        load_manifest(tmp_path / "none.json")


def test_scan_pairs(tmp_path):
    make_dataset(tmp_path, 3, 0)
    write_wav(sig(4, 64, 8000), tmp_path / "orphan_ambi.wav")
    m = scan_pairs(tmp_path, eval_ids=["s01"])
    assert [e.segment_id for e in m.entries] == ["s00", "s01", "s02"]
    assert [e.split for e in m.entries] == ["train", "eval", "train"]
    assert m.sample_rate == 8000
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ManifestError):
        scan_pairs(empty)
