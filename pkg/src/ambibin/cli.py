"""Command-line front end: ``ambibin {train,render,eval,feature-dump,make-manifest}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ambisonics import AmbisonicClip, Normalization
from .baselines import load_hrir_manifest
from .checkpoint import load_checkpoint, save_checkpoint
from .dsp import StftConfig, stft
from .features import assemble_input
from .io import ManifestError, load_manifest, read_wav, save_manifest, scan_pairs, write_wav
from .metrics import evaluate
from .render import NeuralRenderer, SpHrtfRenderer, VlsRenderer
from .training import ClipPair, LossConfig, TrainConfig, make_clips, train

log = logging.getLogger("ambibin")

RENDERERS = ("nn_checkpoint", "nn", "vls", "sphrtf")


class CliError(Exception):
    pass


def _stft_from_args(args, base: StftConfig | None = None) -> StftConfig:
    base = base or StftConfig()
    window = args.stft_window or base.window_length
    hop = args.stft_hop or (base.hop if not args.stft_window else window // 2)
    fft = max(window, base.fft_size if not args.stft_window else window)
    return StftConfig(window, hop, fft)


def _load_pairs(manifest, split: str) -> list[tuple[str, ClipPair]]:
    out = []
    for e in manifest.split(split):
        amb = read_wav(manifest.resolve(e.ambisonic_wav_path))
        binaural = read_wav(manifest.resolve(e.binaural_wav_path))
        clip = AmbisonicClip(amb, manifest.order, Normalization.SN3D)
        out.append((e.segment_id, ClipPair(clip, binaural, (e.segment_id,))))
    return out


def _build_renderer(args):
    kind = args.renderer
    if kind in ("nn", "nn_checkpoint"):
        if not args.checkpoint:
            raise CliError("--renderer nn_checkpoint needs --checkpoint")
        return NeuralRenderer(load_checkpoint(args.checkpoint))
    if not args.hrir:
        raise CliError(f"--renderer {kind} needs --hrir (HRIR grid manifest)")
    hrirs = load_hrir_manifest(args.hrir)
    if kind == "vls":
        return VlsRenderer(hrirs)
    # plain quadrature SFT; no MagLS optimisation
    return SpHrtfRenderer(hrirs, args.order)


def cmd_train(args) -> int:
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mix_k is not None:
        overrides["mix_k"] = args.mix_k
    if args.checkpoint_every is not None:
        overrides["checkpoint_every"] = args.checkpoint_every
    loss_cfg = config.loss
    if args.gamma is not None:
        loss_cfg = replace(loss_cfg, gamma=args.gamma)
    if args.stft_window or args.stft_hop:
        loss_cfg = replace(loss_cfg, stft=_stft_from_args(args, loss_cfg.stft))
    model = replace(config.model, freq_bins=loss_cfg.stft.freq_bins)
    config = replace(config, loss=loss_cfg, model=model, **overrides)

    manifest = load_manifest(args.manifest)
    clips = []
    for _, pair in _load_pairs(manifest, "train"):
        clips += make_clips(pair, config.clip_seconds)
    if not clips:
        raise CliError("manifest has no training entries")
    resume = load_checkpoint(args.resume) if args.resume else None

    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.jsonl")
    with open(log_path, "a" if resume else "w") as fh:
        def on_log(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
        final, _ = train(config, clips, resume=resume, checkpoint_dir=args.checkpoint_dir, on_log=on_log)
    save_checkpoint(final, out)
    print(f"wrote {out} (step {final.step}, {final.params.numel()} parameters)")
    return 0


def cmd_render(args) -> int:
    renderer = _build_renderer(args)
    sig = read_wav(args.input)
    clip = AmbisonicClip.from_signal(sig, Normalization.SN3D)
    out = renderer(clip)
    write_wav(out, args.output, args.codec)
    print(f"wrote {args.output} ({out.channels} ch, {out.length} samples)")
    return 0


def _tree_pairs(pred_dir: Path, ref_dir: Path):
    refs = sorted(p for p in ref_dir.rglob("*.wav"))
    if not refs:
        raise CliError(f"no WAV files under {ref_dir}")
    for ref in refs:
        rel = ref.relative_to(ref_dir)
        pred = pred_dir / rel
        if not pred.exists():
            raise CliError(f"prediction {pred} missing for reference {ref}")
        yield str(rel), read_wav(pred), read_wav(ref)


def cmd_eval(args) -> int:
    stft_cfg = _stft_from_args(args)
    if args.pred and args.ref:
        report = evaluate(lambda x: x, _tree_pairs(Path(args.pred), Path(args.ref)), stft_cfg)
    elif args.manifest:
        renderer = _build_renderer(args)
        manifest = load_manifest(args.manifest)
        pairs = [(sid, p.ambisonic, p.binaural) for sid, p in _load_pairs(manifest, args.split)]
        report = evaluate(renderer, pairs, stft_cfg)
    else:
        raise CliError("eval needs either --pred and --ref, or --manifest with a renderer")
    print(report.table())
    if args.report:
        Path(args.report).write_text(report.to_json())
    return 0


def cmd_feature_dump(args) -> int:
    sig = read_wav(args.input)
    cfg = _stft_from_args(args)
    feat = assemble_input(stft(sig, cfg))
    out = Path(args.output)
    np.save(out, feat.planes.astype(np.float32))
    sidecar = out.with_name(out.stem + ".json")
    sidecar.write_text(json.dumps({"layout": feat.layout, "shape": list(feat.shape), "stft": cfg.to_dict(),
                                   "dtype": "<f4"}, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out} {feat.shape}")
    return 0


def cmd_make_manifest(args) -> int:
    eval_ids = [s for s in (args.eval_ids or "").split(",") if s]
    manifest = scan_pairs(args.directory, eval_ids, order=args.order)
    out = Path(args.out) if args.out else Path(args.directory) / "manifest.json"
    save_manifest(manifest, out)
    n_eval = len(manifest.split("eval"))
    print(f"wrote {out}: {len(manifest.entries) - n_eval} train, {n_eval} eval")
    return 0


def _add_stft(p):
    p.add_argument("--stft-window", type=int, help="STFT window length in samples (default 1024)")
    p.add_argument("--stft-hop", type=int, help="STFT hop in samples (default window/2)")


def _add_renderer(p, required=True):
    p.add_argument("--renderer", choices=RENDERERS, required=required,
                   help="nn_checkpoint: trained network; vls: virtual loudspeakers; "
                        "sphrtf: quadrature SFT sp-HRTF (no MagLS)")
    p.add_argument("--checkpoint", help="checkpoint for the nn renderer")
    p.add_argument("--hrir", help="HRIR grid manifest for vls / sphrtf")
    p.add_argument("--order", type=int, default=1, help="sp-HRTF order (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ambibin", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a renderer on a dataset manifest")
    p.add_argument("--config", help="training config (JSON)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="final checkpoint path")
    p.add_argument("--log", help="metric log path (default <out>.log.jsonl)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--checkpoint-dir", help="directory for periodic checkpoints")
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma", type=float, help="spectral loss weight")
    p.add_argument("--mix-k", type=int, help="clips mixed into each training clip")
    _add_stft(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render an ambisonic WAV to binaural")
    _add_renderer(p)
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--codec", choices=("float32", "pcm16", "pcm24"), default="float32")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="SDR/LSD of predictions or of a renderer on a manifest split")
    p.add_argument("--pred", help="directory of rendered WAVs")
    p.add_argument("--ref", help="directory of reference WAVs (same relative names)")
    p.add_argument("--manifest")
    p.add_argument("--split", default="eval")
    _add_renderer(p, required=False)
    p.add_argument("--report", help="write the report as JSON here")
    _add_stft(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("feature-dump", help="write the network input feature of an ambisonic WAV")
    p.add_argument("input")
    p.add_argument("output", help=".npy path; layout goes to a .json sidecar")
    _add_stft(p)
    p.set_defaults(func=cmd_feature_dump)

    p = sub.add_parser("make-manifest", help="pair <id>_ambi.wav / <id>_binaural.wav files")
    p.add_argument("directory")
    p.add_argument("--out")
    p.add_argument("--eval-ids", help="comma-separated segment ids for the eval split")
    p.add_argument("--order", type=int, default=1)
    p.set_defaults(func=cmd_make_manifest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "eval" and args.manifest and not args.renderer:
        parser.error("eval --manifest needs --renderer")
    try:
        return args.func(args)
    except ManifestError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 2
    except (CliError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}".splitlines()[0], file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
