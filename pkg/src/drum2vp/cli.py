"""Command-line entry point wiring preprocessing, training, conversion,
test-pattern rendering, objective metrics, interval statistics, and the
listening-study server into one tool.

Option precedence: command-line flags beat values from --config (a flat
JSON object keyed by flag name), which beat built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .audio import AudioError, read_wav, write_wav


def _load_corpus(corpus_dir):
    corpus_dir = Path(corpus_dir)
    paths = sorted(p for p in corpus_dir.glob("*.wav"))
    if not paths:
        raise AudioError(f"no WAV chunks in {corpus_dir}")
    return [read_wav(p) for p in paths]


def cmd_preprocess(args):
    from .preprocess import SegmentationConfig, preprocess_corpus

    cfg = SegmentationConfig(
        silence_threshold_dbfs=args.silence_threshold,
        min_silence_seconds=args.min_silence,
        chunk_length=args.chunk_length)
    index = preprocess_corpus(args.manifest, args.out, cfg,
                              target_rate=args.rate)
    print(f"wrote {len(index['chunks'])} chunks to {index['out_dir']}")
    return 0


def cmd_train(args):
    from .model import ModelConfig, save_model_checkpoint
    from .training import (TrainConfig, load_checkpoint, save_checkpoint,
                           train_stage1, train_stage2)

    chunks = _load_corpus(args.corpus)
    cfg = TrainConfig(stage=args.stage, total_steps=args.steps,
                      batch_size=args.batch_size, seed=args.seed,
                      checkpoint_every=args.checkpoint_every,
                      checkpoint_dir=args.checkpoint_dir,
                      loss_log=args.loss_log,
                      disc_channels=args.disc_channels)
    if args.stage == 1:
        if args.resume:
            from .training import resume_stage1
            state = load_checkpoint(args.resume)
            resume_stage1(state, chunks, cfg, extra_steps=args.steps)
        else:
            if args.toy:
                model_cfg = ModelConfig.toy(args.mode)
            else:
                model_cfg = ModelConfig(latent_mode=args.mode,
                                        sample_rate=chunks[0].sample_rate)
            state = train_stage1(chunks, cfg, model_cfg)
    else:
        if not args.resume:
            print("--stage 2 requires --resume with a stage-1 checkpoint",
                  file=sys.stderr)
            return 2
        state = load_checkpoint(args.resume)
        train_stage2(state, chunks, cfg)
    save_checkpoint(state, args.out)
    if args.model_out:
        save_model_checkpoint(args.model_out, state.model)
    last = state.loss_rows[-1] if state.loss_rows else {}
    print(f"trained to step {state.step}; final loss "
          f"{last.get('total', float('nan')):.4f}; saved {args.out}")
    return 0


def cmd_convert(args):
    from .convert import convert_file_from_checkpoint

    buf = read_wav(args.input)
    out = convert_file_from_checkpoint(buf, args.checkpoint,
                                       match_input_level=not args.no_level_match)
    write_wav(args.output, out)
    print(f"converted {args.input} -> {args.output} "
          f"({len(out)} samples at {out.sample_rate} Hz)")
    return 0


def cmd_patterns(args):
    from .patterns import generate_test_set, load_kit, synthesize_kit

    kit = load_kit(args.kit) if args.kit else synthesize_kit(seed=args.seed)
    manifest = generate_test_set(kit, args.out)
    print(f"wrote {len(manifest['cases'])} test cases to {args.out}")
    return 0


def _merged_onsets(per_instrument: dict, tolerance: float = 1e-6):
    times = sorted(t for onsets in per_instrument.values() for t in onsets)
    merged = []
    for t in times:
        if not merged or t - merged[-1] > tolerance:
            merged.append(t)
    return merged


def metrics_report(test_set_path, audio_dir) -> dict:
    """Objective diagnostics for converted renditions of the test set."""
    from .audio import AudioBuffer
    from .metrics import (OnsetList, detect_onsets, rhythmic_fidelity,
                          timbral_consistency, vp_texture_report)

    manifest = json.loads(Path(test_set_path).read_text())
    audio_dir = Path(audio_dir)
    report = {"cases": []}
    for case in manifest["cases"]:
        buf = read_wav(audio_dir / case["file"])
        ref = OnsetList(times=_merged_onsets(case["onsets"]))
        est = detect_onsets(buf)
        clip_len = int(0.150 * buf.sample_rate)
        clips = []
        for instrument, times in case["onsets"].items():
            for t in times:
                start = int(t * buf.sample_rate)
                seg = buf.samples[start:start + clip_len]
                if len(seg) == clip_len:
                    clips.append((instrument, AudioBuffer(
                        samples=seg, sample_rate=buf.sample_rate)))
        # consistency needs two clips per label; drop one-shot instruments
        label_counts = {}
        for label, _ in clips:
            label_counts[label] = label_counts.get(label, 0) + 1
        usable = [(l, b) for l, b in clips if label_counts[l] >= 2]
        consistency = timbral_consistency(usable) \
            if len({l for l, _ in usable}) >= 2 else None
        texture = vp_texture_report(buf)
        report["cases"].append({
            "file": case["file"],
            "rhythmic_f": rhythmic_fidelity(ref, est),
            "timbral_consistency": consistency,
            "texture": {
                "spectral_flatness": texture.spectral_flatness,
                "aperiodicity_ratio": texture.aperiodicity_ratio,
                "voiced_fraction": texture.voiced_fraction,
            },
        })
    return report


def cmd_metrics(args):
    report = metrics_report(args.test_set, args.audio_dir)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def cmd_stats(args):
    from .stats import clopper_pearson

    if args.export:
        from .study import StudyConfig, compute_stats
        responses = []
        for line in Path(args.export).read_text().splitlines():
            if line.strip():
                record = json.loads(line)
                if record.get("type") == "response":
                    responses.append(record)
        if not responses:
            print("no responses in export", file=sys.stderr)
            return 1
        systems = tuple(sorted({r["system"] for r in responses}))
        cfg = StudyConfig(
            systems=systems,
            test_cases=({"name": "imported", "drum": "",
                         "sources": {s: "" for s in systems}},),
            confidence_level=args.confidence)
        print(json.dumps(compute_stats(responses, cfg), indent=2,
                         sort_keys=True))
        return 0
    if args.k is None or args.n is None:
        print("stats requires --k and --n (or --export)", file=sys.stderr)
        return 2
    low, high = clopper_pearson(args.k, args.n, args.confidence)
    print(f"[{low:.6f}, {high:.6f}]")
    return 0


def cmd_serve(args):
    import uvicorn

    from .study import create_app

    uvicorn.run(create_app(args.data_dir), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drum2vp",
        description="Drum-to-vocal-percussion conversion toolkit")
    parser.add_argument("--config", help="JSON file of default option values")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("preprocess", help="segment and chunk a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rate", type=int, default=None)
    p.add_argument("--silence-threshold", type=float, default=-60.0)
    p.add_argument("--min-silence", type=float, default=1.0)
    p.add_argument("--chunk-length", type=int, default=65536)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a conversion model")
    p.add_argument("--corpus", required=True, help="directory of WAV chunks")
    p.add_argument("--stage", type=int, choices=(1, 2), default=1)
    p.add_argument("--mode", choices=("gaussian", "vq"), default="gaussian")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--toy", action="store_true",
                   help="small CPU preset (r=64 at 16 kHz)")
    p.add_argument("--resume", help="training checkpoint to continue from")
    p.add_argument("--out", required=True, help="training checkpoint path")
    p.add_argument("--model-out", help="also save a deployable model file")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--checkpoint-dir")
    p.add_argument("--loss-log", help="CSV loss curve path")
    p.add_argument("--disc-channels", type=int, default=32)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convert", help="convert a drum recording")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--checkpoint", required=True, help="deployable model file")
    p.add_argument("--no-level-match", action="store_true")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("patterns", help="render the 9-case test set")
    p.add_argument("--out", required=True)
    p.add_argument("--kit", help="JSON manifest mapping instrument to WAV")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_patterns)

    p = sub.add_parser("metrics", help="objective report on converted audio")
    p.add_argument("--test-set", required=True, help="test_set.json path")
    p.add_argument("--audio-dir", required=True,
                   help="directory of converted WAVs named like the test set")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("stats", help="exact binomial confidence intervals")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--confidence", type=float, default=0.99)
    p.add_argument("--export", help="JSONL study export to summarize")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("serve", help="run the listening-study service")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def _apply_config(parser, argv, args):
    if not args.config:
        return args
    overrides = json.loads(Path(args.config).read_text())
    given = {a.split("=")[0] for a in argv if a.startswith("--")}
    for key, value in overrides.items():
        flag = "--" + key.replace("_", "-")
        attr = key.replace("-", "_")
        if flag not in given and hasattr(args, attr):
            setattr(args, attr, value)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 2
    args = _apply_config(parser, argv, args)
    try:
        return args.func(args)
    except (AudioError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "reason": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
