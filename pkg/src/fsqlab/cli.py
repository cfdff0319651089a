"""Command-line entry point: ``fsqlab <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .bitstream import ChannelSpec, CodeSequence, corrupt_sequence
from .codec import CodecConfig, DeskCodec, train_fsq_codec, train_rvq_codec
from .corpus import gen_corpus, load_corpus, load_wav, save_wav
from .distill import LossWeights, TrainConfig, train_student
from .fsq import PRESETS
from .harness import CODECS, ExperimentConfig, analyze_codes, run_experiment, score, write_analysis


def _levels(text: str) -> tuple[int, ...]:
    if text in PRESETS:
        return PRESETS[text]
    return tuple(int(v) for v in text.split(","))


def cmd_gen_data(args):
    paths = gen_corpus(args.seed, args.count, args.dur, args.out)
    print(f"wrote {len(paths)} files to {args.out}")


def cmd_train(args):
    audio = list(load_corpus(args.corpus).values())
    config = CodecConfig()
    if args.fsq_levels:
        levels = _levels(args.fsq_levels)
        config = replace(config, fsq_dims=len(levels), fsq_levels=levels)
    if args.preset == "rvq-desk":
        codec = train_rvq_codec(audio, config, args.seed, args.max_iters)
    else:
        teacher = DeskCodec.load(args.teacher) if args.teacher else train_fsq_codec(audio, config, args.seed)
        codec = teacher
        if args.preset == "student-fsq":
            weights = LossWeights(args.lambda_rec, args.lambda_distill)
            cfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch=args.batch, seed=args.seed,
                              warmup_steps=args.warmup)
            result = train_student(teacher, audio, weights, cfg)
            print(f"best epoch {result.best_epoch}, held-out loss {min(result.heldout_loss):.6g}")
            codec = teacher.with_student(result.student, "student-fsq")
    codec.save(args.out)
    print(f"saved {args.preset} model to {args.out}")


def cmd_encode(args):
    codec = DeskCodec.load(args.model)
    seq = codec.encode(load_wav(args.inp))
    Path(args.out).write_bytes(seq.to_bytes())
    print(f"{seq.num_frames} frames, {seq.bits_per_frame} bits/frame")


def cmd_corrupt(args):
    seq = CodeSequence.from_bytes(Path(args.inp).read_bytes())
    stream = args.stream_id if args.stream_id is not None else Path(args.inp).stem
    out = corrupt_sequence(seq, ChannelSpec(args.p, args.seed, stream))
    Path(args.out).write_bytes(out.to_bytes())
    changed = int((out.codes != seq.codes).sum())
    print(f"{changed} of {seq.codes.size} codes changed")


def cmd_decode(args):
    codec = DeskCodec.load(args.model)
    seq = CodeSequence.from_bytes(Path(args.inp).read_bytes())
    save_wav(args.out, codec.decode(seq, args.length))


def cmd_eval(args):
    ref, est = load_wav(args.ref), load_wav(args.est)
    # decoded files carry up to one hop of codec padding
    if 0 < est.size - ref.size < CodecConfig().hop:
        est = est[:ref.size]
    print(json.dumps({"reference": str(args.ref), "estimate": str(args.est), **score(ref, est)}, indent=1))


def cmd_sweep(args):
    config = ExperimentConfig.from_json(args.config)
    if args.out:
        config.output_dir = args.out
    report = run_experiment(config)
    for agg in report.aggregates():
        print(f"{agg['codec']:<12} p={agg['p_flip']:<6g} si_sdr={agg['si_sdr_mean']:8.3f} dB "
              f"stoi={agg['stoi_mean']:.3f} mel_mse={agg['mel_mse_mean']:.4f}")
    print(f"results in {config.output_dir}")


def cmd_analyze(args):
    corpus = load_corpus(args.corpus)
    a = DeskCodec.load(args.a, Path(args.a).stem)
    b = DeskCodec.load(args.b, Path(args.b).stem)
    result = analyze_codes(corpus, a, b)
    write_analysis(result, args.out)
    keys = ("exact_code_agreement", "level_accuracy", "within_one_level",
            "cosine_pre_quantization", "cosine_dequantized")
    for k in keys:
        print(f"{k:<26} {result[k]:.4f}")
    print(f"analysis written to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fsqlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic speech-like corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--dur", type=float, default=2.0, help="seconds per utterance")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit a desk codec on a WAV directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--preset", choices=CODECS, default="fsq-desk")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fsq-levels", help="preset name (neucodec, stablecodec) or comma list")
    p.add_argument("--teacher", help="existing FSQ model to distill from (student-fsq)")
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--lambda-rec", type=float, default=1.0)
    p.add_argument("--lambda-distill", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch", type=int, default=TrainConfig.batch)
    p.add_argument("--warmup", type=int, default=TrainConfig.warmup_steps)
    p.set_defaults(func=cmd_train, single_file=True)

    p = sub.add_parser("encode", help="WAV -> NCODE1 code sequence")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode, single_file=True)

    p = sub.add_parser("corrupt", help="send a code sequence through a binary symmetric channel")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream-id", help="channel domain separator (default: input file stem)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corrupt, single_file=True)

    p = sub.add_parser("decode", help="NCODE1 code sequence -> WAV")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--length", type=int, help="trim output to this many samples")
    p.set_defaults(func=cmd_decode, single_file=True)

    p = sub.add_parser("eval", help="SI-SDR, STOI and mel MSE of an estimate against a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--est", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run the bit-flip robustness sweep from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override output_dir from the config")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze-codes", help="compare two FSQ encoders' codes over a corpus")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default="analysis")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "single_file", False):
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
