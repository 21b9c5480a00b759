"""Command-line entry point: detect, generate, evaluate, bench."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import evalbench, pipeline, synth
from .errors import ConfigError, ZeroSpeedError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3

log = logging.getLogger("zerospeed")


def _config(path, seed=None) -> pipeline.PipelineConfig:
    cfg = pipeline.load_config(path) if path else pipeline.PipelineConfig()
    return cfg.with_seed(seed) if seed is not None else cfg


def cmd_detect(args) -> int:
    cfg = _config(args.config, args.seed)
    signal = pipeline.load_speed_signal(args.signal) if args.signal else None
    if args.output and args.output != "-":
        with open(args.output, "w", encoding="utf-8", newline="\n") as sink:
            summary = pipeline.run(args.input, cfg, sink, speed_signal=signal, strict=args.strict)
    else:
        summary = pipeline.run(args.input, cfg, sys.stdout, speed_signal=signal, strict=args.strict)
    print(json.dumps({"summary": summary.to_dict()}), file=sys.stderr)
    return EXIT_OK


def cmd_generate(args) -> int:
    spec = synth.load_spec(args.spec)
    out = synth.write_sequence(spec, args.out, ext=args.ext)
    print(f"wrote {spec.n_frames} {spec.kind} frames to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    preds = evalbench.read_jsonl(args.pred)
    truth = evalbench.read_jsonl(args.truth)
    cm, m = evalbench.score(preds, truth, warmup=args.warmup)
    if args.table:
        merged_cm, merged_m = evalbench.merge_two_class(cm)
        print(evalbench.format_table(cm, m))
        print()
        print(evalbench.format_table(merged_cm, merged_m))
    else:
        print(json.dumps(evalbench.evaluation_report(cm, m), indent=2))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args.config)
    reports = evalbench.bench(args.input, cfg, reps=args.reps, warmup=args.warmup)
    if args.json:
        print(json.dumps({"reports": [r.to_dict() for r in reports]}, indent=2))
    else:
        for r in reports:
            print(r.row())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zerospeed", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="classify every frame of a directory")
    d.add_argument("--input", required=True, help="directory of frame_NNNNNN.pgm|png")
    d.add_argument("--config", help="pipeline config JSON (defaults if omitted)")
    d.add_argument("--signal", help="speed CSV with header frame,speed_kmh")
    d.add_argument("--output", help="JSON-lines output path (stdout if omitted)")
    d.add_argument("--strict", action="store_true", help="abort on the first unreadable frame")
    d.add_argument("--seed", type=int, help="RANSAC seed (overrides the config)")
    d.set_defaults(func=cmd_detect)

    g = sub.add_parser("generate", help="render a synthetic sequence")
    g.add_argument("--spec", required=True, help="scene spec JSON")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--ext", choices=("pgm", "png"), default="pgm")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="score decisions against ground truth")
    e.add_argument("--pred", required=True, help="decisions JSON-lines")
    e.add_argument("--truth", required=True, help="truth JSON-lines (frame, label)")
    fmt = e.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true", help="JSON report (default)")
    fmt.add_argument("--table", action="store_true", help="plain-text tables")
    e.add_argument("--warmup", type=int, help="exclude the first N frames (default: leading Indeterminate run)")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bench", help="per-frame latency of the full chain")
    b.add_argument("--input", required=True, help="directory of frames")
    b.add_argument("--config", help="pipeline config JSON")
    b.add_argument("--reps", type=int, default=1)
    b.add_argument("--warmup", type=int, default=2, help="untimed frames per repetition")
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ZeroSpeedError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
