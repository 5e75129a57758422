"""Command-line entry point.

Subcommands: train-lm, train-classify, train-translate, translate, bench,
dump-states.  Every run is driven by a text config (`--config`, a path or
a shipped preset name) plus repeatable `--set section.key=value` overrides;
`--seed/--out/--threads` are shortcuts for the corresponding top-level keys.
"""

import argparse
import os
import sys

from .bench import speed_grid, thread_limit, write_results_json
from .config import parse_config, resolve_config_arg
from .errors import QrnnError
from . import tasks

_TASK_OF = {"train-lm": "lm", "train-classify": "classify",
            "train-translate": "translate", "translate": "translate",
            "bench": "bench", "dump-states": "dump-states"}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qrnnkit",
        description="Quasi-recurrent sequence modeling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _TASK_OF:
        p = sub.add_parser(name)
        p.add_argument("--config", help="config file path or preset name")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--threads", type=int, help="BLAS thread cap")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        if name in ("translate", "dump-states"):
            p.add_argument("--checkpoint", required=True)
        if name == "translate":
            p.add_argument("--input", help="source file (default: stdin)")
            p.add_argument("--output", help="hypotheses file (default: stdout)")
        if name == "dump-states":
            p.add_argument("--text", required=True, help="input sequence")
            p.add_argument("--output", required=True, help="CSV path")
    return parser


def load_config(args):
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out={args.out}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    overrides.append(f"task={_TASK_OF[args.command]}")
    return parse_config(resolve_config_arg(args.config), overrides)


def dispatch(cfg, args):
    """Run the configured task; returns a process exit status."""
    with thread_limit(cfg.threads):
        if cfg.task == "lm":
            tasks.train_lm(cfg)
        elif cfg.task == "classify":
            tasks.train_classify(cfg)
        elif cfg.task == "translate" and args.command == "train-translate":
            tasks.train_translate(cfg)
        elif cfg.task == "translate":
            if args.input:
                with open(args.input, "r", encoding="utf-8") as fh:
                    lines = fh.read().splitlines()
            else:
                lines = sys.stdin.read().splitlines()
            hyps = tasks.run_translate(args.checkpoint, lines,
                                       beam_width=cfg.train.beam_width,
                                       alpha=cfg.train.beam_alpha,
                                       max_len=cfg.train.beam_max_len)
            text = "\n".join(hyps) + "\n"
            if args.output:
                with open(args.output, "w", encoding="utf-8") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
        elif cfg.task == "bench":
            os.makedirs(cfg.out, exist_ok=True)
            b = cfg.bench
            batches = [int(x) for x in b.batches.split(",")]
            seqlens = [int(x) for x in b.seqlens.split(",")]
            grid_path = os.path.join(cfg.out, "speed-grid.csv")
            grid, results = speed_grid(
                batches=batches, seqlens=seqlens, hidden=b.hidden, k=b.k,
                out_path=grid_path, mode=b.mode, reps=b.reps, warmup=b.warmup,
                threads=cfg.threads or None, seed=cfg.seed)
            print(f"wrote {grid_path}")
            if b.json:
                json_path = os.path.join(cfg.out, "bench-results.json")
                write_results_json(results, json_path)
                print(f"wrote {json_path}")
        elif cfg.task == "dump-states":
            tasks.run_dump_states(args.checkpoint, args.text, args.output)
            print(f"wrote {args.output}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return dispatch(cfg, args)
    except (QrnnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
