"""Command-line entry point: ``ringrc run | compare | presets``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .errors import ConfigError
from .mrr import PRESET_NOTES, PRESETS
from .sweep import WORKERS_ENV, ResultMap, compare_baseline, load_config, run_experiment


def _report_config_error(exc: ConfigError) -> int:
    print("invalid configuration:", file=sys.stderr)
    for key, msg in exc.problems:
        print(f"  {key}: {msg}", file=sys.stderr)
    return 2


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.output:
            cfg.output = Path(args.output)
        log = None if args.quiet else (lambda s: print(s, file=sys.stderr, flush=True))
        summary = run_experiment(cfg, dump_traces=args.dump_traces, workers=args.workers, log=log)
    except ConfigError as exc:
        return _report_config_error(exc)
    m = summary.manifest
    print(f"{m['kind']}: {m['n_cells']} cells {m['status_counts']} -> {summary.output} "
          f"({m['wall_time_s']:.1f} s)")
    return 0


def cmd_compare(args) -> int:
    try:
        rb = compare_baseline(ResultMap.from_csv(args.out_map), ResultMap.from_csv(args.in_map))
    except (OSError, ValueError) as exc:
        print(f"compare: {exc}", file=sys.stderr)
        return 2
    text = rb.to_csv_text()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_presets(args) -> int:
    for name, p in PRESETS.items():
        print(f"{name:12s} {PRESET_NOTES.get(name, '')}")
        if args.verbose:
            for k, v in asdict(p).items():
                print(f"    {k} = {v!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ringrc", description=__doc__)
    ap.add_argument("--version", action="version", version=f"ringrc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--dump-traces", action="store_true", help="write per-cell trace/*.csv")
    r.add_argument("--output", help="override the output directory")
    r.add_argument("--workers", type=int, default=None,
                   help=f"worker processes (default: ${WORKERS_ENV} or 1)")
    r.add_argument("-q", "--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="BER ratio map RB = BER_in / BER_out")
    c.add_argument("out_map")
    c.add_argument("in_map")
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_compare)

    p = sub.add_parser("presets", help="device presets")
    psub = p.add_subparsers(dest="action", required=True)
    pl = psub.add_parser("list")
    pl.add_argument("-v", "--verbose", action="store_true")
    pl.set_defaults(func=cmd_presets)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
