"""Command line entry point.

    qinfer solve      --config cfg.toml [--out result.csv]
    qinfer coverage   --config cfg.toml [--out result.csv] [--seed S] [--reps R] [--threads T]
    qinfer select     ...
    qinfer ci-length  ...
    qinfer qocba-run  ...

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError
from .experiments import ExperimentConfig, run_experiment

COMMANDS = {
    "solve": "solve",
    "coverage": "coverage",
    "select": "correct-selection",
    "ci-length": "ci-length",
    "qocba-run": "qocba-run",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qinfer", description="Inference and exploration for tabular MDPs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (TOML)")
        p.add_argument("--out", help="write the result table here as CSV")
        p.add_argument("--seed", type=int)
        p.add_argument("--reps", type=int)
        p.add_argument("--threads", type=int, help=f"worker processes (default: $QINFER_THREADS or 1)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        kind = COMMANDS[args.command]
        if cfg.kind != kind:
            cfg = cfg.replace(kind=kind)
        cfg = cfg.replace(seed=args.seed, reps=args.reps)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        table = run_experiment(cfg, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    if args.out:
        table.write_csv(args.out)
    print(table.summary())
    return 0


if __name__ == "__main__":
    sys.exit(main())
