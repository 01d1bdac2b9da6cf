"""Run every committed experiment config and write one CSV per config.

    python scripts/run_experiments.py [--out results] [--threads 4] [--reps R] [names ...]

``names`` are config stems under scripts/configs (default: all of them).
Each run is the same as ``qinfer <command> --config scripts/configs/<name>.toml``.
"""

import argparse
import sys
import time
from pathlib import Path

from qinfer.cli import main as cli_main
from qinfer.experiments import ExperimentConfig

CONFIGS = Path(__file__).resolve().parent / "configs"
COMMANDS = {"coverage": "coverage", "correct-selection": "select", "ci-length": "ci-length",
            "qocba-run": "qocba-run", "solve": "solve"}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("names", nargs="*")
    parser.add_argument("--out", default="results")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--reps", type=int)
    args = parser.parse_args(argv)
    paths = [CONFIGS / f"{n}.toml" for n in args.names] if args.names else sorted(CONFIGS.glob("*.toml"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    status = 0
    for path in paths:
        kind = ExperimentConfig.load(path).kind
        cmd = [COMMANDS[kind], "--config", str(path), "--out", str(out_dir / f"{path.stem}.csv")]
        if args.threads:
            cmd += ["--threads", str(args.threads)]
        if args.reps:
            cmd += ["--reps", str(args.reps)]
        print(f"== {path.stem} ({kind})", flush=True)
        start = time.perf_counter()
        code = cli_main(cmd)
        print(f"-- exit {code}, {time.perf_counter() - start:.1f} s\n", flush=True)
        status = status or code
    return status


if __name__ == "__main__":
    sys.exit(main())
