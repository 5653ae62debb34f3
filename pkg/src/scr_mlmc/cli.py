"""Command line entry point: scr-mlmc <experiment> --config PATH [--seed N] [--out DIR]."""

from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, load_config
from .errors import ConfigError, NumericalError

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scr-mlmc", description="Nested SCR estimation experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="INI file with [run], [market], [alm], [toy], [experiment]")
    p.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
    p.add_argument("--out", default=None, help="output directory, overrides [run] out")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    from .experiments import run

    try:
        cfg = load_config(args.config, args.experiment, args.seed, args.out)
        csv_path, manifest = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"wrote {csv_path} and {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
