"""Run experiments with their configs from scripts/configs.

    python3 scripts/run_experiments.py                 # all, desk scale
    python3 scripts/run_experiments.py toy-bias toy-rmse --out results
    python3 scripts/run_experiments.py --config scripts/configs/smoke.ini
"""

import argparse
import sys
import time
from pathlib import Path

from scr_mlmc.cli import main as cli_main
from scr_mlmc.config import EXPERIMENTS

CONFIGS = Path(__file__).resolve().parent / "configs"


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("experiments", nargs="*", help=f"subset of: {', '.join(EXPERIMENTS)}")
    p.add_argument("--config", help="one config for every experiment (default: configs/<experiment>.ini)")
    p.add_argument("--out", default="results")
    p.add_argument("--seed", type=int, default=None)
    args = p.parse_args(argv)
    unknown = [e for e in args.experiments if e not in EXPERIMENTS]
    if unknown:
        p.error(f"unknown experiments: {', '.join(unknown)}")
    status = 0
    for name in args.experiments or EXPERIMENTS:
        config = args.config or str(CONFIGS / f"{name}.ini")
        cmd = [name, "--config", config, "--out", args.out]
        if args.seed is not None:
            cmd += ["--seed", str(args.seed)]
        start = time.perf_counter()
        code = cli_main(cmd)
        print(f"{name}: exit {code} after {time.perf_counter() - start:.1f}s", flush=True)
        status = status or code
    return status


if __name__ == "__main__":
    sys.exit(main())
