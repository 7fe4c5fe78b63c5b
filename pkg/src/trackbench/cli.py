"""``track-bench`` command line interface.

Exit codes: 0 success, 1 configuration error, 2 more than 10% of runs failed.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .harness.config import ConfigError, parse_config
from .harness.io import write_outputs
from .harness.montecarlo import run_monte_carlo


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="track-bench", description="JPDA / MHT / BP multitarget tracking benchmark")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a Monte Carlo experiment and write CSV series")
    r.add_argument("--scenario", type=int, choices=(1, 2, 3))
    r.add_argument("--trackers", help="comma-separated subset of jpda,mht,bp")
    r.add_argument("--runs", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--steps", type=int, help="truncate the scenario (default 300)")
    r.add_argument("--config", help="key=value parameter file; flags override it")
    r.add_argument("--out", default="results", help="output directory")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {k: getattr(args, k) for k in ("scenario", "trackers", "runs", "seed", "workers", "steps")}
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    def progress(done, total):
        if args.verbose:
            logging.info("run %d/%d done", done, total)

    result = run_monte_carlo(cfg, progress)
    paths = write_outputs(result, args.out)
    for p in paths:
        print(p)
    frac = result.failure_fraction()
    if result.failures:
        print(f"{len(result.failures)} tracker runs failed ({frac:.0%} of runs)", file=sys.stderr)
    return 2 if frac > 0.10 else 0


if __name__ == "__main__":
    sys.exit(main())
