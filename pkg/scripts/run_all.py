"""Run the three scenarios into one results directory and print the window report.

    python scripts/run_all.py --runs 100 --workers 4 --out results
"""
import argparse
import subprocess
import sys
import time
from pathlib import Path

from trackbench.harness import RunConfig, run_monte_carlo, write_outputs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--scenarios", default="1,2,3")
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()

    for sid in (int(s) for s in args.scenarios.split(",")):
        cfg = RunConfig(scenario=sid, runs=args.runs, seed=args.seed, workers=args.workers)
        t0 = time.perf_counter()
        res = run_monte_carlo(cfg)
        write_outputs(res, args.out)
        print(f"scenario {sid}: {args.runs} runs in {time.perf_counter() - t0:.1f} s, "
              f"{len(res.failures)} tracker failures", flush=True)
    report = Path(__file__).with_name("window_report.py")
    subprocess.run([sys.executable, str(report), str(args.out)], check=True)


if __name__ == "__main__":
    main()
