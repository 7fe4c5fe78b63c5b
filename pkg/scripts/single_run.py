"""Run every tracker once on one scenario and print a per-scan trace.

    python scripts/single_run.py --scenario 1 --run 0 --every 25
"""
import argparse

import numpy as np

from trackbench.harness import RunConfig, generate_scenario, simulate_measurements
from trackbench.harness.montecarlo import make_tracker
from trackbench.harness.simulate import TRACKER_STREAM, substream
from trackbench.metrics import gospa


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scenario", type=int, default=1, choices=(1, 2, 3))
    ap.add_argument("--run", type=int, default=0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--every", type=int, default=25, help="print every n-th scan")
    ap.add_argument("--trackers", default="jpda,mht,bp")
    args = ap.parse_args()

    cfg = RunConfig(scenario=args.scenario, seed=args.seed, steps=args.steps, trackers=args.trackers)
    sc = generate_scenario(cfg.scenario, cfg.steps, cfg.half_separation)
    scans = simulate_measurements(sc, cfg.sensor_model(), cfg.seed, args.run)
    trackers = {n: make_tracker(n, cfg) for n in cfg.tracker_list}
    totals = {n: 0.0 for n in trackers}
    for scan in scans:
        k = scan.k
        truth = sc.positions(k)
        line = [f"k={k:3d} truth y={truth[0, 1]:+7.1f},{truth[1, 1]:+7.1f}"]
        for name, tr in trackers.items():
            rng = substream(cfg.seed, args.run, k, TRACKER_STREAM) if name == "bp" else None
            est = tr.step(scan, rng) if rng is not None else tr.step(scan)
            pos = np.array([x[:2] for _, x in est]).reshape(-1, 2)
            g = gospa(truth, pos, cfg.gospa_p, cfg.gospa_c)
            totals[name] += g.total
            ys = ",".join(f"{y:+6.1f}" for y in sorted(pos[:, 1]))
            line.append(f"{name}: n={len(pos)} gospa={g.total:6.2f} y=[{ys}]")
        if k % args.every == 0 or k == 1:
            print("  ".join(line))
    for name, t in totals.items():
        print(f"{name}: mean GOSPA {t / len(scans):.3f}")


if __name__ == "__main__":
    main()
