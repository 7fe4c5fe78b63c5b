"""Monte Carlo orchestration and aggregation.

Every run simulates one measurement realization and feeds the same scans to
each enabled tracker. Runs are independent and seeded per (run, scan), so the
outcome does not depend on the number of worker processes; aggregation always
walks the runs in index order.
"""
from __future__ import annotations

import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..bp import BpTracker
from ..jpda import JpdaTracker
from ..metrics import gospa, track_distances
from ..mht import MhtTracker
from .config import RunConfig
from .scenarios import generate_scenario
from .simulate import TRACKER_STREAM, simulate_measurements, substream

log = logging.getLogger(__name__)

SERIES_FIELDS = ("gospa_total", "gospa_loc", "gospa_missed", "gospa_false", "d_center", "d_tracks", "n_est")


@dataclass
class RunResult:
    run: int
    # tracker -> field -> (steps,) array; NaN where a diagnostic is undefined
    series: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)


@dataclass
class MetricSeries:
    tracker: str
    k: np.ndarray
    means: dict[str, np.ndarray]
    n_runs: int
    failed_runs: list[int]

    def window_mean(self, name: str, k_lo: int, k_hi: int, inclusive: bool = True) -> float:
        sel = (self.k >= k_lo) & (self.k <= k_hi) if inclusive else (self.k > k_lo) & (self.k < k_hi)
        vals = self.means[name][sel]
        vals = vals[np.isfinite(vals)]
        return float(vals.mean()) if len(vals) else float("nan")

    def grand_mean(self, name: str) -> float:
        vals = self.means[name]
        vals = vals[np.isfinite(vals)]
        return float(vals.mean()) if len(vals) else float("nan")


@dataclass
class MonteCarloResult:
    config: RunConfig
    series: dict[str, MetricSeries]
    failures: list[tuple[int, str, str]]

    def failure_fraction(self) -> float:
        runs_failed = {r for r, _, _ in self.failures}
        return len(runs_failed) / self.config.runs


def make_tracker(name: str, cfg: RunConfig):
    mm, sm = cfg.motion_model(), cfg.sensor_model()
    if name == "jpda":
        return JpdaTracker(mm, sm, cfg.jpda_config())
    if name == "mht":
        return MhtTracker(mm, sm, cfg.mht_config())
    if name == "bp":
        return BpTracker(mm, sm, cfg.bp_config())
    raise ValueError(f"unknown tracker {name!r}")


def run_single(cfg: RunConfig, run: int) -> RunResult:
    sc = generate_scenario(cfg.scenario, cfg.steps, cfg.half_separation)
    sm = cfg.sensor_model()
    scans = simulate_measurements(sc, sm, cfg.seed, run)
    result = RunResult(run)
    for name in cfg.tracker_list:
        try:
            tracker = make_tracker(name, cfg)
            cols = {f: np.full(sc.steps, np.nan) for f in SERIES_FIELDS}
            for scan in scans:
                k = scan.k
                if name == "bp":
                    est = tracker.step(scan, substream(cfg.seed, run, k, TRACKER_STREAM))
                else:
                    est = tracker.step(scan)
                pos = np.array([x[:2] for _, x in est]).reshape(-1, 2)
                truth = sc.positions(k)
                g = gospa(truth, pos, cfg.gospa_p, cfg.gospa_c)
                i = k - 1
                cols["gospa_total"][i] = g.total
                cols["gospa_loc"][i] = g.localization
                cols["gospa_missed"][i] = g.missed
                cols["gospa_false"][i] = g.false_
                cols["n_est"][i] = len(pos)
                if len(truth) == 2:
                    td = track_distances(k, pos, truth)
                    if td.d_center is not None:
                        cols["d_center"][i] = td.d_center
                        cols["d_tracks"][i] = td.d_tracks
            result.series[name] = cols
        except Exception:  # noqa: BLE001 - a failed run is recorded, not fatal
            result.failures[name] = traceback.format_exc(limit=3)
            log.warning("run %d, tracker %s failed", run, name)
    return result


def _run_star(args):
    return run_single(*args)


def aggregate(cfg: RunConfig, results: list[RunResult]) -> MonteCarloResult:
    results = sorted(results, key=lambda r: r.run)
    steps = cfg.steps
    k = np.arange(1, steps + 1)
    series, failures = {}, []
    for r in results:
        for name, tb in r.failures.items():
            failures.append((r.run, name, tb))
    for name in cfg.tracker_list:
        ok = [r for r in results if name in r.series]
        means = {}
        for f in SERIES_FIELDS:
            if ok:
                stack = np.vstack([r.series[name][f] for r in ok])
                cnt = np.sum(np.isfinite(stack), axis=0)
                tot = np.nansum(stack, axis=0)
                means[f] = np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)
            else:
                means[f] = np.full(steps, np.nan)
        failed = [r.run for r in results if name in r.failures]
        series[name] = MetricSeries(name, k, means, len(ok), failed)
    return MonteCarloResult(cfg, series, failures)


def run_monte_carlo(cfg: RunConfig, progress=None) -> MonteCarloResult:
    """Run ``cfg.runs`` realizations with ``cfg.workers`` processes and aggregate per step."""
    jobs = [(cfg, run) for run in range(cfg.runs)]
    results: list[RunResult] = []
    if cfg.workers == 1:
        for job in jobs:
            results.append(_run_star(job))
            if progress:
                progress(len(results), cfg.runs)
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for res in pool.map(_run_star, jobs):
                results.append(res)
                if progress:
                    progress(len(results), cfg.runs)
    return aggregate(cfg, results)
