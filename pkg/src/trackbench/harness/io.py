"""CSV output of aggregated metric series."""
from __future__ import annotations

import csv
import subprocess
from pathlib import Path

import numpy as np

from .montecarlo import MetricSeries, MonteCarloResult

SERIES_HEADER = ["k", "gospa_total", "gospa_loc", "gospa_missed", "gospa_false", "d_center", "d_tracks", "n_est_mean"]
_COLUMNS = ["gospa_total", "gospa_loc", "gospa_missed", "gospa_false", "d_center", "d_tracks", "n_est"]


def _fmt(v: float) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def write_series_csv(series: MetricSeries, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        for i, k in enumerate(series.k):
            w.writerow([int(k)] + [_fmt(series.means[c][i]) for c in _COLUMNS])


def read_series_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {h: np.array([float(r[h]) if r[h] != "" else np.nan for r in rows]) for h in SERIES_HEADER}


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def series_filename(scenario: int, tracker: str) -> str:
    return f"scenario{scenario}_{tracker}.csv"


def write_outputs(result: MonteCarloResult, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    paths = []
    for name, s in result.series.items():
        p = out / series_filename(cfg.scenario, name)
        write_series_csv(s, p)
        paths.append(p)
    p = out / "summary.csv"
    version = git_describe()
    header = ["tracker", "scenario", "seed", "runs", "failed_runs"] + SERIES_HEADER[1:] + ["version"]
    rows = []
    if p.exists():
        # keep the rows of other scenarios written to the same directory
        with open(p, newline="", encoding="utf-8") as fh:
            rd = csv.reader(fh)
            if next(rd, None) == header:
                rows = [r for r in rd if r and r[1] != str(cfg.scenario)]
    for name, s in result.series.items():
        rows.append(
            [name, str(cfg.scenario), str(cfg.seed), str(cfg.runs), str(len(s.failed_runs))]
            + [_fmt(s.grand_mean(c)) for c in _COLUMNS]
            + [version]
        )
    rows.sort(key=lambda r: int(r[1]))
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    paths.append(p)
    return paths
