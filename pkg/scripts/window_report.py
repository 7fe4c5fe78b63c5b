"""Print the window statistics used by the scenario checks from a results directory.

    python scripts/window_report.py results/
"""
import argparse
from pathlib import Path

import numpy as np

from trackbench.harness.io import read_series_csv, series_filename

# (scenario, tracker, column, k_lo, k_hi, inclusive)
WINDOWS = [
    (1, "jpda", "d_tracks", 150, 200, True),
    (1, "bp", "d_tracks", 150, 200, True),
    (1, "mht", "d_tracks", 150, 200, True),
    (1, "jpda", "gospa_loc", 100, 200, True),
    (1, "jpda", "gospa_loc", 200, 240, False),
    (1, "mht", "d_center", 120, 180, True),
    (1, "bp", "d_center", 120, 180, True),
    (1, "jpda", "d_center", 120, 180, True),
    (2, "jpda", "gospa_loc", 20, 140, True),
    (2, "jpda", "gospa_missed", 20, 140, True),
    (2, "mht", "gospa_missed", 20, 140, True),
    (2, "bp", "gospa_missed", 20, 140, True),
    (3, "mht", "gospa_loc", 125, 175, True),
    (3, "bp", "gospa_loc", 125, 175, True),
    (3, "jpda", "gospa_loc", 125, 175, True),
    (3, "jpda", "gospa_loc", 175, 225, True),
]


def window(series, column, lo, hi, inclusive=True):
    k = series["k"]
    sel = (k >= lo) & (k <= hi) if inclusive else (k > lo) & (k < hi)
    v = series[column][sel]
    v = v[np.isfinite(v)]
    return float(v.mean()) if len(v) else float("nan")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("results", type=Path)
    args = ap.parse_args()
    for sc, tr, col, lo, hi, inc in WINDOWS:
        p = args.results / series_filename(sc, tr)
        if not p.exists():
            continue
        s = read_series_csv(p)
        extra = ""
        if col == "gospa_loc" and not inc:
            extra = f"  peak {np.nanmax(s[col][(s['k'] > lo) & (s['k'] < hi)]):.3f}"
        br = "[]" if inc else "()"
        print(f"scenario {sc} {tr:4s} {col:12s} k{br[0]}{lo},{hi}{br[1]}: {window(s, col, lo, hi, inc):8.3f}{extra}")


if __name__ == "__main__":
    main()
