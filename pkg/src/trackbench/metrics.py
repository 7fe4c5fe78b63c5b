"""GOSPA with its decomposition and the two-track diagnostics D-Center / D-Tracks."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .association import best_assignment


@dataclass(frozen=True)
class GospaResult:
    total: float
    localization: float
    missed: float
    false_: float


@dataclass(frozen=True)
class TrackDistanceSample:
    k: int
    d_center: float | None
    d_tracks: float | None


def gospa(truth, est, p: float = 1.0, c: float = 50.0, alpha: float = 2.0) -> GospaResult:
    """GOSPA between two finite point sets with alpha = 2.

    The decomposition fields are the p-th power contributions, so for
    ``p = 1`` they add up to ``total``.
    """
    if alpha != 2:
        raise ValueError("only alpha = 2 has the localization/missed/false decomposition")
    if p < 1 or c <= 0:
        raise ValueError("GOSPA needs p >= 1 and c > 0")
    X = np.asarray(truth, dtype=float).reshape(-1, 2)
    Y = np.asarray(est, dtype=float).reshape(-1, 2)
    half = c**p / alpha
    loc = 0.0
    n_pairs = 0
    if len(X) and len(Y):
        d = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=-1)
        # pairing two points replaces two c^p/2 penalties; pairs at d >= c never help
        cost = np.where(d < c, d**p - c**p, np.inf)
        assignment, _ = best_assignment(cost, unassigned_cost=0.0)
        rows = np.flatnonzero(assignment >= 0)
        loc = float(np.sum(d[rows, assignment[rows]] ** p))
        n_pairs = len(rows)
    missed = half * (len(X) - n_pairs)
    false_ = half * (len(Y) - n_pairs)
    raw = loc + missed + false_
    return GospaResult(raw ** (1.0 / p), loc, missed, false_)


def gnn_select_two(est, truth) -> list[np.ndarray]:
    """The (at most) two estimates matched to the two true positions.

    With two or more estimates the ordered pair of distinct estimates
    minimizing the summed distance to ``truth[0]`` and ``truth[1]`` is
    returned, first element matched to ``truth[0]``. Ties go to the pair that
    comes first in lexicographic index order.
    """
    E = np.asarray(est, dtype=float).reshape(-1, 2)
    X = np.asarray(truth, dtype=float).reshape(-1, 2)
    if len(E) < 2:
        return [e for e in E]
    d = np.linalg.norm(E[:, None, :] - X[None, :, :], axis=-1)
    best, pair = np.inf, None
    for i, j in permutations(range(len(E)), 2):
        s = d[i, 0] + d[j, 1]
        if s < best:
            best, pair = s, (i, j)
    return [E[pair[0]], E[pair[1]]]


def d_center(y) -> float | None:
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) < 2:
        return None
    return float((abs(y[0]) + abs(y[1])) / 2)


def d_tracks(y) -> float | None:
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) < 2:
        return None
    return float(abs(y[0] - y[1]))


def track_distances(k: int, est, truth) -> TrackDistanceSample:
    sel = gnn_select_two(est, truth)
    y = [s[1] for s in sel]
    return TrackDistanceSample(k, d_center(y), d_tracks(y))
