"""Two-target ground truth for the three benchmark scenarios.

Targets move on piecewise-linear paths mirrored about the x-axis, sampled at
integer steps ``k = 0..steps``. Both targets live for the whole run.

1. Parallel approach: 210 m apart, closing at 1 m/s each to 10 m at k=100,
   parallel for 100 steps, then separating again.
2. Parallel start 10 m apart until k=150, then diverging at 2 m/s each
   (velocity ramped over two steps to bound the acceleration).
3. Straight crossing at k=150.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROI_CENTERED = (-750.0, 750.0, -750.0, 750.0)
ROI_SHIFTED = (0.0, 1500.0, -750.0, 750.0)


@dataclass(frozen=True)
class ScenarioDefinition:
    id: int
    steps: int
    truth: np.ndarray  # (n_targets, steps + 1, 4)
    alive: np.ndarray  # (n_targets, steps + 1) bool
    roi: tuple[float, float, float, float]

    @property
    def n_targets(self) -> int:
        return self.truth.shape[0]

    def positions(self, k: int) -> np.ndarray:
        """Positions of the targets alive at step ``k``, in target order."""
        return self.truth[self.alive[:, k], k, :2]

    def y_pair(self, k: int) -> np.ndarray:
        return self.truth[:, k, 1]


def _y_scenario1(k, h):
    return np.piecewise(
        k.astype(float),
        [k <= 100, (k > 100) & (k <= 200), k > 200],
        [lambda k: h + 100.0 - k, h, lambda k: h + (k - 200.0)],
    )


def _y_scenario2(k, h):
    y = np.full(k.shape, h)
    y[k == 151] = h + 1.0
    after = k >= 152
    y[after] = h + 1.0 + 2.0 * (k[after] - 151)
    return y


def _build(id_, x, y, roi, steps):
    pos = np.stack([np.stack([x, y], axis=-1), np.stack([x, -y], axis=-1)])
    vel = np.diff(pos, axis=1)
    vel = np.concatenate([vel[:, :1], vel], axis=1)
    truth = np.concatenate([pos, vel], axis=-1)
    alive = np.ones(truth.shape[:2], dtype=bool)
    return ScenarioDefinition(id_, steps, truth, alive, roi)


def generate_scenario(id_: int, steps: int = 300, half_separation: float = 5.0) -> ScenarioDefinition:
    """Ground truth of scenario ``id_``; geometry is defined for ``steps = 300``.

    A smaller ``steps`` truncates the same trajectories. ``half_separation``
    is the y-offset of each target while the pair is closest in scenarios 1
    and 2 (the default gives a separation of sigma_v = 10 m).
    """
    if not half_separation >= 0:
        raise ValueError("half_separation must be nonnegative")
    if id_ not in (1, 2, 3):
        raise ValueError(f"unknown scenario {id_!r}; expected 1, 2 or 3")
    if not 1 <= steps <= 300:
        raise ValueError("steps must lie in 1..300")
    k = np.arange(301)
    if id_ == 1:
        sc = _build(1, -600.0 + 4.0 * k, _y_scenario1(k, half_separation), ROI_CENTERED, 300)
    elif id_ == 2:
        sc = _build(2, 50.0 + 4.0 * k, _y_scenario2(k, half_separation), ROI_SHIFTED, 300)
    else:
        sc = _build(3, -600.0 + 4.0 * k, -300.0 + 2.0 * k, ROI_CENTERED, 300)
    if steps == 300:
        return sc
    return ScenarioDefinition(sc.id, steps, sc.truth[:, : steps + 1], sc.alive[:, : steps + 1], sc.roi)


def max_implied_acceleration(sc: ScenarioDefinition, T: float = 1.0) -> float:
    v = np.diff(sc.truth[:, :, :2], axis=1) / T
    return float(np.max(np.linalg.norm(np.diff(v, axis=1), axis=-1)) / T)
