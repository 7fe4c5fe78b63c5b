from __future__ import annotations

import numpy as np

from ..models import Scan, SensorModel
from .scenarios import ScenarioDefinition

# stream tags for per-(run, scan) substreams
MEASUREMENT_STREAM = 0
TRACKER_STREAM = 1


def substream(seed: int, run: int, k: int, tag: int) -> np.random.Generator:
    """Independent generator for one (run, scan, purpose) triple of a master seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, run, k, tag]))


def simulate_measurements(sc: ScenarioDefinition, sm: SensorModel, seed: int, run: int = 0) -> list[Scan]:
    """Detections, Poisson clutter on the ROI, shuffled, for ``k = 1..steps``."""
    xmin, xmax, ymin, ymax = sm.roi
    scans = []
    for k in range(1, sc.steps + 1):
        rng = substream(seed, run, k, MEASUREMENT_STREAM)
        pos = sc.positions(k)
        detected = rng.random(len(pos)) < sm.p_d
        z_t = pos[detected] + sm.sigma_v * rng.standard_normal((int(detected.sum()), 2))
        n_c = rng.poisson(sm.mu_c)
        z_c = np.column_stack([rng.uniform(xmin, xmax, n_c), rng.uniform(ymin, ymax, n_c)])
        z = np.vstack([z_t, z_c])
        scans.append(Scan(k, z[rng.permutation(len(z))]))
    return scans
