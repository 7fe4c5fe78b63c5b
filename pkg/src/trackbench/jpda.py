"""Joint probabilistic data association filter.

Gaussian tracks, soft association by summing over all joint events of each
gate cluster, moment-matched PDA updates, M/N confirmation and a
missed-detection streak for termination. New tentative tracks are started by
two-point differencing of measurements that fell in no gate on two
consecutive scans.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .association import (
    DEFAULT_EVENT_CAP,
    AssociationWeights,
    connected_components,
    event_weights,
    exact_association_marginals,
    gate_matrix,
    mahalanobis2,
    make_weights,
)
from .models import H, GaussianBelief, MotionModel, Scan, SensorModel, kalman_update, predict_moments, symmetrize


@dataclass
class JpdaConfig:
    gate_gamma: float = 13.82
    confirm_m: int = 10
    confirm_n: int = 16
    max_missed: int = 13
    v_max: float = 50.0
    event_cap: int = DEFAULT_EVENT_CAP
    # a scan counts as a hit when the track's detection probability mass reaches this
    hit_threshold: float = 0.5

    def __post_init__(self):
        if not 1 <= self.confirm_m <= self.confirm_n:
            raise ValueError("JPDA confirmation logic needs 1 <= M <= N")
        if self.max_missed < 1:
            raise ValueError("max_missed must be at least 1")


@dataclass
class JpdaTrack:
    id: int
    belief: GaussianBelief
    status: Literal["tentative", "confirmed", "dead"] = "tentative"
    assoc_history: deque = field(default_factory=deque)
    missed_streak: int = 0

    @property
    def alive(self) -> bool:
        return self.status != "dead"


@dataclass
class JpdaState:
    tracks: list[JpdaTrack] = field(default_factory=list)
    # measurements of the previous scan that fell in no gate
    pending: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    next_id: int = 1


def _innovation(belief: GaussianBelief, sm: SensorModel):
    return H @ belief.mean, H @ belief.cov @ H.T + sm.R


def event_posterior(a: Sequence[int], w: AssociationWeights) -> float:
    """Unnormalized probability of one joint association event.

    The product of the per-track weights; unclaimed measurements contribute
    their clutter weight, which is 1 in the normalized form.
    """
    return float(event_weights(np.asarray(a, dtype=int).reshape(1, -1), w)[0])


def pda_update(belief: GaussianBelief, beta_row: np.ndarray, meas: np.ndarray, sm: SensorModel) -> GaussianBelief:
    """Moment-matched Gaussian of the association mixture for one track."""
    beta_row = np.asarray(beta_row, dtype=float)
    meas = np.asarray(meas, dtype=float).reshape(-1, 2)
    x, P = belief.mean, belief.cov
    b0 = beta_row[0]
    if b0 >= 1.0:
        return GaussianBelief(x.copy(), P.copy())
    S = H @ P @ H.T + sm.R
    K = np.linalg.solve(S, H @ P).T
    P_upd = symmetrize(P - K @ S @ K.T)
    idx = np.flatnonzero(beta_row[1:] > 0)
    nus = meas[idx] - H @ x
    b = beta_row[1 + idx]
    nu_bar = b @ nus
    mean = x + K @ nu_bar
    spread = K @ (np.einsum("i,ij,ik->jk", b, nus, nus) - np.outer(nu_bar, nu_bar)) @ K.T
    cov = b0 * P + (1.0 - b0) * P_upd + spread
    return GaussianBelief(mean, symmetrize(cov))


def _two_point_init(z_prev: np.ndarray, z_cur: np.ndarray, T: float, sigma_v: float) -> GaussianBelief:
    s2 = sigma_v**2
    mean = np.r_[z_cur, (z_cur - z_prev) / T]
    block = np.array([[s2, s2 / T], [s2 / T, 2 * s2 / T**2]])
    cov = np.zeros((4, 4))
    for ax in range(2):
        ix = [ax, ax + 2]
        cov[np.ix_(ix, ix)] = block
    return GaussianBelief(mean, cov)


def manage_tracks(
    tracks: list[JpdaTrack],
    unassociated_meas: np.ndarray,
    cfg: JpdaConfig,
    mm: MotionModel,
    sm: SensorModel,
    prev_unassociated: np.ndarray | None = None,
    next_id: int = 1,
) -> tuple[list[JpdaTrack], int]:
    """Confirmation, termination and initiation.

    Hit/miss flags must already be appended to each track's history.
    Returns the surviving tracks (new ones last) and the next free id.
    """
    out = []
    for t in tracks:
        if not t.alive:
            continue
        hits = sum(t.assoc_history)
        if t.status == "tentative":
            if hits >= cfg.confirm_m:
                t.status = "confirmed"
            elif len(t.assoc_history) - hits > cfg.confirm_n - cfg.confirm_m:
                # cannot reach M hits within the window any more
                t.status = "dead"
        if t.missed_streak > cfg.max_missed:
            t.status = "dead"
        if t.alive:
            out.append(t)

    z_cur = np.asarray(unassociated_meas, dtype=float).reshape(-1, 2)
    z_prev = np.zeros((0, 2)) if prev_unassociated is None else np.asarray(prev_unassociated).reshape(-1, 2)
    if len(z_cur) and len(z_prev):
        d = np.linalg.norm(z_cur[:, None, :] - z_prev[None, :, :], axis=-1)
        cand = np.argwhere(d <= cfg.v_max * mm.T)
        order = np.argsort(d[cand[:, 0], cand[:, 1]], kind="stable")
        used_cur, used_prev = set(), set()
        started: list[np.ndarray] = []
        S0 = 2 * sm.sigma_v**2 * np.eye(2)
        for ci, pi in cand[order]:
            if ci in used_cur or pi in used_prev:
                continue
            # one new track per cluster of nearby measurements
            if any(mahalanobis2(z_cur[ci] - z0, S0) <= cfg.gate_gamma for z0 in started):
                continue
            used_cur.add(ci)
            used_prev.add(pi)
            started.append(z_cur[ci])
            hist = deque([True, True], maxlen=cfg.confirm_n)
            out.append(JpdaTrack(next_id, _two_point_init(z_prev[pi], z_cur[ci], mm.T, sm.sigma_v), "tentative", hist))
            next_id += 1
    return out, next_id


def jpda_step(
    state: JpdaState, scan: Scan, mm: MotionModel, sm: SensorModel, cfg: JpdaConfig
) -> tuple[JpdaState, dict[int, np.ndarray]]:
    """One predict / associate / update / manage cycle.

    Returns the new state and, per track id, the association marginals over
    ``[miss, z_1, ..., z_m]`` used for its update.
    """
    ids = [t.id for t in state.tracks]
    if len(set(ids)) != len(ids):
        raise ValueError("track ids must be pairwise distinct")
    Z = scan.measurements
    m_k = len(Z)
    tracks = [replace(t, belief=predict_moments(t.belief, mm), assoc_history=deque(t.assoc_history, maxlen=cfg.confirm_n)) for t in state.tracks if t.alive]
    n = len(tracks)
    if n:
        zhat = np.array([H @ t.belief.mean for t in tracks])
        S = np.array([H @ t.belief.cov @ H.T + sm.R for t in tracks])
        gm = gate_matrix(zhat, S, Z, cfg.gate_gamma)
    else:
        zhat, S, gm = np.zeros((0, 2)), np.zeros((0, 2, 2)), np.zeros((0, m_k), dtype=bool)

    betas: dict[int, np.ndarray] = {}
    beta = np.zeros((n, m_k + 1))
    beta[:, 0] = 1.0
    if n and m_k:
        detect = np.zeros((n, m_k))
        rows, cols = np.nonzero(gm)
        if len(rows):
            nu = Z[cols] - zhat[rows]
            Sg = S[rows]
            det = Sg[:, 0, 0] * Sg[:, 1, 1] - Sg[:, 0, 1] * Sg[:, 1, 0]
            detect[rows, cols] = sm.p_d * np.exp(-0.5 * mahalanobis2(nu, Sg)) / (2 * np.pi * np.sqrt(det))
        w = make_weights(detect, np.full(n, 1.0 - sm.p_d), sm.clutter_intensity(Z), np.zeros(m_k))
        for r, c in connected_components(gm):
            if len(c) == 0:
                continue
            sub = AssociationWeights(w.psi[np.ix_(r, np.r_[0, c + 1])], w.xi[c], w.clutter[c])
            marg = exact_association_marginals(sub, gm[np.ix_(r, c)], cfg.event_cap)
            beta[np.ix_(r, np.r_[0, c + 1])] = marg.beta

    for j, t in enumerate(tracks):
        t.belief = pda_update(t.belief, beta[j], Z, sm)
        hit = 1.0 - beta[j, 0] >= cfg.hit_threshold
        t.assoc_history.append(bool(hit))
        t.missed_streak = 0 if hit else t.missed_streak + 1
        betas[t.id] = beta[j].copy()

    unassoc = Z[~gm.any(axis=0)] if m_k else np.zeros((0, 2))
    tracks, next_id = manage_tracks(tracks, unassoc, cfg, mm, sm, state.pending, state.next_id)
    return JpdaState(tracks, unassoc, next_id), betas


class JpdaTracker:
    """Stateful wrapper used by the Monte Carlo harness."""

    name = "jpda"

    def __init__(self, mm: MotionModel, sm: SensorModel, cfg: JpdaConfig | None = None):
        self.mm, self.sm = mm, sm
        self.cfg = cfg or JpdaConfig()
        self.state = JpdaState()

    def step(self, scan: Scan) -> list[tuple[int, np.ndarray]]:
        self.state, _ = jpda_step(self.state, scan, self.mm, self.sm, self.cfg)
        return [(t.id, t.belief.mean.copy()) for t in self.state.tracks if t.status == "confirmed"]
