"""Particle-based belief propagation tracker.

Every potential target (PT) carries an existence probability and a kinematic
belief. Legacy PTs are predicted with survival, the association marginals
come from loopy BP on the association graph, beliefs are reweighted with the
resulting mixture and systematically resampled, and each measurement spawns
a new PT whose existence is the BP belief that the measurement stems from a
new target.

A freshly spawned PT has an exactly Gaussian kinematic belief (uniform
position prior times the Gaussian likelihood, Gaussian velocity prior), and
prediction keeps it Gaussian. Such PTs keep the closed form until a
measurement falls into their gate; only then are ``n_particles`` particles
drawn. Drawing them earlier and propagating would give the same
distribution, so this only skips work for clutter-born PTs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .association import (
    AssociationMarginals,
    AssociationWeights,
    bp_association_marginals,
    gate_matrix,
    make_weights,
)
from .models import MotionModel, ParticleBelief, Scan, SensorModel, predict_arrays, safe_cholesky, sample_transition

log = logging.getLogger(__name__)


@dataclass
class BpConfig:
    n_particles: int = 5000
    p_th: float = 0.5
    p_pr: float = 1e-5
    max_iter: int = 100
    tol: float = 1e-6
    damping: float = 0.0
    birth_vel_std: float = 10.0
    # only used to skip negligible likelihood evaluations, hence much wider than the JPDA/MHT gate
    gate_gamma: float = 41.45

    def __post_init__(self):
        if not 0.0 < self.p_pr < self.p_th < 1.0:
            raise ValueError("BP thresholds need 0 < p_pr < p_th < 1")
        if self.n_particles < 1:
            raise ValueError("n_particles must be positive")


@dataclass
class PtBelief:
    id: int
    existence: float
    particles: np.ndarray | None = None  # (J, 4), equally weighted
    mean: np.ndarray | None = None  # closed form while particles is None
    cov: np.ndarray | None = None
    kind: str = "legacy"
    # transitions not yet applied to ``particles``; ``mom`` is always current
    pending: int = 0
    # cached (mean, cov) of the particle set and per-measurement particle likelihoods
    mom: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)
    lik: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.existence <= 1.0:
            raise ValueError(f"existence {self.existence} outside [0, 1]")
        if self.particles is None and (self.mean is None or self.cov is None):
            raise ValueError("PT belief needs particles or Gaussian moments")

    @property
    def is_particle(self) -> bool:
        return self.particles is not None

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        if self.particles is None:
            return self.mean, self.cov
        if self.mom is None:
            mean = _average(self.particles)
            d = self.particles - mean
            self.mom = (mean, d.T @ d / len(d))
        return self.mom

    def state_mean(self) -> np.ndarray:
        return self.moments()[0]

    def particle_belief(self) -> ParticleBelief:
        if self.particles is None or self.pending:
            raise ValueError("belief has not been sampled")
        J = len(self.particles)
        return ParticleBelief(self.particles, np.full(J, 1.0 / J))

    def materialize(self, J: int, rng: np.random.Generator, mm: MotionModel | None = None) -> None:
        """Bring ``particles`` up to date, drawing them from the Gaussian if needed."""
        if self.particles is None:
            L = safe_cholesky(self.cov)
            self.particles = self.mean + rng.standard_normal((J, 4)) @ L.T
            self.mean = self.cov = None
            self.mom = self.lik = None
        elif self.pending:
            if mm is None:
                raise ValueError("pending transitions need the motion model")
            self.particles = sample_transition(self.particles, mm, rng, self.pending)
            self.pending = 0
            self.mom = self.lik = None


@dataclass
class BpState:
    beliefs: list[PtBelief] = field(default_factory=list)
    next_id: int = 1


def _average(X: np.ndarray) -> np.ndarray:
    """Column means; a matrix-vector product is much faster than ``mean(axis=0)`` here."""
    return np.full(len(X), 1.0 / len(X)) @ X


def systematic_resample(weights: np.ndarray, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Indices drawn by systematic resampling of normalized ``weights``."""
    weights = np.asarray(weights, dtype=float)
    n = len(weights) if n is None else n
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    # particle i is picked once per position (u + j) / n falling in [cdf[i-1], cdf[i])
    below = np.ceil(cdf * n - rng.random()).astype(np.int64).clip(0, n)
    return np.repeat(np.arange(len(weights)), np.diff(below, prepend=0))


def bp_predict(beliefs: list[PtBelief], mm: MotionModel, rng: np.random.Generator) -> list[PtBelief]:
    out = []
    for b in beliefs:
        if b.particles is not None:
            # the particles are propagated lazily (see materialize); gating and
            # estimation only need the moments, which the linear model predicts exactly
            mom = predict_arrays(*b.moments(), mm)
            nb = PtBelief(b.id, mm.p_s * b.existence, particles=b.particles, pending=b.pending + 1, mom=mom)
        else:
            mean, cov = predict_arrays(b.mean, b.cov, mm)
            nb = PtBelief(b.id, mm.p_s * b.existence, mean=mean, cov=cov)
        out.append(nb)
    return out


def gate_beliefs(beliefs: list[PtBelief], scan: Scan, sm: SensorModel, gamma: float) -> np.ndarray:
    Z = scan.measurements
    if not beliefs or not len(Z):
        return np.zeros((len(beliefs), len(Z)), dtype=bool)
    mom = [b.moments() for b in beliefs]
    zhat = np.array([m[:2] for m, _ in mom])
    S = np.array([c[:2, :2] + sm.R for _, c in mom])
    return gate_matrix(zhat, S, Z, gamma)


def _particle_lik(b: PtBelief, Z: np.ndarray, sm: SensorModel) -> np.ndarray:
    """Per-particle likelihoods (J, len(Z))."""
    if b.pending:
        raise ValueError("particles are not propagated to the current scan")
    var = sm.sigma_v**2
    dx = b.particles[:, 0, None] - Z[:, 0]
    dy = b.particles[:, 1, None] - Z[:, 1]
    e = dx * dx
    e += dy * dy
    e *= -0.5 / var
    np.exp(e, out=e)
    e /= 2 * np.pi * var
    return e


def compute_weights(
    beliefs: list[PtBelief], scan: Scan, sm: SensorModel, gm: np.ndarray | None = None, gamma: float = 41.45
) -> AssociationWeights:
    """Association weights of the legacy PTs for one scan.

    Sampled PTs use the particle average of the likelihood, Gaussian PTs the
    closed-form predictive density. Pairs outside the gate get weight 0.
    """
    Z = scan.measurements
    n, M = len(beliefs), len(Z)
    if gm is None:
        gm = gate_beliefs(beliefs, scan, sm, gamma)
    detect = np.zeros((n, M))
    for j, b in enumerate(beliefs):
        cols = np.flatnonzero(gm[j])
        if not len(cols) or b.existence == 0:
            continue
        if b.particles is not None:
            lik = _particle_lik(b, Z[cols], sm)
            b.lik = (cols, lik)
            L = _average(lik)
        else:
            S = b.cov[:2, :2] + sm.R
            d = Z[cols] - b.mean[:2]
            det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
            L = np.exp(-0.5 * np.einsum("mi,ij,mj->m", d, np.linalg.inv(S), d)) / (2 * np.pi * np.sqrt(det))
        detect[j, cols] = b.existence * sm.p_d * L
    r = np.array([b.existence for b in beliefs])
    miss = 1.0 - r * sm.p_d
    # uniform birth position prior integrates the likelihood to f_b(z) away from the ROI edge
    xi_raw = sm.p_d * sm.mu_b * sm.birth_pdf(Z) if M else np.zeros(0)
    return make_weights(detect, miss, sm.clutter_intensity(Z) if M else np.zeros(0), xi_raw)


def bp_update(
    beliefs: list[PtBelief],
    weights: AssociationWeights,
    marginals: AssociationMarginals,
    scan: Scan,
    sm: SensorModel,
    rng: np.random.Generator,
    n_particles: int | None = None,
    mm: MotionModel | None = None,
    p_pr: float = 0.0,
) -> tuple[list[PtBelief], list[int]]:
    """Reweight and resample each legacy PT with its association marginals.

    With ``beta`` the marginals of PT ``j`` and ``r`` its predicted existence,
    the posterior is ``beta_0 * r(1-p_d)/psi_0 * f(x) + sum_m beta_m *
    f(x) f(z_m|x) / L_m`` where ``L_m`` is the predicted likelihood of ``z_m``;
    its total mass is the posterior existence. PTs whose posterior existence
    falls below ``p_pr`` are about to be pruned, so they are not resampled.
    Returns the updated beliefs and the ids of PTs whose weights all vanished.
    """
    Z = scan.measurements
    out, flagged = [], []
    for j, b in enumerate(beliefs):
        beta = marginals.beta[j]
        r = b.existence
        psi0 = weights.psi[j, 0]
        a0 = beta[0] * r * (1.0 - sm.p_d) / psi0 if psi0 > 0 else 0.0
        cols = np.flatnonzero(beta[1:] > 0)
        if not len(cols):
            ex = min(max(a0, 0.0), 1.0)
            out.append(PtBelief(b.id, ex, b.particles, b.mean, b.cov, b.kind, b.pending, mom=b.mom))
            continue
        ex = a0 + beta[1 + cols].sum()
        if ex < p_pr:
            out.append(PtBelief(b.id, max(float(ex), 0.0), b.particles, b.mean, b.cov, b.kind, b.pending, mom=b.mom))
            continue
        J = n_particles or (len(b.particles) if b.particles is not None else 5000)
        b.materialize(J, rng, mm)
        lik = None
        if b.lik is not None:
            # reuse the likelihoods evaluated for the association weights
            cc, cl = b.lik
            pos = np.searchsorted(cc, cols).clip(max=max(len(cc) - 1, 0))
            if len(cc) and np.array_equal(cc[pos], cols):
                lik = cl if len(pos) == len(cc) else cl[:, pos]
        if lik is None:
            lik = _particle_lik(b, Z[cols], sm)
        L = _average(lik)
        coef = np.where(L > 0, beta[1 + cols] / np.where(L > 0, L, 1.0), 0.0)
        w = a0 + lik @ coef
        ex = a0 + beta[1 + cols][L > 0].sum()
        total = w.sum()
        if not total > 0 or not np.isfinite(total):
            flagged.append(b.id)
            out.append(PtBelief(b.id, 0.0, particles=b.particles))
            continue
        idx = systematic_resample(w / total, rng, J)
        out.append(PtBelief(b.id, float(min(max(ex, 0.0), 1.0)), particles=b.particles[idx]))
    return out, flagged


def init_new_pts(
    scan: Scan,
    marginals: AssociationMarginals,
    weights: AssociationWeights,
    sm: SensorModel,
    cfg: BpConfig,
    next_id: int,
) -> list[PtBelief]:
    """One new PT per measurement; existence is the BP belief in a new target."""
    Z = scan.measurements
    s2, v2 = sm.sigma_v**2, cfg.birth_vel_std**2
    cov = np.diag([s2, s2, v2, v2])
    unclaimed = weights.unclaimed
    out = []
    for m in range(len(Z)):
        frac = weights.xi[m] / unclaimed[m] if unclaimed[m] > 0 else 0.0
        ex = float(np.clip(marginals.kappa[m] * frac, 0.0, 1.0))
        out.append(PtBelief(next_id + m, ex, mean=np.r_[Z[m], 0.0, 0.0], cov=cov.copy(), kind="new"))
    return out


def extract_estimates(beliefs: list[PtBelief], cfg: BpConfig) -> tuple[list[tuple[int, np.ndarray]], list[PtBelief]]:
    """Prune PTs below ``p_pr`` and report the MMSE state of PTs above ``p_th``."""
    kept = [b for b in beliefs if b.existence >= cfg.p_pr]
    est = [(b.id, b.state_mean().copy()) for b in kept if b.existence > cfg.p_th]
    return est, kept


def bp_step(
    state: BpState, scan: Scan, mm: MotionModel, sm: SensorModel, cfg: BpConfig, rng: np.random.Generator
) -> tuple[BpState, list[tuple[int, np.ndarray]]]:
    legacy = bp_predict(state.beliefs, mm, rng)
    for b in legacy:
        b.kind = "legacy"
    gm = gate_beliefs(legacy, scan, sm, cfg.gate_gamma)
    for b, row in zip(legacy, gm):
        # Gaussian PTs are weighted in closed form; particles need the pending transitions
        if row.any() and b.particles is not None:
            b.materialize(cfg.n_particles, rng, mm)
    w = compute_weights(legacy, scan, sm, gm)
    marg = bp_association_marginals(w, gm, cfg.max_iter, cfg.tol, cfg.damping)
    legacy, flagged = bp_update(legacy, w, marg, scan, sm, rng, cfg.n_particles, mm, cfg.p_pr)
    if flagged:
        log.debug("scan %d: PTs %s lost all particle weight", scan.k, flagged)
    new = init_new_pts(scan, marg, w, sm, cfg, state.next_id)
    est, kept = extract_estimates(legacy + new, cfg)
    return BpState(kept, state.next_id + len(new)), est


class BpTracker:
    name = "bp"

    def __init__(self, mm: MotionModel, sm: SensorModel, cfg: BpConfig | None = None):
        self.mm, self.sm = mm, sm
        self.cfg = cfg or BpConfig()
        self.state = BpState()

    def step(self, scan: Scan, rng: np.random.Generator) -> list[tuple[int, np.ndarray]]:
        self.state, est = bp_step(self.state, scan, self.mm, self.sm, self.cfg, rng)
        return est
