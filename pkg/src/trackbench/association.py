"""Data association machinery shared by the trackers.

Association weights use the convention of the joint posterior factors: row
``j`` of ``psi`` holds the weight of "PT j missed" in column 0 and of "PT j
generated measurement m" in column ``m``. Each measurement that is not claimed
by a legacy PT contributes ``clutter[m] + xi[m]`` (clutter or a new target).
When every clutter intensity is positive the weights are normalized by it,
so ``clutter`` is all ones; with zero clutter the raw intensities are kept.
"""
from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import chi2

log = logging.getLogger(__name__)

DEFAULT_EVENT_CAP = 10**6


class DegenerateTrackError(ValueError):
    """Innovation covariance is singular."""


class EventCapExceeded(RuntimeError):
    """Joint event enumeration would exceed the configured cap."""


@dataclass
class AssociationWeights:
    psi: np.ndarray  # (n_pt, m_k + 1)
    xi: np.ndarray  # (m_k,)
    clutter: np.ndarray | None = None  # (m_k,), defaults to ones

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=float)
        if self.psi.ndim == 1:
            self.psi = self.psi.reshape(1, -1)
        self.xi = np.asarray(self.xi, dtype=float).reshape(-1)
        if self.clutter is None:
            self.clutter = np.ones_like(self.xi)
        self.clutter = np.asarray(self.clutter, dtype=float).reshape(-1)
        if self.psi.shape[1] != len(self.xi) + 1:
            raise ValueError("psi must have one column per measurement plus the miss column")
        if np.any(self.psi < 0) or np.any(self.xi < 0) or np.any(self.clutter < 0):
            raise ValueError("association weights must be nonnegative")
        if not (np.all(np.isfinite(self.psi)) and np.all(np.isfinite(self.xi))):
            raise ValueError("association weights must be finite")

    @property
    def n_targets(self) -> int:
        return self.psi.shape[0]

    @property
    def n_meas(self) -> int:
        return len(self.xi)

    @property
    def unclaimed(self) -> np.ndarray:
        return self.clutter + self.xi


@dataclass
class AssociationMarginals:
    beta: np.ndarray  # (n_pt, m_k + 1), rows sum to one
    kappa: np.ndarray  # (m_k,) probability of not originating from any legacy PT
    converged: bool = True
    iterations: int = 0
    deltas: list[float] = field(default_factory=list)
    # BP messages, kept for the measurement-side beliefs of new PTs
    mu_tm: np.ndarray | None = None


def make_weights(
    detect: np.ndarray, miss: np.ndarray, clutter_intensity: np.ndarray, xi_raw: np.ndarray
) -> AssociationWeights:
    """Assemble weights from unnormalized single-target terms.

    ``detect[j, m]`` is ``p_d * f(z_m | PT j)`` (times existence where relevant),
    ``miss[j]`` the missed-detection weight and ``xi_raw[m]`` the unnormalized
    new-target weight. Columns are divided by the clutter intensity when it is
    positive everywhere.
    """
    clutter_intensity = np.asarray(clutter_intensity, dtype=float).reshape(-1)
    xi_raw = np.asarray(xi_raw, dtype=float).reshape(-1)
    miss = np.asarray(miss, dtype=float).reshape(-1)
    detect = np.asarray(detect, dtype=float).reshape(len(miss), len(xi_raw))
    if clutter_intensity.size and np.all(clutter_intensity > 0):
        psi = np.hstack([miss[:, None], detect / clutter_intensity])
        return AssociationWeights(psi, xi_raw / clutter_intensity, np.ones_like(xi_raw))
    return AssociationWeights(np.hstack([miss[:, None], detect]), xi_raw, clutter_intensity.copy())


def chi2_gate_threshold(prob: float, dof: int = 2) -> float:
    if not 0.0 < prob < 1.0:
        raise ValueError("gate coverage probability must lie in (0, 1)")
    return float(chi2.ppf(prob, dof))


def mahalanobis2(nu: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Squared Mahalanobis distance with broadcasting; ``S`` is (..., 2, 2)."""
    nu = np.asarray(nu, dtype=float)
    S = np.asarray(S, dtype=float)
    det = S[..., 0, 0] * S[..., 1, 1] - S[..., 0, 1] * S[..., 1, 0]
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        raise DegenerateTrackError("innovation covariance is not positive definite")
    a, b, c, d = S[..., 0, 0], S[..., 0, 1], S[..., 1, 0], S[..., 1, 1]
    x, y = nu[..., 0], nu[..., 1]
    # inverse of a 2x2 written out; S is symmetric in practice
    return (d * x * x - (b + c) * x * y + a * y * y) / det


def gate(pred_meas_mean: np.ndarray, innov_cov: np.ndarray, z: np.ndarray, gamma: float) -> bool:
    nu = np.asarray(z, dtype=float) - np.asarray(pred_meas_mean, dtype=float)
    return bool(mahalanobis2(nu, innov_cov) <= gamma)


def gate_matrix(pred_meas: np.ndarray, innov_cov: np.ndarray, Z: np.ndarray, gamma: float) -> np.ndarray:
    """Boolean (n_pt, m_k) gate for predicted measurement means (n_pt, 2) and covariances (n_pt, 2, 2)."""
    pred_meas = np.asarray(pred_meas, dtype=float).reshape(-1, 2)
    Z = np.asarray(Z, dtype=float).reshape(-1, 2)
    if len(pred_meas) == 0 or len(Z) == 0:
        return np.zeros((len(pred_meas), len(Z)), dtype=bool)
    nu = Z[None, :, :] - pred_meas[:, None, :]
    return mahalanobis2(nu, np.asarray(innov_cov)[:, None, :, :]) <= gamma


def connected_components(gm: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a gate matrix into independent (rows, cols) blocks.

    Rows with no gated column form singleton blocks; columns gated by no row
    are not reported.
    """
    gm = np.asarray(gm, dtype=bool)
    n, m = gm.shape
    parent = list(range(n + m))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for j, mm in zip(*np.nonzero(gm)):
        ra, rb = find(j), find(n + mm)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, tuple[list[int], list[int]]] = {}
    for j in range(n):
        groups.setdefault(find(j), ([], []))[0].append(j)
    for mm in range(m):
        root = find(n + mm)
        if root in groups:
            groups[root][1].append(mm)
    return [(np.array(r, dtype=int), np.array(c, dtype=int)) for r, c in groups.values()]


def is_forest(gm: np.ndarray) -> bool:
    """True when the bipartite PT-measurement gate graph has no cycle."""
    gm = np.asarray(gm, dtype=bool)
    n_edges = int(gm.sum())
    comps = connected_components(gm)
    used_cols = sum(len(c) for _, c in comps)
    # a forest has exactly (vertices - components) edges
    return n_edges == gm.shape[0] + used_cols - len(comps)


def enumerate_joint_events(gm: np.ndarray, cap: int = DEFAULT_EVENT_CAP) -> list[tuple[int, ...]]:
    """All valid target-oriented association vectors allowed by the gate (1-based, 0 = miss)."""
    gm = np.asarray(gm, dtype=bool)
    n = gm.shape[0]
    options = [[0] + [int(m) + 1 for m in np.flatnonzero(gm[j])] for j in range(n)]
    events: list[tuple[int, ...]] = []
    current = [0] * n
    used: set[int] = set()

    def recurse(j):
        if j == n:
            if len(events) >= cap:
                raise EventCapExceeded(
                    f"more than {cap} joint association events; tighten the gate threshold"
                )
            events.append(tuple(current))
            return
        for m in options[j]:
            if m and m in used:
                continue
            current[j] = m
            if m:
                used.add(m)
            recurse(j + 1)
            if m:
                used.discard(m)
        current[j] = 0

    recurse(0)
    return events


def event_weights(events: np.ndarray, w: AssociationWeights) -> np.ndarray:
    """Unnormalized posterior weight of each joint event (rows of ``events``)."""
    events = np.asarray(events, dtype=int).reshape(-1, w.n_targets)
    n_ev = len(events)
    if w.n_targets:
        weight = np.prod(w.psi[np.arange(w.n_targets)[None, :], events], axis=1)
    else:
        weight = np.ones(n_ev)
    if w.n_meas:
        claimed = np.zeros((n_ev, w.n_meas + 1), dtype=bool)
        if w.n_targets:
            np.put_along_axis(claimed, events, True, axis=1)
        weight = weight * np.prod(np.where(claimed[:, 1:], 1.0, w.unclaimed[None, :]), axis=1)
    return weight


def exact_association_marginals(
    w: AssociationWeights, gm: np.ndarray | None = None, cap: int = DEFAULT_EVENT_CAP
) -> AssociationMarginals:
    """Association marginals by enumerating every joint event."""
    if gm is None:
        gm = w.psi[:, 1:] > 0
    gm = np.asarray(gm, dtype=bool) & (w.psi[:, 1:] > 0)
    n, m = w.n_targets, w.n_meas
    events = np.array(enumerate_joint_events(gm, cap), dtype=int).reshape(-1, n)
    weight = event_weights(events, w)
    total = weight.sum()
    if total <= 0:
        raise ValueError("all joint association events have zero weight")
    p = weight / total
    beta = np.zeros((n, m + 1))
    for j in range(n):
        np.add.at(beta[j], events[:, j], p)
    claimed_mass = beta[:, 1:].sum(axis=0) if n else np.zeros(m)
    return AssociationMarginals(beta=beta, kappa=1.0 - claimed_mass)


def bp_association_marginals(
    w: AssociationWeights,
    gm: np.ndarray | None = None,
    max_iter: int = 100,
    tol: float = 1e-6,
    damping: float = 0.0,
) -> AssociationMarginals:
    """Approximate association marginals by iterative message passing.

    Messages run between the target-oriented and measurement-oriented
    association variables; on a cycle-free gate graph the fixed point gives
    the exact marginals.
    """
    if max_iter < 1 or tol <= 0:
        raise ValueError("max_iter must be >= 1 and tol > 0")
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    n, m = w.n_targets, w.n_meas
    psi0 = w.psi[:, 0]
    psi = w.psi[:, 1:].copy()
    if gm is not None:
        psi[~np.asarray(gm, dtype=bool)] = 0.0
    unclaimed = w.unclaimed
    if n == 0 or m == 0:
        beta = w.psi.copy() if n else np.zeros((0, m + 1))
        if gm is not None and n:
            beta[:, 1:] = psi
        beta = _normalize_rows(beta)
        return AssociationMarginals(beta=beta, kappa=np.ones(m), mu_tm=np.zeros((n, m)))

    edge = psi > 0
    nu = edge.astype(float)  # measurement -> target
    mu = np.zeros((n, m))  # target -> measurement
    deltas: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        pn = psi * nu
        denom = psi0[:, None] + pn.sum(axis=1, keepdims=True) - pn
        with np.errstate(divide="ignore", invalid="ignore"):
            mu_new = np.where(edge, psi / denom, 0.0)
        mu_new = np.nan_to_num(mu_new, nan=0.0, posinf=0.0)
        s = unclaimed[None, :] + mu_new.sum(axis=0, keepdims=True) - mu_new
        with np.errstate(divide="ignore"):
            nu_new = np.where(edge, 1.0 / s, 0.0)
        # a zero-clutter measurement with no competitor forces the association
        nu_new = np.where(np.isinf(nu_new), 1e150, nu_new)
        if damping:
            nu_new = (1 - damping) * nu_new + damping * nu
        delta = float(np.max(np.abs(nu_new - nu))) if nu.size else 0.0
        deltas.append(delta)
        mu, nu = mu_new, nu_new
        if delta < tol:
            converged = True
            break
    if not converged:
        log.debug("BP association did not converge in %d iterations (last change %.3g)", max_iter, deltas[-1])

    beta = np.column_stack([psi0, psi * nu])
    beta = _normalize_rows(beta)
    # one final target->measurement pass with the converged nu for the measurement side
    pn = psi * nu
    denom = psi0[:, None] + pn.sum(axis=1, keepdims=True) - pn
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.nan_to_num(np.where(edge, psi / denom, 0.0), nan=0.0, posinf=0.0)
    tot = unclaimed + mu.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(tot > 0, unclaimed / tot, 1.0)
    return AssociationMarginals(
        beta=beta, kappa=kappa, converged=converged, iterations=it, deltas=deltas, mu_tm=mu
    )


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    s = x.sum(axis=1, keepdims=True)
    out = np.zeros_like(x)
    np.divide(x, s, out=out, where=s > 0)
    # an all-zero row carries no information; fall back to "missed"
    if x.size:
        out[(s[:, 0] <= 0), 0] = 1.0
    return out


# --- assignment ---------------------------------------------------------------


def _augment(cost: np.ndarray, unassigned_cost) -> np.ndarray:
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    u = np.broadcast_to(np.asarray(unassigned_cost, dtype=float), (n,))
    dummy = np.full((n, n), np.inf)
    np.fill_diagonal(dummy, u)
    return np.hstack([cost, dummy])


def _solve(aug: np.ndarray, n: int, m: int):
    try:
        rows, cols = linear_sum_assignment(aug)
    except ValueError:
        return None
    total = float(aug[rows, cols].sum())
    if not np.isfinite(total):
        return None
    assignment = np.full(n, -1, dtype=int)
    real = cols < m
    assignment[rows[real]] = cols[real]
    return assignment, total, tuple(int(c) for c in cols)


def best_assignment(cost: np.ndarray, unassigned_cost=np.inf) -> tuple[np.ndarray, float]:
    """Minimum-cost one-to-one assignment of rows to columns.

    ``cost[i, j] = inf`` forbids a pair. A row may stay unassigned at
    ``unassigned_cost`` (scalar or per row); columns may always stay unused.
    Returns ``(assignment, total)`` with ``assignment[i] = -1`` for unassigned
    rows. An infeasible problem yields all rows unassigned and ``total = inf``.
    """
    cost = np.atleast_2d(np.asarray(cost, dtype=float))
    n, m = cost.shape
    if n == 0:
        return np.zeros(0, dtype=int), 0.0
    res = _solve(_augment(cost, unassigned_cost), n, m)
    if res is None:
        return np.full(n, -1, dtype=int), float("inf")
    return res[0], res[1]


def m_best_assignments(cost: np.ndarray, m: int, unassigned_cost=np.inf) -> list[tuple[np.ndarray, float]]:
    """The ``m`` cheapest distinct assignments in nondecreasing cost order (Murty's partitioning)."""
    if m < 1:
        raise ValueError("m must be at least 1")
    cost = np.atleast_2d(np.asarray(cost, dtype=float))
    n, ncol = cost.shape
    if n == 0:
        return [(np.zeros(0, dtype=int), 0.0)]
    aug = _augment(cost, unassigned_cost)
    first = _solve(aug, n, ncol)
    if first is None:
        return []
    counter = itertools.count()
    heap = [(first[1], next(counter), first, aug)]
    out: list[tuple[np.ndarray, float]] = []
    while heap and len(out) < m:
        total, _, (assignment, _, cols), sub = heapq.heappop(heap)
        out.append((assignment, total))
        # partition: fix rows < i to the solution, forbid row i's choice
        fixed = sub.copy()
        for i in range(n):
            child = fixed.copy()
            child[i, cols[i]] = np.inf
            res = _solve(child, n, ncol)
            if res is not None:
                heapq.heappush(heap, (res[1], next(counter), res, child))
            keep = fixed[i, cols[i]]
            fixed[i, :] = np.inf
            fixed[:, cols[i]] = np.inf
            fixed[i, cols[i]] = keep
    return out
