"""Track-oriented multiple hypothesis tracking.

Each tree holds the association histories of one track over a sliding window.
Leaves are stored column-wise in numpy arrays so that a whole tree is
extended with a handful of vectorized Kalman operations. Leaf scores are
log-likelihood ratios against the all-clutter explanation, so leaving a tree
out of the global hypothesis costs nothing and the best global hypothesis is
a maximum-weight packing of leaves with disjoint measurement claims.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .association import mahalanobis2
from .models import GaussianBelief, MotionModel, Scan, SensorModel, predict_arrays, symmetrize

log = logging.getLogger(__name__)

# log of the clutter intensity is floored so that zero clutter still gives finite scores
LOG_INTENSITY_FLOOR = -690.0


@dataclass
class MhtConfig:
    gate_gamma: float = 13.82
    depth: int = 5
    confirm_m: int = 12
    confirm_n: int = 24
    max_missed: int = 13
    leaf_cap: int = 300
    search_cap: int = 10**6
    # leaves scoring this far below the best leaf of their tree are dropped
    prune_delta: float = 15.0
    # never-selected trees are dropped once their best leaf falls this far below the birth score
    tree_drop_margin: float = 5.0
    birth_vel_std: float = 10.0
    births: bool = True

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("hypothesis depth must be at least 1")
        if not 1 <= self.confirm_m <= self.confirm_n <= 62:
            raise ValueError("MHT confirmation logic needs 1 <= M <= N <= 62")
        if self.leaf_cap < 1 or self.search_cap < 1:
            raise ValueError("caps must be positive")


@dataclass
class TrackHypothesis:
    track_id: int
    leaf: int
    meas_index: np.ndarray  # per scan of the window, 0 = miss
    score: float
    belief: GaussianBelief


@dataclass
class Tree:
    id: int
    birth_k: int
    root_k: int  # scan of hist column 0
    birth_score: float
    mean: np.ndarray  # (L, 4)
    cov: np.ndarray  # (L, 4, 4)
    score: np.ndarray  # (L,)
    hist: np.ndarray  # (L, d) measurement index per window scan, 0 = miss
    hits: np.ndarray  # (L,) bitmask of detections, bit 0 = newest scan
    miss_streak: np.ndarray  # (L,)
    confirmed: bool = False
    ever_selected: bool = False

    @property
    def n_leaves(self) -> int:
        return len(self.score)

    def hypothesis(self, i: int) -> TrackHypothesis:
        return TrackHypothesis(self.id, i, self.hist[i].copy(), float(self.score[i]), GaussianBelief(self.mean[i], self.cov[i]))

    def take(self, idx: np.ndarray) -> None:
        for name in ("mean", "cov", "score", "hist", "hits", "miss_streak"):
            setattr(self, name, getattr(self, name)[idx])


@dataclass
class HypothesisForest:
    trees: list[Tree] = field(default_factory=list)
    depth: int = 5
    k: int = 0
    next_id: int = 1

    def tree(self, tree_id: int) -> Tree:
        for t in self.trees:
            if t.id == tree_id:
                return t
        raise KeyError(tree_id)


@dataclass
class GlobalHypothesis:
    leaves: dict[int, int]  # tree id -> leaf index; absent trees are not selected
    score: float
    exact: bool = True
    nodes: int = 0


def _log_intensity(z: np.ndarray, sm: SensorModel) -> np.ndarray:
    lam = sm.clutter_intensity(z)
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(lam), LOG_INTENSITY_FLOOR)


def birth_score(z: np.ndarray, sm: SensorModel) -> np.ndarray:
    """Log-ratio of a new target against clutter for each measurement."""
    z = np.asarray(z, dtype=float).reshape(-1, 2)
    with np.errstate(divide="ignore"):
        return np.log(sm.p_d * sm.mu_b * sm.birth_pdf(z)) - _log_intensity(z, sm)


@dataclass
class _Predicted:
    """Prediction, gating and update terms for a block of leaves."""

    mean: np.ndarray
    cov: np.ndarray
    nu: np.ndarray  # (L, M, 2) innovations
    d2: np.ndarray  # (L, M)
    gain: np.ndarray  # (L, 4, 2)
    cov_upd: np.ndarray
    logdet: np.ndarray

    def block(self, lo: int, hi: int) -> "_Predicted":
        return _Predicted(*(getattr(self, f)[lo:hi] for f in self.__dataclass_fields__))


def _predict_leaves(mean: np.ndarray, cov: np.ndarray, Z: np.ndarray, mm: MotionModel, sm: SensorModel) -> _Predicted:
    m_pred, P_pred = predict_arrays(mean, cov, mm)
    S = P_pred[:, :2, :2] + sm.R
    nu = Z[None, :, :] - m_pred[:, None, :2]
    d2 = mahalanobis2(nu, S[:, None]) if len(Z) else np.zeros((len(m_pred), 0))
    K = P_pred[:, :, :2] @ np.linalg.inv(S)
    P_upd = symmetrize(P_pred - K @ S @ np.swapaxes(K, 1, 2))
    logdet = np.log(S[:, 0, 0] * S[:, 1, 1] - S[:, 0, 1] * S[:, 1, 0])
    return _Predicted(m_pred, P_pred, nu, d2, K, P_upd, logdet)


def _extend_tree(
    t: Tree, Z: np.ndarray, log_lam: np.ndarray, mm: MotionModel, sm: SensorModel, cfg: MhtConfig,
    pred: _Predicted | None = None,
) -> None:
    if pred is None:
        pred = _predict_leaves(t.mean, t.cov, Z, mm, sm)
    L = len(pred.mean)
    gated = pred.d2 <= cfg.gate_gamma
    if sm.p_d < 1.0 and not gated.any():
        # only miss children; their order already matches the general path
        t.mean, t.cov = pred.mean, pred.cov
        t.score = t.score + np.log1p(-sm.p_d)
        t.hist = np.column_stack([t.hist, np.zeros(L, dtype=int)])
        t.hits = (t.hits << 1) & ((1 << cfg.confirm_n) - 1)
        t.miss_streak = t.miss_streak + 1
        return
    parents, meas, new_mean, new_cov, delta = [], [], [], [], []
    if sm.p_d < 1.0:
        parents.append(np.arange(L))
        meas.append(np.zeros(L, dtype=int))
        new_mean.append(pred.mean)
        new_cov.append(pred.cov)
        delta.append(np.full(L, np.log1p(-sm.p_d)))
    if len(Z):
        li, mi = np.nonzero(gated)
        if len(li):
            parents.append(li)
            meas.append(mi + 1)
            new_mean.append(pred.mean[li] + np.einsum("lij,lj->li", pred.gain[li], pred.nu[li, mi]))
            new_cov.append(pred.cov_upd[li])
            delta.append(
                np.log(sm.p_d) - 0.5 * pred.d2[li, mi] - np.log(2 * np.pi) - 0.5 * pred.logdet[li] - log_lam[mi]
            )
    if not parents:
        t.take(np.zeros(0, dtype=int))
        t.hist = np.zeros((0, t.hist.shape[1] + 1), dtype=int)
        return
    parents = np.concatenate(parents)
    meas = np.concatenate(meas)
    det = meas > 0
    t.mean = np.concatenate(new_mean)
    t.cov = np.concatenate(new_cov)
    t.score = t.score[parents] + np.concatenate(delta)
    t.hist = np.column_stack([t.hist[parents], meas])
    mask = (1 << cfg.confirm_n) - 1
    t.hits = ((t.hits[parents] << 1) | det) & mask
    t.miss_streak = np.where(det, 0, t.miss_streak[parents] + 1)
    # children are ordered by parent, then miss before detections
    order = np.lexsort((meas, parents))
    t.take(order)


def _prune_leaves(t: Tree, cfg: MhtConfig) -> None:
    keep = np.isfinite(t.score) & (t.miss_streak <= cfg.max_missed)
    if keep.any():
        best = t.score[keep].max()
        keep &= t.score >= best - cfg.prune_delta
    idx = np.flatnonzero(keep)
    if len(idx) > cfg.leaf_cap:
        # lowest scores go first; stable so equal scores keep the lower index
        order = np.argsort(-t.score[idx], kind="stable")[: cfg.leaf_cap]
        idx = np.sort(idx[order])
    t.take(idx)


def extend_hypotheses(
    forest: HypothesisForest, scan: Scan, mm: MotionModel, sm: SensorModel, cfg: MhtConfig
) -> HypothesisForest:
    """Grow every leaf by one scan and root a new tree on every measurement."""
    Z = scan.measurements
    log_lam = _log_intensity(Z, sm) if len(Z) else np.zeros(0)
    trees = []
    pred = None
    if forest.trees:
        # one batched prediction for all leaves of the forest
        pred = _predict_leaves(
            np.concatenate([t.mean for t in forest.trees]), np.concatenate([t.cov for t in forest.trees]), Z, mm, sm
        )
        bounds = np.cumsum([0] + [t.n_leaves for t in forest.trees])
    for i, t in enumerate(forest.trees):
        t = Tree(**{**t.__dict__})
        _extend_tree(t, Z, log_lam, mm, sm, cfg, pred.block(bounds[i], bounds[i + 1]))
        _prune_leaves(t, cfg)
        if t.n_leaves == 0:
            continue
        if not (t.confirmed or t.ever_selected) and t.score.max() < t.birth_score - cfg.tree_drop_margin:
            continue
        trees.append(t)
    next_id = forest.next_id
    if cfg.births and len(Z):
        bs = birth_score(Z, sm)
        v2 = cfg.birth_vel_std**2
        s2 = sm.sigma_v**2
        for m in range(len(Z)):
            if not np.isfinite(bs[m]):
                continue
            trees.append(
                Tree(
                    id=next_id,
                    birth_k=scan.k,
                    root_k=scan.k,
                    birth_score=float(bs[m]),
                    mean=np.r_[Z[m], 0.0, 0.0][None, :],
                    cov=np.diag([s2, s2, v2, v2])[None, :, :],
                    score=np.array([bs[m]]),
                    hist=np.array([[m + 1]]),
                    hits=np.array([1], dtype=np.int64),
                    miss_streak=np.array([0]),
                )
            )
            next_id += 1
    return HypothesisForest(trees, forest.depth, scan.k, next_id)


# --- global hypothesis ----------------------------------------------------------


class _SearchCapExceeded(Exception):
    pass


def _claims(t: Tree, leaves: np.ndarray) -> list[list[tuple[int, int]]]:
    H = t.hist[leaves]
    rows, cols = np.nonzero(H)
    out: list[list[tuple[int, int]]] = [[] for _ in range(len(leaves))]
    for r, k, m in zip(rows.tolist(), (cols + t.root_k).tolist(), H[rows, cols].tolist()):
        out[r].append((k, m))
    return out


def select_global_hypothesis(forest: HypothesisForest, cfg: MhtConfig | None = None) -> GlobalHypothesis:
    """Best set of mutually compatible leaves, at most one per tree.

    Exact branch and bound inside each cluster of trees that share
    measurements; falls back to a greedy choice when the node budget is
    exhausted. Trees are explored in id order and leaves in decreasing score,
    and only strict improvements replace the incumbent, so ties go to the
    lower tree id and lower leaf index.
    """
    cfg = cfg or MhtConfig()
    cands: dict[int, np.ndarray] = {}
    by_id = {t.id: t for t in forest.trees}
    for t in sorted(forest.trees, key=lambda t: t.id):
        pos = np.flatnonzero(t.score > 0)
        if len(pos):
            cands[t.id] = pos[np.argsort(-t.score[pos], kind="stable")]
    if not cands:
        return GlobalHypothesis({}, 0.0, True, 0)

    claims = {tid: _claims(by_id[tid], leaves) for tid, leaves in cands.items()}
    # cluster trees through shared (scan, measurement) claims
    owner: dict[tuple[int, int], int] = {}
    parent = {tid: tid for tid in cands}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for tid, cl in claims.items():
        for leaf_claims in cl:
            for key in leaf_claims:
                if key in owner:
                    a, b = find(owner[key]), find(tid)
                    if a != b:
                        parent[max(a, b)] = min(a, b)
                else:
                    owner[key] = tid
    clusters: dict[int, list[int]] = {}
    for tid in cands:
        clusters.setdefault(find(tid), []).append(tid)

    result: dict[int, int] = {}
    total = 0.0
    exact = True
    nodes = 0
    for members in clusters.values():
        members.sort()
        sel, val, ok, n = _solve_cluster(members, cands, claims, by_id, cfg.search_cap)
        result.update(sel)
        total += val
        exact &= ok
        nodes += n
    if not exact:
        log.warning("global hypothesis search exceeded %d nodes; greedy fallback used", cfg.search_cap)
    return GlobalHypothesis(result, total, exact, nodes)


def _solve_cluster(members, cands, claims, by_id, cap):
    keys = sorted({key for tid in members for cl in claims[tid] for key in cl})
    bit = {key: 1 << i for i, key in enumerate(keys)}
    # claim sets as Python int bitmasks, leaves in decreasing score
    scores = [by_id[tid].score[cands[tid]].tolist() for tid in members]
    masks = [[sum(bit[key] for key in cl) for cl in claims[tid]] for tid in members]
    T = len(members)
    # the best compatible leaf of tree i only depends on the claims tree i can make
    reach = [0] * T
    for i in range(T):
        for m in masks[i]:
            reach[i] |= m
    memo: dict[tuple[int, int], float] = {}

    def best_compat(i, used):
        key = (i, used & reach[i])
        v = memo.get(key)
        if v is None:
            v = 0.0
            for s, m in zip(scores[i], masks[i]):
                if not m & used:
                    v = s
                    break
            memo[key] = v
        return v

    # greedy incumbent
    used = 0
    greedy, gval = [None] * T, 0.0
    for i in range(T):
        for r, m in enumerate(masks[i]):
            if not m & used:
                greedy[i] = r
                gval += scores[i][r]
                used |= m
                break
    best = {"val": gval, "sel": list(greedy)}
    if T == 1:
        # a lone tree takes its best leaf
        sel = {members[0]: int(cands[members[0]][greedy[0]])} if greedy[0] is not None else {}
        return sel, float(gval), True, 1
    nodes = 0
    current: list[int | None] = [None] * T
    # loose bound ignoring conflicts, tightened only when it fails to prune
    loose = [0.0] * (T + 1)
    for i in range(T - 1, -1, -1):
        loose[i] = loose[i + 1] + max(scores[i][0], 0.0)

    def dfs(i, used, cur):
        nonlocal nodes
        nodes += 1
        if nodes > cap:
            raise _SearchCapExceeded
        if i == T:
            if cur > best["val"]:
                best["val"], best["sel"] = cur, list(current)
            return
        if cur + loose[i] <= best["val"]:
            return
        tail = 0.0
        for ii in range(i + 1, T):
            tail += best_compat(ii, used)
        for r, (s, m) in enumerate(zip(scores[i], masks[i])):
            if cur + s + tail <= best["val"]:
                break
            if m & used:
                continue
            current[i] = r
            dfs(i + 1, used | m, cur + s)
        current[i] = None
        if cur + tail > best["val"]:
            dfs(i + 1, used, cur)

    exact = True
    try:
        dfs(0, 0, 0.0)
    except _SearchCapExceeded:
        exact = False
    sel = {members[i]: int(cands[members[i]][r]) for i, r in enumerate(best["sel"]) if r is not None}
    return sel, float(best["val"]), exact, nodes


def n_scan_prune(forest: HypothesisForest, gh: GlobalHypothesis, N: int | None = None) -> tuple[HypothesisForest, GlobalHypothesis]:
    """Commit the oldest scan of every full window to the selected branch.

    Trees whose window is full and that are not part of the global hypothesis
    are dropped. Returns the pruned forest and the global hypothesis with leaf
    indices remapped.
    """
    N = forest.depth if N is None else N
    if N < 1:
        raise ValueError("window depth must be at least 1")
    trees, leaves = [], {}
    for t in forest.trees:
        sel = gh.leaves.get(t.id)
        if t.hist.shape[1] < N:
            trees.append(t)
            if sel is not None:
                leaves[t.id] = sel
            continue
        if sel is None:
            continue
        t = Tree(**{**t.__dict__})
        keep = np.flatnonzero(t.hist[:, 0] == t.hist[sel, 0])
        new_sel = int(np.searchsorted(keep, sel))
        t.take(keep)
        t.hist = t.hist[:, 1:]
        t.root_k += 1
        trees.append(t)
        leaves[t.id] = new_sel
    return HypothesisForest(trees, forest.depth, forest.k, forest.next_id), GlobalHypothesis(leaves, gh.score, gh.exact, gh.nodes)


def mht_step(
    forest: HypothesisForest, scan: Scan, mm: MotionModel, sm: SensorModel, cfg: MhtConfig
) -> tuple[HypothesisForest, list[tuple[int, np.ndarray]], GlobalHypothesis]:
    """Extend, select, prune, confirm and emit the filtered states of confirmed tracks."""
    forest = extend_hypotheses(forest, scan, mm, sm, cfg)
    gh = select_global_hypothesis(forest, cfg)
    forest, gh = n_scan_prune(forest, gh, cfg.depth)
    out, keep = [], []
    for t in forest.trees:
        sel = gh.leaves.get(t.id)
        if sel is not None:
            if t.miss_streak[sel] > cfg.max_missed:
                gh.leaves.pop(t.id)
                continue
            t.ever_selected = True
            if int(t.hits[sel]).bit_count() >= cfg.confirm_m:
                t.confirmed = True
            if t.confirmed:
                out.append((t.id, t.mean[sel].copy()))
        keep.append(t)
    forest.trees = keep
    return forest, out, gh


class MhtTracker:
    name = "mht"

    def __init__(self, mm: MotionModel, sm: SensorModel, cfg: MhtConfig | None = None):
        self.mm, self.sm = mm, sm
        self.cfg = cfg or MhtConfig()
        self.forest = HypothesisForest(depth=self.cfg.depth)

    def step(self, scan: Scan) -> list[tuple[int, np.ndarray]]:
        self.forest, est, _ = mht_step(self.forest, scan, self.mm, self.sm, self.cfg)
        return est
