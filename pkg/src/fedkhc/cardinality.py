"""Server-side estimation of the number of global clusters.

Two stages. First, the uploaded subcluster centroids are optionally
coarse-grained into a handful of "main nodes" by a growing self-organizing
network, damping the density imbalance that many centroids from a large
cluster would otherwise cause. Second, the node set is analyzed with natural
neighbors: a neighborhood size b is chosen where the ratio of short-distance
pairs among mutual-b-NN pairs first declines, rank-matched (strict) neighbor
pairs define a distance scale, and the count of connected components of the
thresholded distance graph is the cluster-number estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .model import SeededRng, ValidationError, as_generator


@dataclass(frozen=True)
class SncConfig:
    percentile: float = 25.0  # t, short-distance threshold percentile
    b_max: int | None = None  # None: min(ceil(m/4), 30), clamped to [2, m-1]
    snn_mode: str = "strict"  # "strict" | "relaxed"
    gcs_enabled: bool = True

    def __post_init__(self):
        if not (0.0 < self.percentile < 100.0):
            raise ValidationError("percentile must be in (0, 100)")
        if self.snn_mode not in ("strict", "relaxed"):
            raise ValidationError(f"unknown snn_mode {self.snn_mode!r}")

    def resolved_b_max(self, m: int) -> int:
        b = self.b_max if self.b_max is not None else max(2, min(math.ceil(m / 4), 30))
        return max(1, min(b, m - 1))


@dataclass(frozen=True)
class GcsConfig:
    target_nodes: int | None = None  # None ("auto"): ceil(sqrt(m)) clamped to [4, m]
    insertion_interval: int = 100  # signals between node insertions
    winner_rate: float = 0.06
    neighbor_rate: float = 0.006
    max_signals: int | None = None  # None: 50 * m

    def __post_init__(self):
        if not (0.0 < self.neighbor_rate < self.winner_rate < 1.0):
            raise ValidationError("rates must satisfy 0 < neighbor_rate < winner_rate < 1")
        if self.insertion_interval < 1:
            raise ValidationError("insertion_interval must be >= 1")

    def resolved_target(self, m: int) -> int:
        if self.target_nodes is not None:
            return self.target_nodes
        return min(max(16, 2 * math.ceil(math.sqrt(m))), m)


@dataclass
class NeighborGraph:
    """Diagnostics from one cluster-count estimation."""

    nodes: np.ndarray
    lnn_pairs: set[tuple[int, int]]
    snn_pairs: set[tuple[int, int]]
    b_optimal: int
    p_curve: list[float]
    b_fallback: bool
    threshold: float  # T, the short-distance threshold
    d_s: float  # mean strict-pair distance used for adjacency
    ds_fallback: bool
    component_labels: np.ndarray
    gcs_passthrough: bool = False

    @property
    def k_star(self) -> int:
        return int(self.component_labels.max()) + 1

    def to_dict(self) -> dict:
        return {
            "k_star": self.k_star,
            "num_nodes": int(self.nodes.shape[0]),
            "b_optimal": self.b_optimal,
            "b_fallback": self.b_fallback,
            "p_curve": [float(p) for p in self.p_curve],
            "threshold": float(self.threshold),
            "d_s": float(self.d_s),
            "ds_fallback": self.ds_fallback,
            "component_labels": self.component_labels.tolist(),
            "gcs_passthrough": self.gcs_passthrough,
        }


@dataclass
class GcsResult:
    nodes: np.ndarray
    passthrough: bool = False


@njit(cache=True, nogil=True)
def _gcs_run(data, signals, positions, adjacency, resource, start_count, target,
             eps_b, eps_n, interval, settle):  # pragma: no cover - jit
    m, d = data.shape
    count = start_count
    since_insert = 0
    since_growth_done = 0
    for s in range(signals.shape[0]):
        x = data[signals[s]]
        best = 0
        best_d = 1e300
        for j in range(count):
            acc = 0.0
            for t in range(d):
                diff = x[t] - positions[j, t]
                acc += diff * diff
            if acc < best_d:
                best_d = acc
                best = j
        resource[best] += best_d  # accumulated squared error drives growth
        rate_b = eps_b
        rate_n = eps_n
        if count >= target:
            # growth done: anneal the rates so positions settle crisply
            frac = 1.0 - since_growth_done / max(settle, 1)
            if frac < 0.05:
                frac = 0.05
            rate_b = eps_b * frac
            rate_n = eps_n * frac
        for t in range(d):
            positions[best, t] += rate_b * (x[t] - positions[best, t])
        for j in range(count):
            if adjacency[best, j]:
                for t in range(d):
                    positions[j, t] += rate_n * (x[t] - positions[j, t])
        since_insert += 1
        if count >= target:
            since_growth_done += 1
            if since_growth_done >= settle:
                break
            continue
        if since_insert >= interval:
            since_insert = 0
            # split the busiest node along its longest edge
            q = 0
            best_r = -1.0
            for j in range(count):
                if resource[j] > best_r:
                    best_r = resource[j]
                    q = j
            f = -1
            longest = -1.0
            for j in range(count):
                if adjacency[q, j]:
                    acc = 0.0
                    for t in range(d):
                        diff = positions[q, t] - positions[j, t]
                        acc += diff * diff
                    if acc > longest:
                        longest = acc
                        f = j
            if f < 0:
                continue
            new = count
            for t in range(d):
                positions[new, t] = 0.5 * (positions[q, t] + positions[f, t])
            adjacency[q, f] = False
            adjacency[f, q] = False
            adjacency[new, q] = True
            adjacency[q, new] = True
            adjacency[new, f] = True
            adjacency[f, new] = True
            resource[new] = 0.5 * (resource[q] + resource[f])
            resource[q] *= 0.5
            resource[f] *= 0.5
            count += 1
    return count


def gcs_reduce(
    centroids: np.ndarray,
    cfg: GcsConfig | None = None,
    rng: SeededRng | np.random.Generator | None = None,
    enabled: bool = True,
) -> GcsResult:
    """Coarse-grain a centroid cloud into at most target_nodes representative nodes.

    Starts from three random centroids connected in a triangle, adapts the
    winning node and its graph neighbors toward each signal, and inserts a
    node at the midpoint of the busiest node's longest edge every
    insertion_interval signals until the target is reached, then settles for
    one additional pass. Nodes that end up owning no centroid are dropped.
    """
    cfg = cfg or GcsConfig()
    pts = np.ascontiguousarray(centroids, dtype=np.float64)
    m = pts.shape[0]
    if not enabled:
        return GcsResult(nodes=pts.copy(), passthrough=True)
    if m < 2:
        return GcsResult(nodes=pts.copy(), passthrough=True)
    target = cfg.resolved_target(m)
    if m < target:
        return GcsResult(nodes=pts.copy(), passthrough=True)

    gen = as_generator(rng if rng is not None else SeededRng(0, 0))
    start = min(3, target, m)
    init = gen.choice(m, size=start, replace=False)
    positions = np.zeros((target, pts.shape[1]))
    positions[:start] = pts[np.sort(init)]
    adjacency = np.zeros((target, target), dtype=np.bool_)
    for a in range(start):
        for b in range(a + 1, start):
            adjacency[a, b] = adjacency[b, a] = True
    resource = np.zeros(target)

    growth = max(0, target - start) * cfg.insertion_interval
    settle = 8 * m  # annealed passes after the last insertion
    cap = cfg.max_signals if cfg.max_signals is not None else 50 * m
    budget = min(growth + settle, max(cap, 1))
    signals = gen.integers(0, m, size=budget)
    count = _gcs_run(
        pts, signals, positions, adjacency, resource, start, target,
        cfg.winner_rate, cfg.neighbor_rate, cfg.insertion_interval, settle,
    )
    nodes = positions[:count]
    # Lloyd polish: move every node to the mean of the centroids it owns,
    # dropping dead nodes. Regular spacing is what makes the downstream
    # mean-pair threshold a usable connectivity scale; raw adapted positions
    # are too noisy.
    prev = None
    for _ in range(25):
        owner = _nearest(pts, nodes)
        alive = np.unique(owner)
        nodes = np.vstack([pts[owner == j].mean(axis=0) for j in alive])
        if prev is not None and prev.shape == nodes.shape and np.allclose(prev, nodes):
            break
        prev = nodes
    return GcsResult(nodes=nodes, passthrough=False)


def _nearest(pts: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(pts * pts, axis=1)[:, None]
        + np.sum(nodes * nodes, axis=1)[None, :]
        - 2.0 * (pts @ nodes.T)
    )
    return np.argmin(d2, axis=1)


def distance_matrix(nodes: np.ndarray) -> np.ndarray:
    """Symmetric Euclidean distance matrix with a zero diagonal."""
    pts = np.asarray(nodes, dtype=np.float64)
    if pts.shape[0] < 2:
        raise ValidationError("need at least 2 nodes")
    sq = np.sum(pts * pts, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (pts @ pts.T)
    np.maximum(d2, 0.0, out=d2)
    dist = np.sqrt(d2)
    np.fill_diagonal(dist, 0.0)
    return 0.5 * (dist + dist.T)


def short_distance_threshold(dist: np.ndarray, percentile: float) -> float:
    """The t-th percentile pairwise distance (ascending order, ceiling index)."""
    if not (0.0 < percentile <= 100.0):
        raise ValidationError("percentile must be in (0, 100]")
    m = dist.shape[0]
    upper = dist[np.triu_indices(m, k=1)]
    ordered = np.sort(upper)
    idx = math.ceil(percentile * ordered.size / 100.0)
    idx = min(max(idx, 1), ordered.size)
    return float(ordered[idx - 1])


def _rank_matrix(dist: np.ndarray) -> np.ndarray:
    """rank[i, j] = position (1-based) of j in i's neighbor list; 0 on the diagonal.

    Distance ties break toward the lower node index.
    """
    m = dist.shape[0]
    work = dist.copy()
    np.fill_diagonal(work, np.inf)
    order = np.argsort(work, axis=1, kind="stable")
    rank = np.empty((m, m), dtype=np.int64)
    rows = np.repeat(np.arange(m), m)
    rank[rows, order.ravel()] = np.tile(np.arange(1, m + 1), m)
    np.fill_diagonal(rank, 0)
    return rank


def lnn_pairs(dist: np.ndarray, b: int, rank: np.ndarray | None = None) -> set[tuple[int, int]]:
    """Pairs that appear in each other's b-nearest-neighbor lists (loose natural neighbors)."""
    m = dist.shape[0]
    if not (1 <= b < m):
        raise ValidationError(f"b must satisfy 1 <= b < {m}")
    rank = _rank_matrix(dist) if rank is None else rank
    mutual = (rank <= b) & (rank.T <= b) & (rank > 0)
    ii, jj = np.nonzero(np.triu(mutual, k=1))
    return {(int(i), int(j)) for i, j in zip(ii, jj)}


def snn_pairs(
    dist: np.ndarray, b: int, mode: str = "strict", rank: np.ndarray | None = None
) -> set[tuple[int, int]]:
    """Natural-neighbor pairs at neighborhood size b.

    strict: both sides hold the same rank m <= b in each other's lists.
    relaxed: mutual membership only (identical to lnn_pairs).
    """
    if mode == "relaxed":
        return lnn_pairs(dist, b, rank=rank)
    if mode != "strict":
        raise ValidationError(f"unknown snn mode {mode!r}")
    m = dist.shape[0]
    if not (1 <= b < m):
        raise ValidationError(f"b must satisfy 1 <= b < {m}")
    rank = _rank_matrix(dist) if rank is None else rank
    matched = (rank == rank.T) & (rank > 0) & (rank <= b)
    ii, jj = np.nonzero(np.triu(matched, k=1))
    return {(int(i), int(j)) for i, j in zip(ii, jj)}


def select_b(
    dist: np.ndarray, threshold: float, b_max: int
) -> tuple[int, list[float], bool]:
    """Scan b = 1..b_max for the first decline of the short-pair ratio.

    P_b is the fraction of loose-natural-neighbor pairs shorter than the
    threshold (1 if there are no pairs). Returns (b_optimal, curve, fallback);
    fallback is True when the curve never declines and b_max is used.
    """
    if b_max < 2:
        raise ValidationError("b_max must be >= 2")
    rank = _rank_matrix(dist)
    curve: list[float] = []
    prev = None
    for b in range(1, b_max + 1):
        pairs = lnn_pairs(dist, b, rank=rank)
        if not pairs:
            p = 1.0
        else:
            short = sum(1 for i, j in pairs if dist[i, j] < threshold)
            p = short / len(pairs)
        curve.append(p)
        if prev is not None and prev > p:
            return b - 1, curve, False
        prev = p
    return b_max, curve, True


def estimate_k(
    nodes: np.ndarray,
    cfg: SncConfig | None = None,
    gcs_passthrough: bool = False,
) -> tuple[int, NeighborGraph]:
    """Estimate the number of clusters among a node set.

    Thresholds the node distance matrix at the mean strict-natural-neighbor
    distance and counts connected components. Falls back to the short-distance
    threshold when there are no strict pairs.
    """
    cfg = cfg or SncConfig()
    pts = np.asarray(nodes, dtype=np.float64)
    m = pts.shape[0]
    if m < 2:
        raise ValidationError("need at least 2 nodes to estimate k")
    dist = distance_matrix(pts)
    threshold = short_distance_threshold(dist, cfg.percentile)
    b_max = cfg.resolved_b_max(m)
    if b_max >= 2:
        b_opt, curve, b_fallback = select_b(dist, threshold, b_max)
    else:
        # two nodes leave no curve to scan
        b_opt, curve, b_fallback = 1, [], False
    rank = _rank_matrix(dist)
    loose = lnn_pairs(dist, b_opt, rank=rank)
    pairs = snn_pairs(dist, b_opt, mode=cfg.snn_mode, rank=rank)
    if pairs:
        d_s = float(np.mean([dist[i, j] for i, j in sorted(pairs)]))
        ds_fallback = False
    else:
        d_s = threshold
        ds_fallback = True
    adjacency = dist <= d_s
    np.fill_diagonal(adjacency, False)
    n_comp, labels = connected_components(csr_matrix(adjacency), directed=False)
    graph = NeighborGraph(
        nodes=pts,
        lnn_pairs=loose,
        snn_pairs=pairs,
        b_optimal=b_opt,
        p_curve=curve,
        b_fallback=b_fallback,
        threshold=threshold,
        d_s=d_s,
        ds_fallback=ds_fallback,
        component_labels=labels.astype(np.int64),
        gcs_passthrough=gcs_passthrough,
    )
    return int(n_comp), graph
