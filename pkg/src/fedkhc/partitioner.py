"""Client-side micro-partitioning into many small subclusters.

The default strategy is rival-penalized competitive learning over a growing
seed set: each sample pulls its nearest seed toward it, pushes the runner-up
away, and new seeds are spawned at secondary density peaks of subclusters
whose internal density gap is large. The result deliberately over-segments
the local data; merging happens later on the server.

A k-means style ``grid_partition`` is provided as a pluggable alternative.

Density and gap computations are quadratic in subcluster size; intended for
per-client slices up to a few thousand points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .model import SeededRng, ValidationError, as_generator

DENSITY_CAP = 1e12
_ASSIGN_CHUNK = 262144


@dataclass(frozen=True)
class SnpConfig:
    """Knobs for the competitive-learning partitioner.

    The update rules are fixed; these control seeding, learning-rate decay,
    the rival penalty, convergence, and when new seeds are introduced.
    """

    initial_seeds: int = 2
    base_learning_rate: float = 0.05
    penalty_strength: float = 0.1
    convergence_threshold: float = 1e-4
    max_epochs: int = 200
    density_neighbor_count: int | None = None  # None: ceil(sqrt(|subcluster|))
    seed_add_threshold: float = 1.1
    max_seeds: int | None = None  # None: 2 * ceil(sqrt(n))
    learning_rate_anneal: float = 0.85  # per-epoch decay of each seed's rate since birth

    def __post_init__(self):
        if self.initial_seeds < 2:
            raise ValidationError("initial_seeds must be >= 2")
        if not (0.0 < self.base_learning_rate <= 1.0):
            raise ValidationError("base_learning_rate must be in (0, 1]")
        if self.penalty_strength < 0:
            raise ValidationError("penalty_strength must be nonnegative")
        if self.convergence_threshold <= 0:
            raise ValidationError("convergence_threshold must be positive")
        if self.max_seeds is not None and self.max_seeds < self.initial_seeds:
            raise ValidationError("max_seeds must be >= initial_seeds")
        if not (0.0 < self.learning_rate_anneal <= 1.0):
            raise ValidationError("learning_rate_anneal must be in (0, 1]")

    def resolved_max_seeds(self, n: int) -> int:
        if self.max_seeds is not None:
            return self.max_seeds
        return 2 * math.ceil(math.sqrt(n))


@dataclass
class LocalPartition:
    """Disjoint cover of a client's local indices by non-empty subclusters."""

    subclusters: list[np.ndarray]
    client_id: int
    converged: bool = True
    singleton_fallback: bool = False
    displacement_history: list[float] = field(default_factory=list)
    seeds: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.subclusters)

    @property
    def n(self) -> int:
        return sum(len(c) for c in self.subclusters)

    def labels(self) -> np.ndarray:
        """Per-point subcluster index."""
        out = np.full(self.n, -1, dtype=np.int64)
        for g, idx in enumerate(self.subclusters):
            out[idx] = g
        return out

    def check(self) -> None:
        """Assert the coverage/disjointness contract."""
        seen = np.concatenate(self.subclusters) if self.subclusters else np.empty(0, np.int64)
        if len(seen) != self.n or len(np.unique(seen)) != self.n:
            raise ValidationError("subclusters must be disjoint")
        for idx in self.subclusters:
            if len(idx) == 0:
                raise ValidationError("empty subcluster")


def local_density(points: np.ndarray, b_rho: int) -> np.ndarray:
    """Per-point density: b divided by the summed distance to the b nearest neighbors.

    b is clamped to the subcluster size minus one. Coincident points would give
    infinite density; those are capped at a large finite value so orderings
    survive.
    """
    pts = np.asarray(points, dtype=np.float64)
    m = pts.shape[0]
    if m == 1:
        return np.ones(1)
    b = max(1, min(int(b_rho), m - 1))
    dist = _pairwise(pts)
    np.fill_diagonal(dist, np.inf)
    nearest = np.sort(dist, axis=1)[:, :b]
    total = nearest.sum(axis=1)
    rho = np.where(total > 0, b / np.maximum(total, 1e-300), DENSITY_CAP)
    return np.minimum(rho, DENSITY_CAP)


def density_gap(points: np.ndarray, rho: np.ndarray) -> float:
    """Largest (distance to nearest denser point) / (mean pairwise distance) in a subcluster.

    Only points that have a denser in-subcluster point contribute, so the
    maximizer is the strongest secondary density peak. Density ties break
    toward the lower index. All points coinciding yields 0.
    """
    gap, _ = _gap_details(np.asarray(points, dtype=np.float64), np.asarray(rho))
    return gap


def _pairwise(pts: np.ndarray) -> np.ndarray:
    sq = np.sum(pts * pts, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (pts @ pts.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def _gap_details(pts: np.ndarray, rho: np.ndarray) -> tuple[float, int]:
    """Return (gap value, index of the secondary density peak or -1)."""
    m = pts.shape[0]
    if m < 2:
        return 0.0, -1
    dist = _pairwise(pts)
    iu = np.triu_indices(m, k=1)
    mean_dist = dist[iu].mean()
    if mean_dist <= 0.0:
        return 0.0, -1
    # rank 0 = densest; ties by index
    order = np.lexsort((np.arange(m), -rho))
    rank = np.empty(m, dtype=np.int64)
    rank[order] = np.arange(m)
    denser = rank[None, :] < rank[:, None]
    to_denser = np.where(denser, dist, np.inf).min(axis=1)
    peak = order[0]
    mask = np.arange(m) != peak
    secondary = int(np.flatnonzero(mask)[np.argmax(to_denser[mask])])
    gap = float(to_denser[secondary] / mean_dist)
    return gap, secondary


@njit(cache=True, nogil=True)
def _snp_epoch(points, order, seeds, wins, scale, alpha0, eta, sigma_p):  # pragma: no cover - jit
    n, d = points.shape
    k = seeds.shape[0]
    pre = np.empty(d)
    for s in range(n):
        i = order[s]
        best = 0
        best_d = 1e300
        second = -1
        second_d = 1e300
        for j in range(k):
            acc = 0.0
            for t in range(d):
                diff = points[i, t] - seeds[j, t]
                acc += diff * diff
            if acc < best_d:
                second = best
                second_d = best_d
                best = j
                best_d = acc
            elif acc < second_d:
                second = j
                second_d = acc
        alpha = alpha0 * scale[best] / (1.0 + wins[best] / 10.0)
        for t in range(d):
            pre[t] = seeds[best, t]
            seeds[best, t] += alpha * (points[i, t] - pre[t])
        wins[best] += 1.0
        if k >= 2 and second >= 0:
            gap2 = 0.0
            for t in range(d):
                diff = seeds[second, t] - pre[t]
                gap2 += diff * diff
            beta = math.exp(-math.sqrt(gap2) / sigma_p)
            for t in range(d):
                seeds[second, t] -= eta * beta * alpha * (points[i, t] - pre[t])


def _assign(points: np.ndarray, seeds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-seed labels and squared distances, chunked to bound memory."""
    n = points.shape[0]
    k = seeds.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    step = max(1, _ASSIGN_CHUNK // max(k, 1))
    seed_sq = np.sum(seeds * seeds, axis=1)
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        chunk = points[lo:hi]
        d2 = np.sum(chunk * chunk, axis=1)[:, None] + seed_sq[None, :] - 2.0 * (chunk @ seeds.T)
        labels[lo:hi] = np.argmin(d2, axis=1)
        best[lo:hi] = np.maximum(d2[np.arange(hi - lo), labels[lo:hi]], 0.0)
    return labels, best


def _subcluster_gap(points, members, b_cfg, cache):
    if len(members) < 2:
        return 0.0, -1
    key = members.tobytes()
    hit = cache.get(key)
    if hit is not None:
        return hit
    pts = points[members]
    b = b_cfg if b_cfg is not None else math.ceil(math.sqrt(len(members)))
    rho = local_density(pts, b)
    gap, local_peak = _gap_details(pts, rho)
    result = (gap, int(members[local_peak]) if local_peak >= 0 else -1)
    if len(cache) > 4096:
        cache.clear()
    cache[key] = result
    return result


def snp_partition(
    points: np.ndarray,
    cfg: SnpConfig | None = None,
    rng: SeededRng | np.random.Generator | None = None,
    client_id: int = 0,
) -> LocalPartition:
    """Partition a local slice into micro-subclusters by competitive learning.

    Runs epochs of winner/rival updates; at epoch boundaries where seed
    movement has stabilized, repeatedly spawns seeds at secondary density
    peaks while the strongest subcluster's density gap exceeds the threshold.
    Terminates when movement drops below the convergence threshold with no
    seed added, or when epochs run out.
    """
    cfg = cfg or SnpConfig()
    gen = as_generator(rng if rng is not None else SeededRng(0, 0))
    pts = np.ascontiguousarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n < cfg.initial_seeds:
        subs = [np.array([i], dtype=np.int64) for i in range(n)]
        return LocalPartition(subs, client_id, converged=True, singleton_fallback=True)

    max_seeds = max(cfg.resolved_max_seeds(n), cfg.initial_seeds)
    init = gen.choice(n, size=cfg.initial_seeds, replace=False)
    seeds = pts[np.sort(init)].copy()
    wins = np.zeros(len(seeds), dtype=np.float64)
    scale = np.ones(len(seeds), dtype=np.float64)
    xi = cfg.convergence_threshold
    history: list[float] = []
    converged = False
    gap_cache: dict[bytes, tuple[float, int]] = {}

    for _ in range(cfg.max_epochs):
        order = gen.permutation(n)
        sigma_p = 1.0
        if len(seeds) >= 2:
            sd = _pairwise(seeds)
            sigma_p = float(sd[np.triu_indices(len(seeds), k=1)].mean())
            if sigma_p <= 0.0:
                sigma_p = 1.0
        old = seeds.copy()
        _snp_epoch(pts, order, seeds, wins, scale,
                   cfg.base_learning_rate, cfg.penalty_strength, sigma_p)
        scale *= cfg.learning_rate_anneal
        disp = float(np.sqrt(((seeds - old) ** 2).sum(axis=1)).max())
        history.append(disp)

        added = False
        if disp < 10.0 * xi and len(seeds) < max_seeds:
            labels, best_d2 = _assign(pts, seeds)
            seeds, wins, scale, labels = _prune_empty(seeds, wins, scale, labels)
            members = [np.flatnonzero(labels == g) for g in range(len(seeds))]
            gaps = [
                _subcluster_gap(pts, mem, cfg.density_neighbor_count, gap_cache)
                for mem in members
            ]
            while len(seeds) < max_seeds:
                gap_arr = np.array([g for g, _ in gaps])
                peaks = np.array([p for _, p in gaps])
                candidates = np.flatnonzero((gap_arr > cfg.seed_add_threshold) & (peaks >= 0))
                if candidates.size == 0:
                    break
                jstar = int(candidates[np.argmax(wins[candidates] * gap_arr[candidates])])
                gap_j, peak_j = gaps[jstar]
                new_id = len(seeds)
                d2_new = np.maximum(np.sum((pts - pts[peak_j]) ** 2, axis=1), 0.0)
                moved = d2_new < best_d2
                if not moved.any():
                    # the peak is already a seed position; nothing to split off
                    gaps[jstar] = (0.0, -1)
                    continue
                seeds = np.vstack([seeds, pts[peak_j][None, :]])
                wins = np.append(wins, 0.0)
                scale = np.append(scale, 1.0)
                touched = set(np.unique(labels[moved]).tolist())
                labels[moved] = new_id
                best_d2[moved] = d2_new[moved]
                touched.add(new_id)
                for g in touched:
                    while len(members) <= g:
                        members.append(None)
                        gaps.append((0.0, -1))
                    members[g] = np.flatnonzero(labels == g)
                    gaps[g] = _subcluster_gap(pts, members[g], cfg.density_neighbor_count, gap_cache)
                added = True
        if disp < xi and not added:
            converged = True
            break

    labels, _ = _assign(pts, seeds)
    seeds, wins, scale, labels = _prune_empty(seeds, wins, scale, labels)
    subs = [np.flatnonzero(labels == g) for g in range(len(seeds))]
    part = LocalPartition(
        subs,
        client_id,
        converged=converged,
        displacement_history=history,
        seeds=seeds,
    )
    part.check()
    return part


def _prune_empty(seeds, wins, scale, labels):
    counts = np.bincount(labels, minlength=len(seeds))
    keep = np.flatnonzero(counts > 0)
    if len(keep) == len(seeds):
        return seeds, wins, scale, labels
    remap = np.full(len(seeds), -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    return seeds[keep], wins[keep], scale[keep], remap[labels]


def grid_partition(
    points: np.ndarray,
    target_count: int,
    rng: SeededRng | np.random.Generator | None = None,
    client_id: int = 0,
    max_iter: int = 60,
) -> LocalPartition:
    """k-means style over-segmentation with ``target_count`` centers.

    Same output contract as snp_partition. target_count is clamped to the
    slice size; empty clusters are reseeded at the point farthest from its
    center.
    """
    if target_count < 1:
        raise ValidationError("target_count must be >= 1")
    gen = as_generator(rng if rng is not None else SeededRng(0, 0))
    pts = np.ascontiguousarray(points, dtype=np.float64)
    n = pts.shape[0]
    k = min(target_count, n)
    if k == n:
        subs = [np.array([i], dtype=np.int64) for i in range(n)]
        return LocalPartition(subs, client_id, converged=True)
    centers = pts[_kpp_init(pts, k, gen)].copy()
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        new_labels, best_d2 = _assign(pts, centers)
        # reseed empties at the worst-served point
        for g in np.flatnonzero(np.bincount(new_labels, minlength=k) == 0):
            far = int(np.argmax(best_d2))
            centers[g] = pts[far]
            new_labels[far] = g
            best_d2[far] = 0.0
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for g in range(k):
            mem = labels == g
            if mem.any():
                centers[g] = pts[mem].mean(axis=0)
    subs = [np.flatnonzero(labels == g) for g in range(k)]
    part = LocalPartition(subs, client_id, converged=True, seeds=centers)
    part.check()
    return part


def _kpp_init(pts: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    n = pts.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = gen.integers(n)
    d2 = np.sum((pts - pts[chosen[0]]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            remaining = np.setdiff1d(np.arange(n), chosen[:j])
            chosen[j:] = remaining[: k - j] if len(remaining) >= k - j else chosen[0]
            break
        chosen[j] = gen.choice(n, p=d2 / total)
        d2 = np.minimum(d2, np.sum((pts - pts[chosen[j]]) ** 2, axis=1))
    return chosen
