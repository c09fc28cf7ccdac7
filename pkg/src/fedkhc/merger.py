"""Server-side hierarchical merging of uploaded subclusters down to k* clusters.

Merge priority is the special distance

    d = dist(c_a, c_b) * o * sim^beta

where o = dist / (r_a + r_b) is the overlap ratio of the two radii and
sim = ||s_a - s_b||_2 compares the per-dimension standard deviations (floored
at sim_floor so identical spreads cannot collapse d to zero). Statistics of a
merged cluster are recomputed from the pooled surrogate samples, which the
server holds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ValidationError
from .partitioner import LocalPartition
from .surrogate import ClientUpload


@dataclass(frozen=True)
class MergeConfig:
    beta: float = 1.0
    sim_floor: float = 1e-6

    def __post_init__(self):
        if self.beta < 0:
            raise ValidationError("beta must be >= 0")
        if self.sim_floor <= 0:
            raise ValidationError("sim_floor must be positive")


@dataclass
class ActiveCluster:
    """A live cluster during merging: member blocks plus pooled-sample statistics."""

    member_block_ids: tuple[str, ...]
    sample_indices: np.ndarray
    size: int
    centroid: np.ndarray
    radius: float
    stddev: np.ndarray


@dataclass
class MergeResult:
    clusters: list[ActiveCluster]
    block_assignment: dict[str, int]
    merge_log: list[tuple[str, str]] = field(default_factory=list)
    degenerate_overlap_pairs: int = 0


def special_distance(a: ActiveCluster, b: ActiveCluster, cfg: MergeConfig | None = None) -> float:
    """Merge priority between two clusters; smaller means merge sooner."""
    cfg = cfg or MergeConfig()
    dist = float(np.linalg.norm(a.centroid - b.centroid))
    rsum = a.radius + b.radius
    overlap = dist / rsum if rsum > 0 else dist / cfg.sim_floor
    sim = max(float(np.linalg.norm(a.stddev - b.stddev)), cfg.sim_floor)
    return dist * overlap * sim**cfg.beta


def _cluster_stats(samples: np.ndarray) -> tuple[np.ndarray, float, np.ndarray]:
    centroid = samples.mean(axis=0)
    radius = float(np.sqrt(((samples - centroid) ** 2).sum(axis=1)).mean())
    if samples.shape[0] > 1:
        stddev = samples.std(axis=0, ddof=1)
    else:
        stddev = np.zeros(samples.shape[1])
    return centroid, radius, stddev


def _distances_from(i, cent, rad, sdev, cols, cfg):
    """Vector of special distances from cluster i to each cluster in cols."""
    diff = cent[cols] - cent[i]
    dist = np.sqrt((diff * diff).sum(axis=1))
    rsum = rad[cols] + rad[i]
    safe = np.where(rsum > 0, rsum, cfg.sim_floor)
    overlap = dist / safe
    sim = np.maximum(np.sqrt(((sdev[cols] - sdev[i]) ** 2).sum(axis=1)), cfg.sim_floor)
    return dist * overlap * sim**cfg.beta


class _PairHeap:
    """Upper-triangular distance matrix with cached row minima.

    Global argmin is O(k); a merge invalidates one row/column pair and
    rescans only rows whose cached minimum pointed into it.
    """

    def __init__(self, k0: int):
        self.k0 = k0
        self.dmat = np.full((k0, k0), np.inf)
        self.row_min = np.full(k0, np.inf)
        self.row_arg = np.full(k0, -1, dtype=np.int64)

    def set_row(self, i: int, cols: np.ndarray, values: np.ndarray) -> None:
        """Write pair distances between i and cols (splitting into row/column halves)."""
        above = cols[cols > i]
        below = cols[cols < i]
        if above.size:
            self.dmat[i, above] = values[cols > i]
        if below.size:
            self.dmat[below, i] = values[cols < i]
        self._rescan(i)
        for j in below:
            v = self.dmat[j, i]
            if v < self.row_min[j] or (v == self.row_min[j] and i < self.row_arg[j]):
                self.row_min[j] = v
                self.row_arg[j] = i
            elif self.row_arg[j] == i:
                self._rescan(j)

    def kill(self, q: int) -> None:
        self.dmat[q, :] = np.inf
        self.dmat[:, q] = np.inf
        self.row_min[q] = np.inf
        self.row_arg[q] = -1
        stale = np.flatnonzero(self.row_arg == q)
        for j in stale:
            self._rescan(j)

    def _rescan(self, i: int) -> None:
        j = int(np.argmin(self.dmat[i]))
        self.row_min[i] = self.dmat[i, j]
        self.row_arg[i] = j if np.isfinite(self.row_min[i]) else -1

    def argmin_pair(self) -> tuple[int, int]:
        i = int(np.argmin(self.row_min))
        if not np.isfinite(self.row_min[i]):
            raise RuntimeError("no finite pair distance left to merge")
        return i, int(self.row_arg[i])


def merge_to_k(
    uploads: list[ClientUpload],
    k_star: int,
    cfg: MergeConfig | None = None,
) -> MergeResult:
    """Merge the uploaded blocks pairwise until exactly k_star clusters remain.

    Each iteration joins the argmin special-distance pair (ties broken by
    lowest id pair) and recomputes size, centroid, radius, and stddev over the
    union of surrogate samples. Exactly k0 - k_star merges are performed.
    """
    cfg = cfg or MergeConfig()
    if k_star < 1:
        raise ValidationError("k_star must be >= 1")
    blocks = [b for up in uploads for b in up.blocks]
    k0 = len(blocks)
    if k0 == 0:
        raise ValidationError("no blocks to merge")
    if k_star > k0:
        raise ValidationError(
            f"k_star={k_star} exceeds the {k0} uploaded blocks; "
            "lower the target or partition more finely"
        )

    pooled = np.concatenate([b.samples for b in blocks], axis=0)
    d = pooled.shape[1]
    offsets = np.cumsum([0] + [b.samples.shape[0] for b in blocks])
    members: list[tuple[str, ...] | None] = []
    indices: list[np.ndarray | None] = []
    sizes = np.zeros(k0, dtype=np.int64)
    cent = np.zeros((k0, d))
    rad = np.zeros(k0)
    sdev = np.zeros((k0, d))
    for g, block in enumerate(blocks):
        idx = np.arange(offsets[g], offsets[g + 1])
        members.append((block.summary.id,))
        indices.append(idx)
        sizes[g] = len(idx)
        cent[g], rad[g], sdev[g] = _cluster_stats(pooled[idx])

    heap = _PairHeap(k0)
    alive = np.ones(k0, dtype=bool)
    degenerate = 0
    all_ids = np.arange(k0)
    for i in range(k0 - 1):
        cols = all_ids[i + 1 :]
        values = _distances_from(i, cent, rad, sdev, cols, cfg)
        degenerate += int(np.count_nonzero(rad[cols] + rad[i] == 0))
        heap.dmat[i, cols] = values
    for i in range(k0):
        heap._rescan(i)

    log: list[tuple[str, str]] = []
    for _ in range(k0 - k_star):
        p, q = heap.argmin_pair()
        log.append(("+".join(members[p]), "+".join(members[q])))
        idx = np.concatenate([indices[p], indices[q]])
        members[p] = members[p] + members[q]
        members[q] = None
        indices[p] = idx
        indices[q] = None
        sizes[p] += sizes[q]
        alive[q] = False
        cent[p], rad[p], sdev[p] = _cluster_stats(pooled[idx])
        heap.kill(q)
        others = np.flatnonzero(alive)
        others = others[others != p]
        if others.size:
            values = _distances_from(p, cent, rad, sdev, others, cfg)
            degenerate += int(np.count_nonzero(rad[others] + rad[p] == 0))
            heap.set_row(p, others, values)

    final_ids = np.flatnonzero(alive)
    clusters = [
        ActiveCluster(
            member_block_ids=members[g],
            sample_indices=indices[g],
            size=int(sizes[g]),
            centroid=cent[g].copy(),
            radius=float(rad[g]),
            stddev=sdev[g].copy(),
        )
        for g in final_ids
    ]
    assignment: dict[str, int] = {}
    for cid, cluster in enumerate(clusters):
        for block_id in cluster.member_block_ids:
            assignment[block_id] = cid
    return MergeResult(
        clusters=clusters,
        block_assignment=assignment,
        merge_log=log,
        degenerate_overlap_pairs=degenerate,
    )


def relabel_clients(
    assignment: dict[str, int],
    uploads: list[ClientUpload],
    partitions: list[LocalPartition],
) -> list[np.ndarray]:
    """Map each client's local points to the global cluster of their block.

    uploads[z].blocks[g] must correspond to partitions[z].subclusters[g], which
    is how the client pipeline constructs them.
    """
    if len(uploads) != len(partitions):
        raise ValidationError("uploads and partitions must align per client")
    out = []
    for upload, part in zip(uploads, partitions):
        if len(upload.blocks) != part.k:
            raise ValidationError(
                f"client {upload.client_id}: {len(upload.blocks)} blocks vs {part.k} subclusters"
            )
        labels = np.full(part.n, -1, dtype=np.int64)
        for block, mem in zip(upload.blocks, part.subclusters):
            if block.summary.id not in assignment:
                raise ValidationError(f"unknown block id {block.summary.id!r} in assignment")
            labels[mem] = assignment[block.summary.id]
        out.append(labels)
    return out
