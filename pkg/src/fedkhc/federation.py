"""One-shot protocol orchestration: split, client pipelines, single upload, server pipeline.

Uploads pass through full JSON serialization even in-process so wire-format
bugs surface in tests. Client pipelines use independent RNG streams keyed by
client index, so results are identical whether clients run serially or in a
thread pool.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import cardinality, merger, partitioner, surrogate
from .cardinality import GcsConfig, NeighborGraph, SncConfig
from .merger import MergeConfig, MergeResult
from .model import SERVER_STREAM, Partition, PointSet, SeededRng, ValidationError
from .partitioner import LocalPartition, SnpConfig
from .surrogate import ClientUpload


@dataclass(frozen=True)
class FederationConfig:
    num_clients: int = 3
    split_mode: str = "iid"  # "iid" | "clusters_per_client"
    clusters_per_client: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValidationError("num_clients must be >= 1")
        if self.split_mode not in ("iid", "clusters_per_client"):
            raise ValidationError(f"unknown split_mode {self.split_mode!r}")
        if self.split_mode == "clusters_per_client" and self.clusters_per_client < 1:
            raise ValidationError("clusters_per_client must be >= 1")


@dataclass
class RoundLog:
    uploads_per_client: list[int]
    bytes_per_client: list[int]
    phase_seconds: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "uploads_per_client": self.uploads_per_client,
            "bytes_per_client": self.bytes_per_client,
            "phase_seconds": {k: float(v) for k, v in self.phase_seconds.items()},
        }


@dataclass
class RoundResult:
    partition: Partition
    log: RoundLog
    k_star: int
    neighbor_graph: NeighborGraph
    merge: MergeResult
    client_slices: list[np.ndarray]
    serialized_uploads: list[str]
    partitions: list[LocalPartition]


def split_iid(data: PointSet, num_clients: int, rng: SeededRng | np.random.Generator) -> list[np.ndarray]:
    """Shuffle and deal near-equal contiguous chunks; returns index arrays per client."""
    n = data.n
    if n < num_clients:
        raise ValidationError(f"cannot split {n} points across {num_clients} clients")
    gen = _gen(rng)
    perm = gen.permutation(n)
    base = n // num_clients
    extra = n % num_clients
    out = []
    pos = 0
    for z in range(num_clients):
        size = base + (1 if z < extra else 0)
        out.append(np.sort(perm[pos : pos + size]))
        pos += size
    return out


def split_by_cluster(
    data: PointSet,
    num_clients: int,
    clusters_per_client: int,
    rng: SeededRng | np.random.Generator,
) -> list[np.ndarray]:
    """Give each client points from exactly clusters_per_client ground-truth clusters.

    Shuffled cluster ids are dealt round-robin; clients still short of their
    quota draw additional distinct clusters, so a cluster may span several
    clients (its points are then split near-evenly among them). Every cluster
    is held by at least one client.
    """
    if data.labels is None:
        raise ValidationError("clusters_per_client split requires ground-truth labels")
    k = data.n_classes
    if clusters_per_client > k:
        raise ValidationError(f"clusters_per_client={clusters_per_client} exceeds K={k}")
    if clusters_per_client * num_clients < k:
        raise ValidationError(
            f"{num_clients} clients x {clusters_per_client} clusters cannot cover K={k}"
        )
    gen = _gen(rng)
    order = gen.permutation(k)
    holdings: list[list[int]] = [[] for _ in range(num_clients)]
    for pos, cluster in enumerate(order):
        holdings[pos % num_clients].append(int(cluster))
    cursor = 0
    for z in range(num_clients):
        while len(holdings[z]) < clusters_per_client:
            candidate = int(order[cursor % k])
            cursor += 1
            if candidate not in holdings[z]:
                holdings[z].append(candidate)

    owners: dict[int, list[int]] = {c: [] for c in range(k)}
    for z, held in enumerate(holdings):
        for c in held:
            owners[c].append(z)
    out: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    for c in range(k):
        idx = np.flatnonzero(data.labels == c)
        idx = gen.permutation(idx)
        shares = np.array_split(idx, len(owners[c]))
        for z, share in zip(owners[c], shares):
            out[z].append(share)
    return [np.sort(np.concatenate(parts)) for parts in out]


def _gen(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return rng.generator()


def _client_pipeline(args):
    z, points, fed_seed, strategy, snp_cfg, grid_target = args
    rng = SeededRng(fed_seed, z + 1).generator()
    if strategy == "grid":
        target = grid_target or 2 * int(np.ceil(np.sqrt(points.shape[0])))
        part = partitioner.grid_partition(points, target, rng, client_id=z)
    else:
        part = partitioner.snp_partition(points, snp_cfg, rng, client_id=z)
    summaries = surrogate.summarize(points, part)
    upload = surrogate.generate_surrogates(summaries, points, rng, client_id=z)
    wire = surrogate.upload_to_json(upload)
    return part, wire


def run_round(
    data: PointSet,
    fed: FederationConfig | None = None,
    snp: SnpConfig | None = None,
    snc: SncConfig | None = None,
    gcs: GcsConfig | None = None,
    merge: MergeConfig | None = None,
    strategy: str = "snp",
    grid_target: int | None = None,
    workers: int | None = None,
) -> RoundResult:
    """Run one full federated round and reassemble the global partition.

    split -> per-client partition + surrogate generation -> one upload per
    client -> server-side cluster-count estimation -> hierarchical merging ->
    label return. The returned partition is in original point order.
    """
    fed = fed or FederationConfig()
    snp = snp or SnpConfig()
    snc = snc or SncConfig()
    gcs = gcs or GcsConfig()
    merge = merge or MergeConfig()
    if strategy not in ("snp", "grid"):
        raise ValidationError(f"unknown partitioner strategy {strategy!r}")
    if workers is None:
        workers = int(os.environ.get("FEDKHC_THREADS", "1") or "1")
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    split_rng = SeededRng(fed.seed, SERVER_STREAM).generator()
    if fed.split_mode == "iid":
        slices = split_iid(data, fed.num_clients, split_rng)
    else:
        slices = split_by_cluster(data, fed.num_clients, fed.clusters_per_client, split_rng)
    timings["split"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    jobs = [
        (z, data.points[slices[z]], fed.seed, strategy, snp, grid_target)
        for z in range(fed.num_clients)
    ]
    if workers > 1 and fed.num_clients > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_client_pipeline, jobs))
    else:
        results = [_client_pipeline(job) for job in jobs]
    parts = [r[0] for r in results]
    wires = [r[1] for r in results]
    timings["clients"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    uploads: list[ClientUpload] = [surrogate.upload_from_json(w) for w in wires]
    timings["deserialize"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    centroids = np.vstack([b.summary.centroid for up in uploads for b in up.blocks])
    server_rng = SeededRng(fed.seed, fed.num_clients + 1)
    reduced = cardinality.gcs_reduce(centroids, gcs, server_rng, enabled=snc.gcs_enabled)
    if reduced.nodes.shape[0] < 2:
        k_star = 1
        graph = NeighborGraph(
            nodes=reduced.nodes,
            lnn_pairs=set(),
            snn_pairs=set(),
            b_optimal=0,
            p_curve=[],
            b_fallback=False,
            threshold=0.0,
            d_s=0.0,
            ds_fallback=False,
            component_labels=np.zeros(reduced.nodes.shape[0], dtype=np.int64),
            gcs_passthrough=reduced.passthrough,
        )
    else:
        k_star, graph = cardinality.estimate_k(
            reduced.nodes, snc, gcs_passthrough=reduced.passthrough
        )
    timings["estimate_k"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    merged = merger.merge_to_k(uploads, k_star, merge)
    timings["merge"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    client_labels = merger.relabel_clients(merged.block_assignment, uploads, parts)
    assignment = np.full(data.n, -1, dtype=np.int64)
    for idx, labels in zip(slices, client_labels):
        assignment[idx] = labels
    partition = Partition.from_labels(assignment)
    timings["relabel"] = time.perf_counter() - t0

    log = RoundLog(
        uploads_per_client=[1] * fed.num_clients,
        bytes_per_client=[len(w.encode("utf-8")) for w in wires],
        phase_seconds=timings,
    )
    return RoundResult(
        partition=partition,
        log=log,
        k_star=k_star,
        neighbor_graph=graph,
        merge=merged,
        client_slices=slices,
        serialized_uploads=wires,
        partitions=parts,
    )
