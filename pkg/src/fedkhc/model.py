"""Shared domain types: datasets, partitions, subcluster summaries, seeded RNG streams."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1

SERVER_STREAM = 0


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


@dataclass(frozen=True)
class SeededRng:
    """Handle for a reproducible random stream.

    Identical (seed, stream_id) pairs reproduce identical streams across runs
    and regardless of how many streams run in parallel. Stream 0 is reserved
    for the server; client z uses stream z + 1.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed & _MASK64, spawn_key=(self.stream_id,))
        return np.random.default_rng(seq)


def as_generator(rng: SeededRng | np.random.Generator) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return rng.generator()


@dataclass(frozen=True)
class PointSet:
    """An n x d sample matrix normalized to [0, 1], with optional ground-truth labels."""

    points: np.ndarray
    labels: np.ndarray | None = None
    dataset_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValidationError(f"points must be a non-empty 2-D matrix, got shape {pts.shape}")
        if not np.isfinite(pts).all():
            bad = np.argwhere(~np.isfinite(pts))[0]
            raise ValidationError(f"non-finite value at row {bad[0]}, column {bad[1]}")
        if pts.min() < -1e-12 or pts.max() > 1.0 + 1e-12:
            raise ValidationError("points must lie in [0, 1]; use normalize() on raw data")
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (pts.shape[0],):
                raise ValidationError(f"labels length {lab.shape} does not match n={pts.shape[0]}")
            uniq = np.unique(lab)
            if uniq[0] != 0 or uniq[-1] != len(uniq) - 1:
                raise ValidationError("labels must be contiguous ids 0..K-1")
            object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def n_classes(self) -> int:
        if self.labels is None:
            raise ValidationError("point set has no ground-truth labels")
        return int(self.labels.max()) + 1


@dataclass(frozen=True)
class SubclusterSummary:
    """Statistics describing one micro-subcluster, uploaded in place of its raw points."""

    id: str
    size: int
    centroid: np.ndarray
    radius: float
    stddev: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        if self.size < 1:
            raise ValidationError(f"subcluster {self.id} has size {self.size}")
        cov = np.asarray(self.covariance, dtype=np.float64)
        if np.abs(cov - cov.T).max() > 1e-9:
            raise ValidationError(f"covariance of {self.id} is not symmetric within 1e-9")
        if self.radius < 0 or (np.asarray(self.stddev) < 0).any():
            raise ValidationError(f"negative spread statistic in {self.id}")


@dataclass(frozen=True)
class Partition:
    """A labeling of n items into k clusters with contiguous ids 0..k-1."""

    assignment: np.ndarray
    k: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", a)
        if a.ndim != 1 or a.size == 0:
            raise ValidationError("assignment must be a non-empty 1-D vector")
        present = np.unique(a)
        if present[0] != 0 or present[-1] != self.k - 1 or len(present) != self.k:
            raise ValidationError("assignment ids must be exactly 0..k-1, each occurring at least once")

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        """Build a Partition from arbitrary integer labels, compacting ids to 0..k-1."""
        labels = np.asarray(labels)
        _, compact = np.unique(labels, return_inverse=True)
        return cls(assignment=compact.astype(np.int64), k=int(compact.max()) + 1)

    @property
    def n(self) -> int:
        return self.assignment.size

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def normalize(points, dataset_id: str = "", labels=None) -> PointSet:
    """Min-max scale each dimension of a raw matrix to [0, 1].

    Constant dimensions map to 0.0. Idempotent: normalizing an already
    normalized matrix changes nothing.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
        raise ValidationError(f"expected a non-empty 2-D matrix, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        bad = np.argwhere(~np.isfinite(pts))[0]
        raise ValidationError(f"non-finite value at row {bad[0]}, column {bad[1]}")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = hi - lo
    out = np.zeros_like(pts)
    live = span > 0
    out[:, live] = (pts[:, live] - lo[live]) / span[live]
    return PointSet(points=out, labels=labels, dataset_id=dataset_id)


def write_csv(path, data: PointSet) -> None:
    """Write a point set in the interchange CSV format (header, optional final `label` column)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = [f"f{j}" for j in range(data.d)]
        if data.labels is not None:
            header.append("label")
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(v) for v in data.points[i]]
            if data.labels is not None:
                row.append(str(int(data.labels[i])))
            writer.writerow(row)


def read_csv(path, dataset_id: str = "") -> PointSet:
    """Load a CSV with a header row; a final column named `label` becomes ground truth.

    Raw feature values are min-max normalized; labels are compacted to 0..K-1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}: empty file")
        has_label = header[-1].strip().lower() == "label"
        n_feat = len(header) - 1 if has_label else len(header)
        if n_feat < 1:
            raise ValidationError(f"{path}: no feature columns")
        feats: list[list[float]] = []
        labels: list[int] = []
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{ln}: expected {len(header)} columns, got {len(row)}")
            try:
                feats.append([float(v) for v in row[:n_feat]])
            except ValueError as exc:
                raise ValidationError(f"{path}:{ln}: {exc}") from exc
            if has_label:
                labels.append(int(float(row[-1])))
    if not feats:
        raise ValidationError(f"{path}: no data rows")
    lab = None
    if has_label:
        _, lab = np.unique(np.asarray(labels, dtype=np.int64), return_inverse=True)
        lab = lab.astype(np.int64)
    name = dataset_id or str(path)
    return normalize(np.asarray(feats), dataset_id=name, labels=lab)
