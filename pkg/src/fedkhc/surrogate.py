"""Subcluster statistics and surrogate-sample generation for the one-shot upload.

Each subcluster is summarized by its size, centroid, radius (mean distance to
the centroid), per-dimension standard deviation, mean, and covariance. An
equal number of synthetic samples is drawn from a normal fit to each
subcluster and uploaded in place of the raw points; no uploaded row is ever
bit-identical to a raw local point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import SeededRng, SubclusterSummary, ValidationError, as_generator
from .partitioner import LocalPartition


@dataclass(frozen=True)
class SurrogateBlock:
    summary: SubclusterSummary
    samples: np.ndarray

    def __post_init__(self):
        if self.samples.shape[0] != self.summary.size:
            raise ValidationError(
                f"block {self.summary.id}: {self.samples.shape[0]} samples for size {self.summary.size}"
            )


@dataclass(frozen=True)
class ClientUpload:
    """The single message a client sends: surrogate blocks plus the R, N, S lists."""

    client_id: int
    blocks: tuple[SurrogateBlock, ...]

    @property
    def radii(self) -> list[float]:
        return [b.summary.radius for b in self.blocks]

    @property
    def sizes(self) -> list[int]:
        return [b.summary.size for b in self.blocks]

    @property
    def stddevs(self) -> list[np.ndarray]:
        return [b.summary.stddev for b in self.blocks]


def summarize(points: np.ndarray, part: LocalPartition) -> list[SubclusterSummary]:
    """Compute the per-subcluster statistics over a local slice.

    Covariance and standard deviation use the n-1 denominator; singleton
    subclusters get zero spread and a zero covariance matrix.
    """
    pts = np.asarray(points, dtype=np.float64)
    out = []
    for g, idx in enumerate(part.subclusters):
        sub = pts[idx]
        n_g, d = sub.shape
        centroid = sub.mean(axis=0)
        radius = float(np.sqrt(((sub - centroid) ** 2).sum(axis=1)).mean())
        if n_g > 1:
            stddev = sub.std(axis=0, ddof=1)
            cov = np.cov(sub, rowvar=False, ddof=1).reshape(d, d)
        else:
            stddev = np.zeros(d)
            cov = np.zeros((d, d))
        out.append(
            SubclusterSummary(
                id=f"c{part.client_id}/b{g}",
                size=n_g,
                centroid=centroid,
                radius=radius,
                stddev=stddev,
                mean=centroid.copy(),
                covariance=cov,
            )
        )
    return out


def regularize_covariance(cov: np.ndarray, eps: float | None = None) -> np.ndarray:
    """Ridge a symmetric covariance so it admits a real Cholesky factor.

    eps defaults to max(1e-9, 1e-6 * trace / d), scale-aware so orientation is
    preserved. Raises on input that is not symmetric within 1e-9.
    """
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValidationError(f"covariance must be square, got {cov.shape}")
    if np.abs(cov - cov.T).max() > 1e-9:
        raise ValidationError("covariance is not symmetric within 1e-9")
    d = cov.shape[0]
    if eps is None:
        eps = max(1e-9, 1e-6 * float(np.trace(cov)) / d)
    elif eps <= 0:
        raise ValidationError("eps must be positive")
    return cov + eps * np.eye(d)


def generate_surrogates(
    summaries: list[SubclusterSummary],
    raw_points: np.ndarray,
    rng: SeededRng | np.random.Generator,
    client_id: int = 0,
    volume_multiplier: float = 1.0,
) -> ClientUpload:
    """Draw per-subcluster normal samples and assemble the one-shot upload.

    Each block gets round(multiplier * size) samples (at least 1) via the
    lower-triangular factor of the regularized covariance. Rows colliding
    exactly with any raw local point are redrawn.
    """
    raw = np.ascontiguousarray(raw_points, dtype=np.float64)
    forbidden = {row.tobytes() for row in raw}
    gen = as_generator(rng)
    blocks = []
    for summ in summaries:
        factor = np.linalg.cholesky(regularize_covariance(summ.covariance))
        count = max(1, int(round(volume_multiplier * summ.size)))
        if count != summ.size:
            # the declared size always matches what is actually uploaded
            summ = SubclusterSummary(
                id=summ.id, size=count, centroid=summ.centroid, radius=summ.radius,
                stddev=summ.stddev, mean=summ.mean, covariance=summ.covariance,
            )
        z = gen.standard_normal((count, raw.shape[1]))
        samples = summ.mean + z @ factor.T
        for i in range(count):
            guard = 0
            while samples[i].tobytes() in forbidden:
                samples[i] = summ.mean + gen.standard_normal(raw.shape[1]) @ factor.T
                guard += 1
                if guard > 1000:
                    raise RuntimeError("surrogate sampling cannot avoid raw rows")
        blocks.append(SurrogateBlock(summary=summ, samples=samples))
    return ClientUpload(client_id=client_id, blocks=tuple(blocks))


def upload_to_json(upload: ClientUpload) -> str:
    """Serialize an upload to the wire format (full float precision)."""
    payload = {
        "client_id": upload.client_id,
        "blocks": [
            {
                "id": b.summary.id,
                "size": b.summary.size,
                "centroid": b.summary.centroid.tolist(),
                "radius": b.summary.radius,
                "stddev": b.summary.stddev.tolist(),
                "mean": b.summary.mean.tolist(),
                "covariance": b.summary.covariance.tolist(),
                "samples": b.samples.tolist(),
            }
            for b in upload.blocks
        ],
    }
    return json.dumps(payload)


def upload_from_json(text: str) -> ClientUpload:
    """Parse and validate a serialized upload."""
    payload = json.loads(text)
    blocks = []
    for raw in payload["blocks"]:
        samples = np.asarray(raw["samples"], dtype=np.float64)
        summ = SubclusterSummary(
            id=str(raw["id"]),
            size=int(raw["size"]),
            centroid=np.asarray(raw["centroid"], dtype=np.float64),
            radius=float(raw["radius"]),
            stddev=np.asarray(raw["stddev"], dtype=np.float64),
            mean=np.asarray(raw["mean"], dtype=np.float64),
            covariance=np.asarray(raw["covariance"], dtype=np.float64),
        )
        if not np.isfinite(samples).all():
            raise ValidationError(f"block {summ.id}: non-finite sample")
        blocks.append(SurrogateBlock(summary=summ, samples=samples))
    return ClientUpload(client_id=int(payload["client_id"]), blocks=tuple(blocks))
