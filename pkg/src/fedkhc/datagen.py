"""Seeded Gaussian-mixture generators for the built-in benchmark datasets.

Component counts follow the published benchmark sizes; the means and
covariances are fixed constants kept in mixtures.json next to this module.
Counts are exact (no multinomial sampling), and generation is deterministic
under a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .federation import FederationConfig
from .model import PointSet, SeededRng, ValidationError, as_generator, normalize

BUILTIN_DATASETS = (
    "ids2",
    "gaussian",
    "ids2_22",
    "ids2_2k22",
    "ids2_non_iid",
    "gaussian_non_iid",
)


@dataclass(frozen=True)
class MixtureComponent:
    size: int
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class MixtureSpec:
    name: str
    components: tuple[MixtureComponent, ...]

    def __post_init__(self):
        if not self.components:
            raise ValidationError(f"{self.name}: no components")
        means = []
        for comp in self.components:
            if comp.size < 1:
                raise ValidationError(f"{self.name}: component size must be positive")
            try:
                np.linalg.cholesky(comp.cov)
            except np.linalg.LinAlgError as exc:
                raise ValidationError(f"{self.name}: covariance not positive definite") from exc
            means.append(tuple(comp.mean.tolist()))
        if len(set(means)) != len(means):
            raise ValidationError(f"{self.name}: component means must be pairwise distinct")

    @property
    def n(self) -> int:
        return sum(c.size for c in self.components)

    @property
    def k(self) -> int:
        return len(self.components)


def generate(spec: MixtureSpec, rng: SeededRng | np.random.Generator) -> PointSet:
    """Draw exactly the per-component counts, label by component, and normalize."""
    gen = as_generator(rng)
    chunks = []
    labels = []
    for idx, comp in enumerate(spec.components):
        factor = np.linalg.cholesky(comp.cov)
        z = gen.standard_normal((comp.size, len(comp.mean)))
        chunks.append(comp.mean + z @ factor.T)
        labels.append(np.full(comp.size, idx, dtype=np.int64))
    return normalize(np.vstack(chunks), dataset_id=spec.name, labels=np.concatenate(labels))


def builtin_specs() -> dict[str, MixtureSpec]:
    """The checked-in mixture constants, keyed by base dataset name."""
    text = resources.files("fedkhc").joinpath("mixtures.json").read_text(encoding="utf-8")
    raw = json.loads(text)
    out = {}
    for name, body in raw.items():
        comps = tuple(
            MixtureComponent(
                size=int(c["size"]),
                mean=np.asarray(c["mean"], dtype=np.float64),
                cov=np.asarray(c["cov"], dtype=np.float64),
            )
            for c in body["components"]
        )
        out[name] = MixtureSpec(name=name, components=comps)
    return out


def dataset_split_mode(name: str) -> str:
    """Built-in dataset names ending in _non_iid use the clusters-per-client split."""
    return "clusters_per_client" if name.endswith("_non_iid") else "iid"


def base_spec_name(name: str) -> str:
    return name[: -len("_non_iid")] if name.endswith("_non_iid") else name


def load_builtin(name: str, seed: int) -> tuple[PointSet, FederationConfig]:
    """Generate a built-in dataset and its reference federation setting."""
    if name not in BUILTIN_DATASETS:
        raise ValidationError(f"unknown dataset {name!r}; builtins: {', '.join(BUILTIN_DATASETS)}")
    spec = builtin_specs()[base_spec_name(name)]
    data = generate(spec, SeededRng(seed, 0))
    data = PointSet(points=data.points, labels=data.labels, dataset_id=name)
    fed = FederationConfig(num_clients=3, split_mode=dataset_split_mode(name), seed=seed)
    return data, fed
