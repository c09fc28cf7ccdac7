"""External clustering-quality metrics: F-measure, Accuracy, NMI, ARI, DCV.

All five are invariant under relabeling of either partition's cluster ids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import Partition, ValidationError


@dataclass(frozen=True)
class ContingencyTable:
    """Co-occurrence counts between true classes (rows) and predicted clusters (columns)."""

    counts: np.ndarray
    row_marginals: np.ndarray
    col_marginals: np.ndarray
    n: int

    @classmethod
    def from_partitions(cls, truth: Partition, pred: Partition) -> "ContingencyTable":
        if truth.n != pred.n:
            raise ValidationError(f"partition lengths differ: {truth.n} vs {pred.n}")
        counts = np.zeros((truth.k, pred.k), dtype=np.int64)
        np.add.at(counts, (truth.assignment, pred.assignment), 1)
        return cls(
            counts=counts,
            row_marginals=counts.sum(axis=1),
            col_marginals=counts.sum(axis=0),
            n=truth.n,
        )


def nmi(truth: Partition, pred: Partition) -> float:
    """Normalized mutual information, I(T;P) / sqrt(H(T) * H(P))."""
    table = ContingencyTable.from_partitions(truth, pred)
    n = table.n
    p_ij = table.counts / n
    p_i = table.row_marginals / n
    p_j = table.col_marginals / n
    h_t = -np.sum(p_i[p_i > 0] * np.log(p_i[p_i > 0]))
    h_p = -np.sum(p_j[p_j > 0] * np.log(p_j[p_j > 0]))
    if h_t == 0.0 and h_p == 0.0:
        return 1.0
    if h_t == 0.0 or h_p == 0.0:
        return 0.0
    nz = p_ij > 0
    outer = np.outer(p_i, p_j)
    mi = np.sum(p_ij[nz] * (np.log(p_ij[nz]) - np.log(outer[nz])))
    value = mi / np.sqrt(h_t * h_p)
    return float(min(max(value, 0.0), 1.0))


def ari(truth: Partition, pred: Partition) -> float:
    """Adjusted Rand index from pair counting on the contingency table."""
    table = ContingencyTable.from_partitions(truth, pred)

    def comb2(x):
        x = np.asarray(x, dtype=np.float64)
        return x * (x - 1.0) / 2.0

    index = comb2(table.counts).sum()
    sum_a = comb2(table.row_marginals).sum()
    sum_b = comb2(table.col_marginals).sum()
    total = comb2(table.n)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


def accuracy(truth: Partition, pred: Partition) -> float:
    """Fraction matched under the best injective cluster-to-class mapping (optimal assignment)."""
    table = ContingencyTable.from_partitions(truth, pred)
    side = max(truth.k, pred.k)
    padded = np.zeros((side, side), dtype=np.int64)
    padded[: truth.k, : pred.k] = table.counts
    rows, cols = linear_sum_assignment(padded, maximize=True)
    return float(padded[rows, cols].sum() / table.n)


def f_measure(truth: Partition, pred: Partition, variant: str = "class") -> float:
    """Clustering F-measure.

    variant="class" (default): each true class takes the best F1 over predicted
    clusters, weighted by class size. variant="pairwise": F1 over co-clustered
    point pairs.
    """
    table = ContingencyTable.from_partitions(truth, pred)
    if variant == "class":
        counts = table.counts.astype(np.float64)
        denom = table.row_marginals[:, None] + table.col_marginals[None, :]
        f1 = np.where(denom > 0, 2.0 * counts / denom, 0.0)
        best = f1.max(axis=1)
        weights = table.row_marginals / table.n
        return float(np.sum(weights * best))
    if variant == "pairwise":
        def comb2(x):
            x = np.asarray(x, dtype=np.float64)
            return x * (x - 1.0) / 2.0

        tp = comb2(table.counts).sum()
        pred_pairs = comb2(table.col_marginals).sum()
        truth_pairs = comb2(table.row_marginals).sum()
        if pred_pairs == 0 or truth_pairs == 0:
            return 1.0 if pred_pairs == truth_pairs else 0.0
        precision = tp / pred_pairs
        recall = tp / truth_pairs
        if precision + recall == 0:
            return 0.0
        return float(2.0 * precision * recall / (precision + recall))
    raise ValidationError(f"unknown f_measure variant {variant!r}")


def dcv(truth: Partition, pred: Partition) -> float:
    """Absolute difference of the coefficients of variation of cluster-size vectors.

    CV uses the population standard deviation; a single-cluster partition has CV 0.
    """
    if truth.n != pred.n:
        raise ValidationError(f"partition lengths differ: {truth.n} vs {pred.n}")

    def cv(sizes: np.ndarray) -> float:
        if sizes.size <= 1:
            return 0.0
        return float(sizes.std() / sizes.mean())

    return abs(cv(pred.sizes().astype(np.float64)) - cv(truth.sizes().astype(np.float64)))


def all_metrics(truth: Partition, pred: Partition) -> dict[str, float]:
    return {
        "f_measure": f_measure(truth, pred),
        "accuracy": accuracy(truth, pred),
        "nmi": nmi(truth, pred),
        "ari": ari(truth, pred),
        "dcv": dcv(truth, pred),
    }
