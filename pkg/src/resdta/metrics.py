"""Evaluation metrics: concordance index, MSE, r^2 variants, r_m^2, fold aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NoComparablePairsError(ValueError):
    """All actual values are tied, so no pair constrains the ranking."""


class DegenerateInputError(ValueError):
    """Correlation metrics are undefined (constant actual or all-zero predicted)."""


def _check_lengths(actual, predicted, min_len=1):
    a = np.asarray(actual, dtype=np.float64).ravel()
    p = np.asarray(predicted, dtype=np.float64).ravel()
    if a.size != p.size:
        raise ValueError(f"length mismatch: {a.size} vs {p.size}")
    if a.size < min_len:
        raise ValueError(f"need at least {min_len} values, got {a.size}")
    return a, p


def _count_inversions(values: np.ndarray) -> int:
    # Strict inversions (i < j, v[i] > v[j]) by merge counting; exact integers.
    if values.size < 2:
        return 0
    mid = values.size // 2
    left, right = values[:mid], values[mid:]
    count = _count_inversions(left) + _count_inversions(right)
    left = np.sort(left, kind="stable")
    right = np.sort(right, kind="stable")
    # For each right element, count left elements strictly greater than it.
    pos = np.searchsorted(left, right, side="right")
    count += int(left.size * right.size - pos.sum(dtype=np.int64))
    return count


def _tie_pairs(values: np.ndarray) -> int:
    _, counts = np.unique(values, return_counts=True)
    counts = counts.astype(object)
    return int(np.sum(counts * (counts - 1) // 2))


def concordance_index(actual, predicted) -> float:
    """Fraction of comparable pairs ranked in the same order by the prediction.

    Over all pairs with distinct actual values, a pair scores 1 when the
    predictions are strictly ordered the same way, 0.5 when the predictions
    tie, and 0 otherwise. Counting is exact (integer arithmetic, O(n log n)),
    so the result matches an O(n^2) enumeration bit for bit.
    """
    a, p = _check_lengths(actual, predicted, min_len=2)
    n = a.size
    n0 = n * (n - 1) // 2
    n1 = _tie_pairs(a)  # pairs tied in actual
    z = n0 - n1
    if z == 0:
        raise NoComparablePairsError("all actual values are identical")

    n2 = _tie_pairs(p)  # pairs tied in predicted
    joint = np.stack([a, p], axis=1)
    _, joint_counts = np.unique(joint, axis=0, return_counts=True)
    joint_counts = joint_counts.astype(object)
    n3 = int(np.sum(joint_counts * (joint_counts - 1) // 2))  # tied in both

    # Sort by (actual, predicted); remaining strict inversions of predicted are
    # exactly the discordant pairs (within-actual ties are already ascending).
    order = np.lexsort((p, a))
    discordant = _count_inversions(p[order])

    concordant = n0 - n1 - n2 + n3 - discordant
    tied_pred_only = n2 - n3
    return (concordant + 0.5 * tied_pred_only) / z


def mse(actual, predicted) -> float:
    """Mean squared error between actual and predicted values."""
    a, p = _check_lengths(actual, predicted, min_len=1)
    return float(np.mean((p - a) ** 2))


def r_squared_pair(actual, predicted) -> tuple[float, float]:
    """Squared Pearson correlation and the through-origin coefficient.

    The second value fits y ~ k*p with k = sum(y*p)/sum(p^2) and returns
    1 - SS_res/SS_tot, where SS_tot is centered on the mean of y.
    """
    y, p = _check_lengths(actual, predicted, min_len=3)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateInputError("actual values are constant")
    p_norm = float(np.sum(p * p))
    if p_norm == 0.0:
        raise DegenerateInputError("predicted values are all zero")

    p_centered = p - p.mean()
    denom = float(np.sum(p_centered**2)) * ss_tot
    if denom == 0.0:
        raise DegenerateInputError("predicted values are constant")
    r2 = float(np.sum((y - y.mean()) * p_centered)) ** 2 / denom

    k = float(np.sum(y * p)) / p_norm
    r2_origin = 1.0 - float(np.sum((y - k * p) ** 2)) / ss_tot
    return r2, r2_origin


def rm2(actual, predicted) -> float:
    """External-validation coefficient r^2 * (1 - sqrt(|r^2 - r0^2|))."""
    r2, r2_origin = r_squared_pair(actual, predicted)
    return r2 * (1.0 - np.sqrt(abs(r2 - r2_origin)))


@dataclass(frozen=True)
class MetricsReport:
    """Per-fold (ci, mse, rm2) triples with their mean and population std."""

    per_fold: tuple[tuple[float, float, float], ...]
    mean: dict[str, float]
    std: dict[str, float]

    @property
    def n_folds(self) -> int:
        return len(self.per_fold)

    def to_dict(self) -> dict:
        return {
            "folds": [{"ci": c, "mse": m, "rm2": r} for c, m, r in self.per_fold],
            "mean": dict(self.mean),
            "std": dict(self.std),
        }


def aggregate(per_fold_results) -> MetricsReport:
    """Aggregate per-fold (ci, mse, rm2) triples into a MetricsReport."""
    triples = [tuple(float(v) for v in fold) for fold in per_fold_results]
    if not triples:
        raise ValueError("no fold results to aggregate")
    arr = np.array(triples, dtype=np.float64)
    names = ("ci", "mse", "rm2")
    mean = {k: float(m) for k, m in zip(names, arr.mean(axis=0))}
    std = {k: float(s) for k, s in zip(names, arr.std(axis=0))}
    return MetricsReport(per_fold=tuple(triples), mean=mean, std=std)
