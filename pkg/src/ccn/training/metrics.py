"""Ranking metrics."""

import logging
from typing import Sequence

import numpy as np

from ..errors import DatasetError, SingleClassError

logger = logging.getLogger(__name__)


def _as_arrays(scores: Sequence[float], labels: Sequence[int]):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise DatasetError(f"{s.size} scores but {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise DatasetError("labels must be 0 or 1")
    y = y.astype(bool)
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError(
            f"AUC undefined for a single class ({n_pos} positive, {n_neg} negative)"
        )
    return s, y, n_pos, n_neg


def tied_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their ranks."""
    _, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    # mean of ranks (upper - count + 1) .. upper
    return ((2 * upper - counts + 1) / 2.0)[inverse.ravel()]


def compute_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve through the rank-sum statistic.

    Equals the fraction of (positive, negative) pairs ranked correctly,
    ties counting one half. O(n log n).

    Raises:
        SingleClassError: If labels hold one class only
        DatasetError: On length mismatch or non-binary labels
    """
    s, y, n_pos, n_neg = _as_arrays(scores, labels)
    rank_sum = float(tied_ranks(s)[y].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def brute_force_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """O(n^2) pairwise AUC: wins plus half the ties over all pairs."""
    s, y, n_pos, n_neg = _as_arrays(scores, labels)
    pos = s[y][:, None]
    neg = s[~y][None, :]
    # doubled counts keep the sum integral
    doubled = 2 * int((pos > neg).sum()) + int((pos == neg).sum())
    return (doubled / 2.0) / (n_pos * n_neg)
