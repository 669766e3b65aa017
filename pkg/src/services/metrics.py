from __future__ import annotations

from typing import Iterable

import numpy as np
from scipy.stats import rankdata

from src.core.errors import DimensionMismatch, UndefinedMetric


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """
    Area under the ROC curve: P(score+ > score-) + 1/2 P(tie), over all pos/neg pairs.

    Computed from average ranks (Mann-Whitney U), which counts ties as halves and so
    equals the pairwise count exactly.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DimensionMismatch("scores and labels must have the same shape")
    pos = labels > 0
    num_pos = int(np.count_nonzero(pos))
    num_neg = labels.size - num_pos
    if num_pos == 0 or num_neg == 0:
        raise UndefinedMetric("AUC needs both classes")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - num_pos * (num_pos + 1) / 2.0
    return float(u / (num_pos * num_neg))


def classification_error(labels: np.ndarray, g: np.ndarray) -> float:
    """Expected 0/1 error of randomized predictions g: (1 - (1/n) z^T g) / 2."""
    labels = np.asarray(labels, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if labels.shape != g.shape or labels.size == 0:
        raise DimensionMismatch("labels and predictions must be nonempty and aligned")
    return float(0.5 * (1.0 - (labels @ g) / labels.size))


def has_both_classes(labels: np.ndarray | None) -> bool:
    return labels is not None and bool(np.any(labels > 0)) and bool(np.any(labels < 0))


def mean_std(values: Iterable[float | None]) -> tuple[float, float]:
    """Mean and sample standard deviation, ignoring missing values (nan if none)."""
    arr = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std
