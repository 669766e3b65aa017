from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from src.core.errors import DimensionMismatch, UndefinedMetric
from src.services.metrics import auc, classification_error, has_both_classes, mean_std


def _pairwise_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = scores[labels > 0][:, None]
    neg = scores[labels < 0][None, :]
    wins = np.count_nonzero(pos > neg) + 0.5 * np.count_nonzero(pos == neg)
    return wins / (pos.size * neg.size)


def test_auc_perfect_ranking():
    assert auc(np.array([0.9, 0.8, 0.1, -0.3]), np.array([1, 1, -1, -1])) == 1.0


def test_auc_reversed_ranking():
    assert auc(np.array([-1.0, 2.0]), np.array([1, -1])) == 0.0


def test_auc_all_ties_is_half():
    assert auc(np.zeros(6), np.array([1, -1, 1, -1, 1, 1])) == 0.5


def test_auc_counts_ties_as_halves():
    scores = np.array([0.5, 0.5, 0.2])
    labels = np.array([1, -1, -1])
    assert auc(scores, labels) == pytest.approx(0.75)


@given(
    st.lists(
        st.tuples(st.integers(-3, 3), st.sampled_from([-1, 1])), min_size=2, max_size=200
    )
)
def test_auc_matches_pair_count(pairs):
    scores = np.array([float(s) for s, _ in pairs])
    labels = np.array([y for _, y in pairs])
    assume(has_both_classes(labels))
    assert auc(scores, labels) == _pairwise_auc(scores, labels)


@given(st.integers(0, 2**32 - 1), st.integers(2, 200))
def test_auc_matches_pair_count_on_large_sets(seed, size):
    rng = np.random.default_rng(seed)
    # Rounding keeps plenty of ties in play.
    scores = np.round(rng.normal(size=size), 1)
    labels = np.where(rng.random(size) < 0.5, 1, -1)
    assume(has_both_classes(labels))
    assert auc(scores, labels) == _pairwise_auc(scores, labels)


def test_auc_needs_both_classes():
    with pytest.raises(UndefinedMetric):
        auc(np.array([0.1, 0.2]), np.array([1, 1]))
    with pytest.raises(DimensionMismatch):
        auc(np.array([0.1, 0.2]), np.array([1]))


def test_classification_error():
    labels = np.array([1.0, -1.0, 1.0, -1.0])
    assert classification_error(labels, labels) == 0.0
    assert classification_error(labels, -labels) == 1.0
    assert classification_error(labels, np.zeros(4)) == 0.5
    # Half-confident predictions are wrong half of the time on each example.
    assert classification_error(labels, 0.5 * labels) == pytest.approx(0.25)


def test_classification_error_rejects_misaligned_input():
    with pytest.raises(DimensionMismatch):
        classification_error(np.ones(3), np.ones(2))


def test_has_both_classes():
    assert has_both_classes(np.array([1, -1]))
    assert not has_both_classes(np.array([1, 1]))
    assert not has_both_classes(None)


def test_mean_std():
    mean, std = mean_std([1.0, 2.0, 3.0])
    assert mean == 2.0
    assert std == pytest.approx(1.0)
    assert mean_std([4.0, None]) == (4.0, 0.0)
    assert all(math.isnan(v) for v in mean_std([None]))
