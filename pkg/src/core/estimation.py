from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import sparse

from src.config import EstimationConfig
from .errors import DropRow, EstimationFailed
from .forest import Forest
from .game import feasibility_scale
from .specialists import RowKey, SpecialistMatrix

logger = logging.getLogger(__name__)

# (predictions on every labeled example, awake mask on the labeled examples)
RowRealization = tuple[np.ndarray, np.ndarray]
# A shrunk b stays this far (relatively) inside the feasible region.
_SHRINK_MARGIN = 1e-6
_FEASIBLE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class CorrelationBounds:
    """
    Lower bounds b on each row's awake correlation with the true labels.

    `kept` indexes the rows that survived (rows awake on no labeled example are dropped);
    `b`, `awake_counts` and `empirical` are aligned with `kept`.
    """

    b: np.ndarray
    awake_counts: np.ndarray
    empirical: np.ndarray
    kept: np.ndarray
    method: str

    def __post_init__(self) -> None:
        k = self.kept.size
        if not (self.b.shape == self.awake_counts.shape == self.empirical.shape == (k,)):
            raise ValueError("bounds arrays must be aligned with `kept`")
        if np.any(self.awake_counts < 1):
            raise ValueError("every retained row needs at least one awake labeled example")


def row_predictions(
    forest: Forest, keys: Sequence[RowKey], X: sparse.spmatrix | np.ndarray
) -> list[RowRealization]:
    """Realize each row's prediction and participation on a labeled matrix X."""
    leaf_ids = forest.apply(X)
    everywhere = np.ones(X.shape[0], dtype=bool)
    out: list[RowRealization] = []
    for key in keys:
        tree = forest.trees[key.tree]
        ids = leaf_ids[key.tree]
        if key.kind == "tree":
            out.append((tree.value[ids], everywhere))
        else:
            awake = ids == key.leaf
            out.append((np.full(ids.size, tree.leaf_vote(key.leaf)), awake))
    return out


def empirical_awake_correlation(
    predictions: np.ndarray, awake: np.ndarray, labels: np.ndarray
) -> tuple[float, int]:
    """
    Mean of h(x) * y over the labeled examples where the row is awake.

    Raises
    ------
    DropRow
        If the row is awake on no labeled example.
    """
    count = int(np.count_nonzero(awake))
    if count == 0:
        raise DropRow("row is asleep on every labeled example")
    products = predictions[awake] * labels[awake]
    return float(products.sum() / count), count


def _bootstrap_bound(products: np.ndarray, config: EstimationConfig, row: int) -> float:
    rng = np.random.default_rng([config.seed, row])
    draws = rng.integers(0, products.size, size=(config.resamples, products.size))
    means = products[draws].mean(axis=1)
    return float(np.quantile(means, config.quantile))


def estimate_b(
    realizations: Sequence[RowRealization],
    labels: np.ndarray,
    config: EstimationConfig,
) -> CorrelationBounds:
    """
    Estimate b for every row from its behaviour on labeled data.

    Bootstrap: the `quantile` of `resamples` resampled awake correlations (resampling
    within the awake set). Hoeffding: empirical correlation minus
    sqrt(ln(2R/delta) / (2 m_i)) with R the number of rows. Exact: the empirical
    correlation. Every bound is clamped to [epsilon_b, 1]. Rows awake on no labeled
    example are dropped, and so are rows predicting 0 on every awake labeled example
    (a tied leaf): no labeling can give them a positive correlation.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size == 0:
        raise EstimationFailed("no labeled examples to estimate correlations from")
    num_rows = len(realizations)

    kept: list[int] = []
    silent = 0
    bounds: list[float] = []
    counts: list[int] = []
    empirical: list[float] = []
    for i, (pred, awake) in enumerate(realizations):
        try:
            corr, count = empirical_awake_correlation(pred, awake, labels)
        except DropRow:
            continue
        if not np.any(pred[awake]):
            silent += 1
            continue
        if config.method == "bootstrap":
            raw = _bootstrap_bound(pred[awake] * labels[awake], config, i)
        elif config.method == "hoeffding":
            raw = corr - math.sqrt(math.log(2.0 * num_rows / config.delta) / (2.0 * count))
        else:
            raw = corr
        kept.append(i)
        bounds.append(min(1.0, max(config.epsilon_b, raw)))
        counts.append(count)
        empirical.append(corr)

    if not kept:
        raise EstimationFailed("every row was asleep or silent on the labeled data")
    asleep = num_rows - len(kept) - silent
    if asleep:
        logger.info("dropped %d of %d rows with no awake labeled example", asleep, num_rows)
    if silent:
        logger.info("dropped %d of %d rows that never vote on the labeled data", silent, num_rows)
    return CorrelationBounds(
        b=np.asarray(bounds),
        awake_counts=np.asarray(counts, dtype=np.int64),
        empirical=np.asarray(empirical),
        kept=np.asarray(kept, dtype=np.int64),
        method=config.method,
    )


def _restrict(bounds: CorrelationBounds, mask: np.ndarray) -> CorrelationBounds:
    return CorrelationBounds(
        b=bounds.b[mask],
        awake_counts=bounds.awake_counts[mask],
        empirical=bounds.empirical[mask],
        kept=bounds.kept[mask],
        method=bounds.method,
    )


def shrink_to_feasible(
    S: SpecialistMatrix,
    bounds: CorrelationBounds,
    alpha: float = 1.0,
    epsilon_b: float = 1e-3,
) -> CorrelationBounds:
    """
    Make b satisfiable by some labeling z in [-alpha, alpha]^n with (1/n) S z >= b.

    `S` must already be restricted to `bounds.kept`. Rows of S that are zero on every
    unlabeled example are dropped first. When the rest is still infeasible, b is scaled
    by the largest feasible t (less a relative `_SHRINK_MARGIN`), and rows whose scaled
    bound falls below `epsilon_b` are dropped rather than weakened to nothing.

    Raises
    ------
    EstimationFailed
        When no row survives.
    """
    voting = np.asarray(abs(S.matrix).sum(axis=1)).ravel() > 0.0
    if not voting.all():
        logger.info(
            "dropped %d rows that vote 0 on every unlabeled example", int((~voting).sum())
        )
        bounds = _restrict(bounds, voting)
        S = S.subset(np.flatnonzero(voting))
    if bounds.b.size == 0:
        raise EstimationFailed("no row votes on the unlabeled data")

    t = feasibility_scale(S, bounds.b, alpha)
    if t >= 1.0 - _FEASIBLE_TOLERANCE:
        return bounds
    scale = t * (1.0 - _SHRINK_MARGIN)
    shrunk = bounds.b * scale
    strong = shrunk >= epsilon_b
    logger.warning(
        "correlation bounds infeasible on the unlabeled data (alpha=%g): scaling b by %.6g, "
        "dropping %d rows that fall below epsilon_b=%g",
        alpha, scale, int((~strong).sum()), epsilon_b,
    )
    if not strong.any():
        raise EstimationFailed(
            f"no labeling in [-{alpha:g}, {alpha:g}]^n comes close to the bounds "
            f"(feasible scale {t:.3g})"
        )
    return _restrict(replace(bounds, b=shrunk), strong)
