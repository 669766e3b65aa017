from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from src.config import RunConfig
from src.core.dataset import Example, known_labels, labels_of, num_features, to_csr
from src.core.errors import EmptyUnlabeled, EstimationFailed, MissingLabel
from src.core.estimation import (
    CorrelationBounds,
    RowRealization,
    estimate_b,
    row_predictions,
    shrink_to_feasible,
)
from src.core.forest import Forest, majority_vote_scores, train_forest
from src.core.game import GameSolution, solve_game
from src.core.model import Model
from src.core.specialists import (
    SpecialistMatrix,
    assemble,
    build_rows,
    check_tree_partition,
)
from src.services.metrics import auc, classification_error, has_both_classes

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunReport:
    """
    Outcome of one HedgeClipper run on a labeled/unlabeled split.

    `auc`, `error` and `baserf_auc` need the held-back labels of the unlabeled set (and
    both classes for the AUCs); they are None otherwise. `game_value` is the worst-case
    correlation guarantee -gamma*.
    """

    auc: float | None
    error: float | None
    game_value: float
    baserf_auc: float | None
    alpha: float
    num_rows: int
    num_unlabeled: int
    seed: int
    config: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class _Fit:
    S: SpecialistMatrix
    bounds: CorrelationBounds
    solution: GameSolution


# =======================
# Helpers
# =======================

def _split_labeled(
    labeled: Sequence[Example], train_frac: float, seed: int
) -> tuple[list[Example], list[Example]]:
    """
    Split the labeled set into a part that grows the forest and a part that estimates b.

    With `train_frac = 1` (or too few examples for both parts) the whole labeled set
    plays both roles.
    """
    m = len(labeled)
    num_train = int(round(train_frac * m))
    if num_train <= 0 or num_train >= m:
        return list(labeled), list(labeled)
    perm = np.random.default_rng([seed, 1]).permutation(m)
    train = sorted(perm[:num_train])
    estimate = sorted(perm[num_train:])
    return [labeled[i] for i in train], [labeled[i] for i in estimate]


def _take(realizations: Sequence[RowRealization], idx: np.ndarray) -> list[RowRealization]:
    return [(pred[idx], awake[idx]) for pred, awake in realizations]


def _fit_weights(
    S_all: SpecialistMatrix,
    realizations: Sequence[RowRealization],
    labels: np.ndarray,
    alpha: float,
    config: RunConfig,
) -> _Fit:
    bounds = estimate_b(realizations, labels, config.estimation)
    S = S_all.subset(bounds.kept)
    feasible = shrink_to_feasible(S, bounds, alpha, config.estimation.epsilon_b)
    if feasible is not bounds:
        bounds = feasible
        S = S_all.subset(bounds.kept)
    solution = solve_game(S, bounds.b, alpha, config.solver, config.sgd)
    return _Fit(S=S, bounds=bounds, solution=solution)


def _as_model(forest: Forest, fit: _Fit, alpha: float, config: RunConfig) -> Model:
    return Model(
        forest=forest,
        keys=fit.S.keys,
        row_scale=fit.S.row_scale.copy(),
        b=fit.bounds.b.copy(),
        sigma=fit.solution.sigma_star.copy(),
        alpha=alpha,
        config=config,
    )


# =======================
# Alpha selection
# =======================

def select_alpha(
    forest: Forest,
    S_all: SpecialistMatrix,
    estimation_set: Sequence[Example],
    realizations: Sequence[RowRealization],
    config: RunConfig,
) -> float:
    """
    Choose alpha from `config.alpha_grid` by AUC on an out-of-bag holdout.

    One bootstrap resample of the estimation set re-estimates b; the examples it never
    drew score each alpha's model. Ties keep grid order. Falls back to 1.0 when the
    holdout lacks a class or no row survives the resample.
    """
    k = len(estimation_set)
    labels = labels_of(estimation_set)
    draw = np.random.default_rng([config.seed, 2]).integers(0, k, size=k)
    in_bag = np.zeros(k, dtype=bool)
    in_bag[draw] = True
    holdout = np.flatnonzero(~in_bag)
    if not has_both_classes(labels[holdout]):
        logger.warning("alpha holdout (%d examples) lacks a class; using alpha=1.0", holdout.size)
        return 1.0

    X_holdout = to_csr([estimation_set[i] for i in holdout], forest.n_features)
    boot = _take(realizations, draw)
    best_alpha, best_auc = 1.0, -np.inf
    for alpha in config.alpha_grid:
        try:
            fit = _fit_weights(S_all, boot, labels[draw], alpha, config)
        except EstimationFailed:
            logger.warning("no row survived the alpha resample; using alpha=1.0")
            return 1.0
        score = auc(_as_model(forest, fit, alpha, config).awake(X_holdout), labels[holdout])
        logger.info("alpha=%g: holdout AUC %.4f", alpha, score)
        if score > best_auc:
            best_alpha, best_auc = alpha, score
    logger.info("selected alpha=%g", best_alpha)
    return best_alpha


# =======================
# Pipeline
# =======================

def run_hedgeclipper(
    labeled: Sequence[Example],
    unlabeled: Sequence[Example],
    config: RunConfig,
    dump_s: str | Path | None = None,
) -> tuple[Model, RunReport]:
    """
    Grow the forest, build specialist rows on the unlabeled set, estimate b, minimize the
    slack and clip the predictions.

    Labels of `unlabeled` are never used for fitting; when every unlabeled example carries
    one, they are used to fill in the report's metrics.

    Raises
    ------
    MissingLabel
        If a labeled example has no label.
    EstimationFailed
        If every row is asleep on the labeled estimation set, or no row keeps a usable
        bound once b is made satisfiable on the unlabeled set.
    """
    if not labeled:
        raise MissingLabel("the labeled set is empty")
    if not unlabeled:
        raise EmptyUnlabeled("the unlabeled set is empty")
    labels_of(labeled)

    d = max(num_features(labeled), num_features(unlabeled))
    train, estimation_set = _split_labeled(labeled, config.train_frac, config.seed)
    forest = train_forest(to_csr(train, d), labels_of(train), config.forest)

    X_u = to_csr(unlabeled, d)
    S_all = assemble(build_rows(forest, X_u), X_u.shape[0])
    check_tree_partition(S_all)
    logger.info(
        "built %d rows over %d unlabeled examples (%d entries)",
        S_all.num_rows, S_all.n, S_all.nnz,
    )
    if dump_s is not None:
        S_all.dump_coordinates(dump_s)

    realizations = row_predictions(forest, S_all.keys, to_csr(estimation_set, d))
    if config.alpha == "auto":
        alpha = select_alpha(forest, S_all, estimation_set, realizations, config)
    else:
        alpha = float(config.alpha)
    fit = _fit_weights(S_all, realizations, labels_of(estimation_set), alpha, config)
    model = _as_model(forest, fit, alpha, config)

    truth = known_labels(unlabeled)
    hc_auc = baserf_auc = error = None
    if truth is not None:
        error = classification_error(truth, fit.solution.g)
        if has_both_classes(truth):
            hc_auc = auc(fit.solution.awake, truth)
            baserf_auc = auc(majority_vote_scores(forest, X_u), truth)

    report = RunReport(
        auc=hc_auc,
        error=error,
        game_value=fit.solution.value,
        baserf_auc=baserf_auc,
        alpha=alpha,
        num_rows=fit.S.num_rows,
        num_unlabeled=len(unlabeled),
        seed=config.seed,
        config=config.model_dump(mode="json"),
    )
    logger.info(
        "run finished: value=%.4f auc=%s baserf_auc=%s",
        report.game_value, hc_auc, baserf_auc,
    )
    return model, report
