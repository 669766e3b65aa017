from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from src.config import RunConfig
from src.core.dataset import Example, make_split
from src.core.game import clip_predictions
from src.core.model import Model
from src.services.metrics import mean_std
from src.services.pipeline import run_hedgeclipper

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SeedResult:
    """One seeded split's metrics (None where the unlabeled labels cannot define them)."""

    seed: int
    auc: float | None
    error: float | None
    game_value: float
    baserf_auc: float | None
    alpha: float
    num_rows: int


@dataclass(frozen=True)
class EvalReport:
    """Per-seed results in seed order, plus mean and sample standard deviation."""

    results: tuple[SeedResult, ...]

    def summary(self, field: str) -> tuple[float, float]:
        return mean_std(getattr(r, field) for r in self.results)


def run_seed(examples: Sequence[Example], m: int, seed: int, config: RunConfig) -> SeedResult:
    """Split with `seed`, reseed every stream of `config` with it, and run once."""
    split = make_split(examples, m, seed)
    _, report = run_hedgeclipper(split.labeled, split.unlabeled, config.with_seed(seed))
    return SeedResult(
        seed=seed,
        auc=report.auc,
        error=report.error,
        game_value=report.game_value,
        baserf_auc=report.baserf_auc,
        alpha=report.alpha,
        num_rows=report.num_rows,
    )


def evaluate(
    examples: Sequence[Example],
    m: int,
    repeats: int,
    config: RunConfig,
    base_seed: int = 0,
    n_jobs: int = 1,
) -> EvalReport:
    """
    Run `repeats` independent splits with seeds base_seed, base_seed+1, ...

    Seeds may run in parallel; results come back in seed order either way.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    seeds = [base_seed + i for i in range(repeats)]
    results = Parallel(n_jobs=n_jobs)(
        delayed(run_seed)(examples, m, seed, config) for seed in seeds
    )
    report = EvalReport(results=tuple(results))
    hc_mean, hc_std = report.summary("auc")
    rf_mean, rf_std = report.summary("baserf_auc")
    logger.info(
        "%d seeds, m=%d: AUC %.4f ± %.4f (base RF %.4f ± %.4f)",
        repeats, m, hc_mean, hc_std, rf_mean, rf_std,
    )
    return report


# =======================
# Reports and exports
# =======================

def _fmt(value: float | None) -> str:
    return "nan" if value is None else f"{value:.6f}"


def format_eval_report(report: EvalReport) -> str:
    """Tab-separated per-seed lines followed by mean and std rows."""
    fields = ("auc", "error", "game_value", "alpha")
    lines = ["\t".join(("seed",) + fields)]
    for r in report.results:
        lines.append("\t".join([str(r.seed)] + [_fmt(getattr(r, f)) for f in fields]))
    stats = [report.summary(f) for f in fields]
    lines.append("\t".join(["mean"] + [_fmt(mean) for mean, _ in stats]))
    lines.append("\t".join(["std"] + [_fmt(std) for _, std in stats]))
    return "\n".join(lines) + "\n"


def format_bench_tsv(report: EvalReport) -> str:
    """`seed, hc_auc, baserf_auc` per seed, both methods scored on the same split."""
    lines = ["seed\thc_auc\tbaserf_auc"]
    for r in report.results:
        lines.append(f"{r.seed}\t{_fmt(r.auc)}\t{_fmt(r.baserf_auc)}")
    hc_mean, _ = report.summary("auc")
    rf_mean, _ = report.summary("baserf_auc")
    lines.append(f"mean\t{_fmt(hc_mean)}\t{_fmt(rf_mean)}")
    return "\n".join(lines) + "\n"


def _label_cell(label: int | None) -> str:
    if label is None:
        return ""
    return "+1" if label > 0 else "-1"


def export_margins(model: Model, unlabeled: Sequence[Example], path: str | Path) -> np.ndarray:
    """
    Write `id,awake,label` for each example (floats at full precision) and return the
    awake predictions.
    """
    awake = model.awake_examples(unlabeled)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "awake", "label"])
        for j, (ex, value) in enumerate(zip(unlabeled, awake)):
            writer.writerow([j, repr(float(value)), _label_cell(ex.label)])
    logger.info("wrote margins for %d examples to %s", len(unlabeled), path)
    return awake


def write_scores(model: Model, examples: Sequence[Example], path: str | Path) -> None:
    """Write `id,awake,prediction` where prediction is the clipped g."""
    awake = model.awake_examples(examples)
    g = clip_predictions(awake)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "awake", "prediction"])
        for j, (a, p) in enumerate(zip(awake, g)):
            writer.writerow([j, repr(float(a)), repr(float(p))])
    logger.info("wrote %d predictions to %s", len(examples), path)
