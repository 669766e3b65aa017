from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from pydantic import ValidationError

from src.config import (
    EstimationConfig,
    ForestConfig,
    RunConfig,
    SgdConfig,
    Settings,
    load_settings,
)
from src.core.dataset import load_examples, parse_label_map
from src.core.errors import HedgeClipperError
from src.services.evaluation import (
    evaluate,
    export_margins,
    format_bench_tsv,
    format_eval_report,
    write_scores,
)
from src.services.persistence import load_model, save_model
from src.services.pipeline import run_hedgeclipper

logger = logging.getLogger(__name__)

_LOG_FORMAT = "%(asctime)s | %(levelname)s | %(message)s"


# =======================
# Argument types
# =======================

def _alpha(text: str) -> float | str:
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        value = 0
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _label_map(text: str) -> dict[str, int]:
    try:
        return parse_label_map(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# =======================
# Parser
# =======================

def _add_data_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("svmlight", "csv"), default="svmlight")
    p.add_argument("--label-map", type=_label_map, default=None, help='e.g. "1=+1,2=-1"')


def _add_run_options(p: argparse.ArgumentParser, settings: Settings) -> None:
    p.add_argument("--trees", type=_positive_int, default=100)
    p.add_argument("--min-leaf", type=int, default=None)
    p.add_argument("--seed", type=int, default=settings.seed)
    p.add_argument("--alpha", type=_alpha, default=1.0, help="positive number or 'auto'")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--step0", type=float, default=None)
    p.add_argument("--no-polish", dest="polish", action="store_false",
                   help="skip the full-batch L-BFGS-B polish after SGD")
    p.add_argument("--solver", choices=("sgd", "exact"), default="sgd")
    p.add_argument("--b-method", choices=("bootstrap", "hoeffding", "exact"), default="bootstrap")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--boot-resamples", type=int, default=100)
    p.add_argument("--boot-quantile", type=float, default=0.10)
    p.add_argument("--train-frac", type=float, default=0.5)
    p.add_argument("--n-jobs", type=int, default=settings.n_jobs)


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hedgeclipper",
        description="Minimax aggregation of random-forest trees and leaves using unlabeled data.",
    )
    parser.add_argument(
        "--log-level",
        type=str.upper,
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
        default=settings.log_level,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="fit a model and save it")
    train.add_argument("--labeled", required=True, type=Path)
    train.add_argument("--unlabeled", required=True, type=Path)
    train.add_argument("--out", required=True, type=Path)
    train.add_argument("--report", type=Path, default=None, help="write the run report as JSON")
    train.add_argument("--dump-s", type=Path, default=None, help="write S as `row col value`")
    _add_data_options(train)
    _add_run_options(train, settings)

    predict = sub.add_parser("predict", help="score a file with a saved model")
    predict.add_argument("--model", required=True, type=Path)
    predict.add_argument("--input", required=True, type=Path)
    predict.add_argument("--out", required=True, type=Path)
    _add_data_options(predict)

    margins = sub.add_parser("margins", help="export awake predictions as id,awake,label")
    margins.add_argument("--model", required=True, type=Path)
    margins.add_argument("--input", required=True, type=Path)
    margins.add_argument("--out", required=True, type=Path)
    _add_data_options(margins)

    for name, text in (
        ("eval", "AUC and error over seeded labeled/unlabeled splits"),
        ("bench", "HedgeClipper vs. the majority-vote forest on the same splits"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--data", required=True, type=Path)
        p.add_argument("--labels", required=True, type=_positive_int, help="labeled budget m")
        p.add_argument("--repeats", type=_positive_int, default=10)
        p.add_argument("--out", type=Path, default=None, help="write the table here, not stdout")
        _add_data_options(p)
        _add_run_options(p, settings)
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        forest=ForestConfig(
            num_trees=args.trees,
            min_leaf=args.min_leaf,
            seed=args.seed,
            n_jobs=args.n_jobs,
        ),
        estimation=EstimationConfig(
            method=args.b_method,
            delta=args.delta,
            resamples=args.boot_resamples,
            quantile=args.boot_quantile,
            seed=args.seed,
        ),
        sgd=SgdConfig(
            batch_size=args.batch,
            epochs=args.epochs,
            step0=args.step0,
            polish=args.polish,
            seed=args.seed,
        ),
        alpha=args.alpha,
        solver=args.solver,
        train_frac=args.train_frac,
        seed=args.seed,
    )


# =======================
# Commands
# =======================

def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")
        logger.info("wrote %s", out)


def _cmd_train(args: argparse.Namespace) -> None:
    config = _run_config(args)
    labeled = load_examples(args.labeled, args.format, args.label_map)
    unlabeled = load_examples(args.unlabeled, args.format, args.label_map)
    model, report = run_hedgeclipper(labeled, unlabeled, config, dump_s=args.dump_s)
    save_model(model, args.out)
    if args.report is not None:
        args.report.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
        logger.info("wrote report to %s", args.report)


def _cmd_predict(args: argparse.Namespace) -> None:
    model = load_model(args.model)
    write_scores(model, load_examples(args.input, args.format, args.label_map), args.out)


def _cmd_margins(args: argparse.Namespace) -> None:
    model = load_model(args.model)
    export_margins(model, load_examples(args.input, args.format, args.label_map), args.out)


def _cmd_eval(args: argparse.Namespace) -> None:
    config = _run_config(args)
    examples = load_examples(args.data, args.format, args.label_map)
    report = evaluate(examples, args.labels, args.repeats, config, args.seed, args.n_jobs)
    formatter = format_bench_tsv if args.command == "bench" else format_eval_report
    _emit(formatter(report), args.out)


_COMMANDS = {
    "train": _cmd_train,
    "predict": _cmd_predict,
    "margins": _cmd_margins,
    "eval": _cmd_eval,
    "bench": _cmd_eval,
}


def cli_main(argv: Sequence[str] | None = None) -> int:
    """
    Run one subcommand.

    Returns 0 on success, 2 on a usage error (bad flag or invalid setting), 1 when the
    run itself fails.
    """
    try:
        settings = load_settings()
    except ValidationError as exc:
        print(f"hedgeclipper: invalid environment setting: {exc}", file=sys.stderr)
        return 2
    parser = build_parser(settings)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(level=args.log_level, format=_LOG_FORMAT)
    try:
        _COMMANDS[args.command](args)
    except ValidationError as exc:
        parser.print_usage(sys.stderr)
        print(f"hedgeclipper: invalid setting: {exc}", file=sys.stderr)
        return 2
    except (HedgeClipperError, OSError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1
    return 0
