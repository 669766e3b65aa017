from __future__ import annotations

import csv
import json

import pytest
from pydantic import ValidationError

from src.cli import build_parser, cli_main
from src.config import Settings, load_settings
from src.core.dataset import serialize_svmlight
from src.services.persistence import load_model
from tests.conftest import two_blobs

FAST = ["--trees", "4", "--min-leaf", "4", "--epochs", "5", "--boot-resamples", "20"]


@pytest.fixture
def data_files(tmp_path):
    labeled = tmp_path / "labeled.svm"
    unlabeled = tmp_path / "unlabeled.svm"
    labeled.write_bytes(serialize_svmlight(two_blobs(60, seed=61)))
    unlabeled.write_bytes(serialize_svmlight(two_blobs(80, seed=62)))
    return labeled, unlabeled


@pytest.fixture
def trained_model(tmp_path, data_files):
    labeled, unlabeled = data_files
    out = tmp_path / "model.hgcl"
    code = cli_main(
        ["train", "--labeled", str(labeled), "--unlabeled", str(unlabeled), "--out", str(out)]
        + FAST
    )
    assert code == 0
    return out


def test_train_writes_model_and_report(tmp_path, data_files):
    labeled, unlabeled = data_files
    out = tmp_path / "m.hgcl"
    report = tmp_path / "report.json"
    code = cli_main(
        [
            "train", "--labeled", str(labeled), "--unlabeled", str(unlabeled),
            "--out", str(out), "--report", str(report), "--seed", "4",
        ]
        + FAST
    )
    assert code == 0
    assert load_model(out).config.seed == 4
    payload = json.loads(report.read_text())
    assert payload["seed"] == 4
    assert 0.0 <= payload["auc"] <= 1.0


def test_predict_and_margins(tmp_path, trained_model, data_files):
    _, unlabeled = data_files
    scores = tmp_path / "scores.csv"
    margins = tmp_path / "margins.csv"
    assert cli_main(["predict", "--model", str(trained_model), "--input", str(unlabeled),
                     "--out", str(scores)]) == 0
    assert cli_main(["margins", "--model", str(trained_model), "--input", str(unlabeled),
                     "--out", str(margins)]) == 0
    with scores.open(newline="") as fh:
        score_rows = list(csv.reader(fh))[1:]
    with margins.open(newline="") as fh:
        margin_rows = list(csv.reader(fh))[1:]
    assert len(score_rows) == len(margin_rows) == 80
    assert [r[1] for r in score_rows] == [r[1] for r in margin_rows]


def test_bench_writes_tsv(tmp_path, data_files):
    labeled, _ = data_files
    out = tmp_path / "bench.tsv"
    code = cli_main(
        ["bench", "--data", str(labeled), "--labels", "20", "--repeats", "2", "--out", str(out)]
        + FAST
    )
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "seed\thc_auc\tbaserf_auc"
    assert [line.split("\t")[0] for line in lines[1:]] == ["0", "1", "mean"]


def test_eval_prints_to_stdout(capsys, data_files):
    labeled, _ = data_files
    code = cli_main(["eval", "--data", str(labeled), "--labels", "20", "--repeats", "1"] + FAST)
    assert code == 0
    assert capsys.readouterr().out.startswith("seed\tauc\terror\tgame_value\talpha\n")


def test_unknown_flag_is_a_usage_error(data_files):
    labeled, unlabeled = data_files
    assert cli_main(["train", "--labeled", str(labeled), "--bogus"]) == 2


def test_invalid_setting_is_a_usage_error(tmp_path, data_files):
    labeled, unlabeled = data_files
    args = ["train", "--labeled", str(labeled), "--unlabeled", str(unlabeled),
            "--out", str(tmp_path / "m"), "--alpha=0"]
    assert cli_main(args) == 2
    assert cli_main(args[:-1] + ["--alpha", "fast"]) == 2


def test_missing_file_fails(tmp_path, data_files):
    _, unlabeled = data_files
    args = ["train", "--labeled", str(tmp_path / "nope.svm"), "--unlabeled", str(unlabeled),
            "--out", str(tmp_path / "m")]
    assert cli_main(args) == 1


def test_corrupt_model_fails(tmp_path, data_files):
    _, unlabeled = data_files
    bad = tmp_path / "bad.hgcl"
    bad.write_bytes(b"garbage")
    args = ["predict", "--model", str(bad), "--input", str(unlabeled), "--out", str(tmp_path / "o")]
    assert cli_main(args) == 1


def test_budget_larger_than_pool_fails(data_files):
    labeled, _ = data_files
    assert cli_main(["eval", "--data", str(labeled), "--labels", "500"] + FAST) == 1


def test_label_map_option():
    args = build_parser(Settings()).parse_args(
        ["predict", "--model", "m", "--input", "i", "--out", "o", "--label-map", "1=+1,2=-1"]
    )
    assert args.label_map == {"1": 1, "2": -1}


def test_settings_come_from_the_environment(monkeypatch):
    monkeypatch.setenv("HEDGECLIPPER_SEED", "17")
    monkeypatch.setenv("HEDGECLIPPER_LOG_LEVEL", "debug")
    settings = load_settings()
    assert settings.seed == 17
    assert settings.log_level == "DEBUG"
    args = build_parser(settings).parse_args(
        ["eval", "--data", "d", "--labels", "5"]
    )
    assert args.seed == 17
    assert args.log_level == "DEBUG"


@pytest.mark.parametrize(
    ("variable", "value"),
    [
        ("HEDGECLIPPER_SEED", "abc"),
        ("HEDGECLIPPER_N_JOBS", "1.5"),
        ("HEDGECLIPPER_LOG_LEVEL", "loud"),
    ],
)
def test_invalid_environment_setting_is_a_usage_error(
    monkeypatch, capsys, data_files, variable, value
):
    labeled, _ = data_files
    monkeypatch.setenv(variable, value)
    with pytest.raises(ValidationError):
        load_settings()
    assert cli_main(["eval", "--data", str(labeled), "--labels", "20", "--repeats", "1"]) == 2
    assert "invalid environment setting" in capsys.readouterr().err


def test_no_polish_flag_reaches_the_sgd_config(tmp_path, data_files):
    labeled, unlabeled = data_files
    out = tmp_path / "m.hgcl"
    args = ["train", "--labeled", str(labeled), "--unlabeled", str(unlabeled), "--out", str(out)]
    assert cli_main(args + FAST + ["--no-polish"]) == 0
    assert load_model(out).config.sgd.polish is False
