import csv
import filecmp
import json
import os

import pytest

from rugwatch.cli import main

SCENARIO = {
    "counts": {"simple_rug_pull": 6, "sell_rug_pull": 2, "healthy": 8, "inactive_benign": 2},
    "horizon_block": 400_000,
    "creation_low": 100_000,
    "creation_high": 150_000,
}
SEED = "5"
HORIZON = "400000"
FAST_TRAIN = ["--trials", "2", "--rounds", "15", "--patience", "4"]


def run(*argv) -> int:
    return main(list(argv))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full pass through every stage, shared by the assertions below."""
    root = tmp_path_factory.mktemp("cli")
    spec = root / "scenario.json"
    spec.write_text(json.dumps(SCENARIO))

    assert run("simulate", "--spec", str(spec), "--seed", SEED, "--out", str(root / "corpus")) == 0
    assert run("label", "--corpus", str(root / "corpus"), "--horizon", HORIZON,
               "--seed", SEED, "--out", str(root / "labels")) == 0
    labels_csv = str(root / "labels" / "labels.csv")
    assert run("build-dataset", "--corpus", str(root / "corpus"), "--labels", labels_csv,
               "--method", "activity", "--horizon", HORIZON, "--seed", SEED,
               "--out", str(root / "ds_activity")) == 0
    assert run("train", "--dataset", str(root / "ds_activity"), "--method", "activity",
               *FAST_TRAIN, "--seed", SEED, "--out", str(root / "train_activity")) == 0
    assert run("evaluate", "--model", str(root / "train_activity" / "model.json"),
               "--features", str(root / "ds_activity" / "features.csv"),
               "--out", str(root / "eval_activity")) == 0
    assert run("build-dataset", "--corpus", str(root / "corpus"), "--labels", labels_csv,
               "--method", "early24", "--horizon", HORIZON, "--seed", SEED,
               "--out", str(root / "ds_early")) == 0
    for hour in (1, 24):
        assert run("train", "--dataset", str(root / "ds_early"), "--method", "early24",
                   "--hour", str(hour), *FAST_TRAIN, "--seed", SEED,
                   "--out", str(root / "train_early" / f"hour_{hour:02d}")) == 0
    assert run("report", "--labels", labels_csv, "--activity", str(root / "train_activity"),
               "--early24", str(root / "train_early"), "--out", str(root / "report")) == 0
    assert run("reconstruct", "--corpus", str(root / "corpus"), "--horizon", HORIZON,
               "--out", str(root / "series")) == 0
    return root


def test_simulate_writes_corpus(pipeline):
    corpus = pipeline / "corpus"
    assert sorted(os.listdir(corpus / "events"))
    manifest = json.loads((corpus / "manifest.json").read_text())
    assert manifest["stage"] == "simulate"
    assert manifest["seed"] == int(SEED)
    assert manifest["n_tokens"] == sum(SCENARIO["counts"].values())


def test_labels_match_truth(pipeline):
    with open(pipeline / "corpus" / "truth.csv", newline="") as handle:
        truth = {row["token"]: row["expected_label"] for row in csv.DictReader(handle)}
    with open(pipeline / "labels" / "labels.csv", newline="") as handle:
        labels = {row["token"]: row["label"] for row in csv.DictReader(handle)}
    assert set(labels) == set(truth)
    assert all(labels[token] == truth[token] for token in truth)
    summary = json.loads((pipeline / "labels" / "summary.json").read_text())
    assert summary["n_tokens"] == len(truth)


def test_dataset_manifests(pipeline):
    activity = json.loads((pipeline / "ds_activity" / "manifest.json").read_text())
    assert activity["method"] == "activity"
    assert activity["n_rows"] == activity["n_malicious"] + activity["n_nonmalicious"]
    assert activity["horizon_block"] == int(HORIZON)
    early = json.loads((pipeline / "ds_early" / "manifest.json").read_text())
    assert early["method"] == "early24"
    hour_files = sorted(name for name in os.listdir(pipeline / "ds_early") if name.startswith("hour_"))
    assert hour_files == [f"hour_{k:02d}.csv" for k in range(1, 25)]


def test_train_artifacts(pipeline):
    out = pipeline / "train_activity"
    for name in ["model.json", "cv.csv", "metrics.json", "manifest.json"]:
        assert (out / name).exists()
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["method"] == "activity"
    assert metrics["hour"] is None
    assert len(metrics["per_fold"]) == 5
    assert set(metrics["summary"]) == {"accuracy", "sensitivity", "precision", "f1"}
    fold_models = sorted(name for name in os.listdir(out) if name.startswith("model_fold"))
    assert fold_models == [f"model_fold{k}.json" for k in range(5)]


def test_evaluate_predictions(pipeline):
    out = pipeline / "eval_activity"
    with open(out / "predictions.csv", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert rows and set(rows[0]) == {"token", "eval_block", "label", "proba", "predicted"}
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["tp"] + metrics["tn"] + metrics["fp"] + metrics["fn"] == len(rows)


def test_report_artifacts(pipeline):
    out = pipeline / "report"
    for name in ["report.md", "activity_table.csv", "early24_hours.csv",
                 "activity.png", "hours.png", "labels.png", "recovery.png", "label_summary.json"]:
        assert (out / name).exists(), name
    text = (out / "report.md").read_text()
    assert "| Metric | Mean | Std |" in text
    assert "| Hour | Accuracy | Sensitivity | Precision | F1_Score |" in text
    hours_csv = (out / "early24_hours.csv").read_text().splitlines()
    assert hours_csv[0] == "hour,accuracy,sensitivity,precision,f1"
    assert [line.split(",")[0] for line in hours_csv[1:]] == ["1", "24"]


def test_reconstruct_series(pipeline):
    series_dir = pipeline / "series" / "series"
    files = sorted(os.listdir(series_dir))
    assert files
    first = (series_dir / files[0]).read_text().splitlines()
    assert first[0] == "block,price_num,price_den,liquidity_num,liquidity_den"
    assert len(first) > 1


def test_ingest_fixture_roundtrip(pipeline, tmp_path):
    events_dir = pipeline / "corpus" / "events"
    token = sorted(os.listdir(events_dir))[0][: -len(".jsonl")]
    fixture = events_dir / f"{token}.jsonl"
    assert run("ingest", "--token", token, "--fixture", str(fixture), "--out", str(tmp_path)) == 0
    assert filecmp.cmp(fixture, tmp_path / "events" / f"{token}.jsonl", shallow=False)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["stage"] == "ingest"
    assert manifest["token"] == token
    assert manifest["n_events"] > 0


def test_rerun_and_threads_byte_identical(pipeline, tmp_path):
    spec = tmp_path / "scenario.json"
    spec.write_text(json.dumps(SCENARIO))

    def stage_all(root, threads):
        t = str(threads)
        assert run("simulate", "--spec", str(spec), "--seed", SEED, "--threads", t,
                   "--out", str(root / "corpus")) == 0
        assert run("label", "--corpus", str(root / "corpus"), "--horizon", HORIZON,
                   "--seed", SEED, "--threads", t, "--out", str(root / "labels")) == 0
        assert run("build-dataset", "--corpus", str(root / "corpus"),
                   "--labels", str(root / "labels" / "labels.csv"), "--method", "activity",
                   "--horizon", HORIZON, "--seed", SEED, "--threads", t,
                   "--out", str(root / "ds")) == 0
        assert run("train", "--dataset", str(root / "ds"), "--method", "activity",
                   *FAST_TRAIN, "--seed", SEED, "--threads", t, "--out", str(root / "train")) == 0

    stage_all(tmp_path / "one", 1)
    stage_all(tmp_path / "two", 2)
    for dirpath, _, files in os.walk(tmp_path / "one"):
        rel = os.path.relpath(dirpath, tmp_path / "one")
        for name in files:
            twin = tmp_path / "two" / rel / name
            assert twin.exists(), twin
            assert filecmp.cmp(os.path.join(dirpath, name), twin, shallow=False), (rel, name)


def test_usage_errors_exit_nonzero(capsys):
    assert run("label", "--corpus", "x", "--horizon", "1", "--out", "y", "--bogus") == 2
    assert run() == 2
    assert run("train", "--dataset", "x", "--method", "weekly", "--out", "y") == 2
    assert "usage:" in capsys.readouterr().err


def test_typed_errors_exit_one(tmp_path, capsys):
    missing = tmp_path / "absent"
    assert run("label", "--corpus", str(missing), "--horizon", "1", "--out", str(tmp_path / "out")) == 1
    assert "MissingMetadata" in capsys.readouterr().err
    assert run("train", "--dataset", str(tmp_path), "--method", "early24",
               "--out", str(tmp_path / "t")) == 1
    assert "InvalidParams" in capsys.readouterr().err
    assert run("report", "--out", str(tmp_path / "r")) == 1


def test_early24_hour_flag_guards(tmp_path):
    assert run("train", "--dataset", str(tmp_path), "--method", "activity",
               "--hour", "3", "--out", str(tmp_path / "t")) == 1
