from __future__ import annotations

import json

import numpy as np
import pandas as pd
import pytest

from app.main import main
from conftest import labeled_table, threshold_model
from services.features import RawRecord
from services.runs import RunRecorder
from services.storage import read_features, read_model, write_features, write_model, write_raw_corpus

SYNTHETIC_CFG = "q=3\nrecords_per_class=3\nsegments_per_record=3\noverlap=0.05\nbba_drift=0.05\n"
TRAIN_CFG = "epochs=40\nepoch_patience=10\nmax_features=4\n"


@pytest.fixture
def configs(tmp_path):
    synthetic, train = tmp_path / "synthetic.cfg", tmp_path / "train.cfg"
    synthetic.write_text(SYNTHETIC_CFG)
    train.write_text(TRAIN_CFG)
    return synthetic, train


@pytest.fixture
def featurised(tmp_path, settings, configs):
    synthetic, _ = configs
    assert main(["gen", "--config", str(synthetic), "--seed", "4", "--out", str(tmp_path / "gen")]) == 0
    corpus = tmp_path / "gen" / "corpus.csv"
    assert main(["features", str(corpus), "--bba-correct", "--out", str(tmp_path / "feat")]) == 0
    return tmp_path / "feat" / "features.csv"


@pytest.fixture
def clustered_csv(tmp_path):
    rng = np.random.default_rng(0)
    labels = np.repeat([1, 2, 3], 12)
    dataset = labeled_table(10.0 * labels + rng.normal(scale=0.3, size=36), labels, segments_per_record=3)
    path = tmp_path / "clusters" / "features.csv"
    write_features(dataset, path)
    return path


def test_gen_is_reproducible(tmp_path, settings, configs):
    synthetic, _ = configs
    for name in ("a", "b"):
        assert main(["gen", "--config", str(synthetic), "--seed", "1", "--out", str(tmp_path / name)]) == 0
    for filename in ("corpus.csv", "ground_truth.json"):
        assert (tmp_path / "a" / filename).read_bytes() == (tmp_path / "b" / filename).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["command"] == "gen"
    assert manifest["seed"] == 1
    assert len(manifest["checksums"]) == 2


def test_gen_rejects_single_class(tmp_path, settings, caplog):
    config = tmp_path / "one.cfg"
    config.write_text("q=1\n")
    assert main(["gen", "--config", str(config), "--out", str(tmp_path / "out")]) == 2
    assert "greater than or equal to 2" in caplog.text
    assert not (tmp_path / "out" / "corpus.csv").exists()


def test_gen_rejects_unknown_config_key(tmp_path, settings):
    config = tmp_path / "typo.cfg"
    config.write_text("classes=3\n")
    assert main(["gen", "--config", str(config), "--out", str(tmp_path / "out")]) == 2


def test_missing_config_file_is_a_user_error(tmp_path, settings):
    assert main(["gen", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path / "out")]) == 2


def test_features_cuts_whole_segments(tmp_path, settings):
    raw = tmp_path / "raw.csv"
    samples = np.random.default_rng(1).normal(size=(2, 3500))
    write_raw_corpus([RawRecord(record_id="solo", label=1, samples=samples)], raw)
    assert main(["features", str(raw), "--out", str(tmp_path / "feat")]) == 0
    dataset = read_features(tmp_path / "feat" / "features.csv")
    assert len(dataset) == 3
    assert dataset.layout.size == 72
    assert not dataset.bba_corrected


def test_features_refuses_second_correction(tmp_path, featurised):
    assert read_features(featurised).bba_corrected
    assert main(["features", str(featurised), "--bba-correct", "--out", str(tmp_path / "again")]) == 2


def test_features_reports_malformed_row(tmp_path, settings, caplog):
    raw = tmp_path / "raw.csv"
    raw.write_text("record_id,label,channel,t,value\nr,1,1,0,0.5\nr,1,1,1,nope\n")
    assert main(["features", str(raw), "--out", str(tmp_path / "feat")]) == 2
    assert "line 3" in caplog.text


def test_train_writes_model_and_diagnostics(tmp_path, featurised, configs):
    _, train = configs
    out = tmp_path / "model"
    assert main(["train", str(featurised), "--config", str(train), "--seed", "2", "--out", str(out)]) == 0
    model = read_model(out / "model.json")
    assert model.q == 3
    assert model.pairs == [(1, 2), (1, 3), (2, 3)]
    assert model.trained_on == "features.csv"
    pairs = pd.read_csv(out / "pair_diagnostics.csv")
    assert list(pairs.columns) == ["i", "j", "n_features", "val_error"]
    assert len(pairs) == 3


def test_train_is_byte_reproducible(tmp_path, featurised, configs):
    _, train = configs
    for name in ("a", "b"):
        args = ["train", str(featurised), "--config", str(train), "--seed", "5", "--out", str(tmp_path / name)]
        assert main(args) == 0
    assert (tmp_path / "a" / "model.json").read_bytes() == (tmp_path / "b" / "model.json").read_bytes()


def test_train_rejects_zero_epochs(tmp_path, featurised):
    config = tmp_path / "zero.cfg"
    config.write_text("epochs=0\n")
    assert main(["train", str(featurised), "--config", str(config), "--out", str(tmp_path / "m")]) == 2


def test_train_names_missing_class(tmp_path, settings, caplog):
    dataset = labeled_table(np.arange(12.0), np.repeat([1, 3], 6), segments_per_record=2)
    path = tmp_path / "f.csv"
    write_features(dataset, path)
    assert main(["train", str(path), "--q", "3", "--out", str(tmp_path / "m")]) == 2
    assert "class 2" in caplog.text


def test_eval_on_separable_clusters(tmp_path, settings, clustered_csv):
    model_dir, eval_dir = tmp_path / "m", tmp_path / "e"
    assert main(["train", str(clustered_csv), "--seed", "1", "--out", str(model_dir)]) == 0
    assert main(["eval", str(model_dir / "model.json"), str(clustered_csv), "--out", str(eval_dir)]) == 0

    metrics = json.loads((eval_dir / "metrics.json").read_text())
    assert set(metrics["partitions"]) == {"all", "train", "test"}
    assert metrics["partitions"]["all"]["segment_accuracy"] == 1.0
    assert metrics["partitions"]["test"]["records"] == 3

    decisions = pd.read_csv(eval_dir / "record_decisions.csv")
    assert len(decisions) == 12
    fractions = decisions[["frac_1", "frac_2", "frac_3"]].sum(axis=1)
    np.testing.assert_allclose(fractions, 1.0, atol=1e-9)
    confusion = pd.read_csv(eval_dir / "confusion.csv")
    assert confusion[["pred_1", "pred_2", "pred_3"]].to_numpy().sum() == 36


def test_eval_rejects_layout_mismatch(tmp_path, featurised, configs, clustered_csv):
    _, train = configs
    assert main(["train", str(featurised), "--config", str(train), "--out", str(tmp_path / "m")]) == 0
    assert main(["eval", str(tmp_path / "m" / "model.json"), str(clustered_csv), "--out", str(tmp_path / "e")]) == 2
    assert main(["predict", str(tmp_path / "m" / "model.json"), str(clustered_csv)]) == 2


def test_predict_streams_one_row_per_segment(tmp_path, settings, clustered_csv, capsys):
    model_dir = tmp_path / "m"
    assert main(["train", str(clustered_csv), "--out", str(model_dir)]) == 0
    capsys.readouterr()
    unlabeled = tmp_path / "unlabeled.csv"
    frame = pd.read_csv(clustered_csv)
    frame["label"] = ""
    frame.to_csv(unlabeled, index=False)

    assert main(["predict", str(model_dir / "model.json"), str(unlabeled)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "record_id,segment_index,predicted"
    assert len(lines) == 37

    assert main(["predict", str(model_dir / "model.json"), str(unlabeled), "--out", str(tmp_path / "p")]) == 0
    predictions = pd.read_csv(tmp_path / "p" / "predictions.csv")
    np.testing.assert_array_equal(predictions["predicted"], np.repeat([1, 2, 3], 12))


def test_compare_writes_report(tmp_path, settings, clustered_csv):
    assert main(["compare", str(clustered_csv), "--seed", "3", "--out", str(tmp_path / "c")]) == 0
    report = json.loads((tmp_path / "c" / "comparison.json").read_text())
    assert report["classifier_counts"] == {"hierarchical": 2, "one_vs_all": 3, "pairwise": 3}


def test_runs_are_recorded(tmp_path, settings, configs, capsys):
    synthetic, _ = configs
    main(["gen", "--config", str(synthetic), "--out", str(tmp_path / "g")])
    main(["eval", str(tmp_path / "missing.json"), str(tmp_path / "missing.csv"), "--out", str(tmp_path / "e")])
    runs = RunRecorder(settings).recent()
    assert {(run.command, run.status) for run in runs} == {("gen", "succeeded"), ("eval", "error")}
    succeeded = next(run for run in runs if run.command == "gen")
    assert succeeded.manifest_path.endswith("manifest.json")

    capsys.readouterr()
    assert main(["runs", "--limit", "5"]) == 0
    output = capsys.readouterr().out.splitlines()
    assert output[0] == "id,command,seed,status,started_at,duration_seconds,error_message"
    assert len(output) == 3


def test_eval_rejects_labels_beyond_model_classes(tmp_path, settings, caplog):
    model_path, table = tmp_path / "model.json", tmp_path / "f.csv"
    write_model(threshold_model(2), model_path)
    write_features(labeled_table(np.array([1.0, 2.0, 3.0]), np.array([1, 2, 3])), table)
    assert main(["eval", str(model_path), str(table), "--out", str(tmp_path / "e")]) == 2
    assert "outside classes 1..2" in caplog.text
    assert not (tmp_path / "e" / "confusion.csv").exists()
