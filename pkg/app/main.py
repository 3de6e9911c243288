"""Command-line entrypoint wiring the pipeline stages together."""
from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from contextlib import nullcontext
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.config import Settings, SyntheticSpec, TrainConfig, get_settings
from app.schemas import PartitionMetrics
from services.datagen import generate_corpus, split_by_record
from services.dataset import TEST, TRAIN, SegmentDataset, build_dataset, correct_dataset
from services.errors import StructuralError
from services.evaluation import (
    ConfusionMatrix,
    compare_decompositions,
    pair_diagnostics,
    record_accuracy,
    record_decisions,
    require_class_labels,
    segment_accuracy,
)
from services.features import UNLABELED, FeatureLayout
from services.network import MultiClassModel
from services.runs import RunContext, RunRecorder
from services.storage import (
    is_raw_corpus,
    iter_feature_chunks,
    layout_sidecar,
    peek_feature_width,
    read_artifacts,
    read_feature_meta,
    read_features,
    read_model,
    read_raw_records,
    write_confusion,
    write_features,
    write_ground_truth,
    write_json,
    write_model,
    write_pair_diagnostics,
    write_raw_corpus,
    write_record_decisions,
)
from services.training import train_model

logger = logging.getLogger("pairnet")

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"
USER_ERROR = 2
INTERNAL_ERROR = 1

Handler = Callable[[argparse.Namespace, Settings, RunRecorder], int]


def _overrides(args: argparse.Namespace) -> dict:
    return {"seed": args.seed} if getattr(args, "seed", None) is not None else {}


def _manifest(context: RunContext, out_dir: Path) -> None:
    context.write_manifest(out_dir / "manifest.json")


def cmd_gen(args: argparse.Namespace, settings: Settings, recorder: RunRecorder) -> int:
    spec = SyntheticSpec.from_file(args.config, **_overrides(args))
    out_dir = Path(args.out)
    with recorder.track("gen", seed=spec.seed, out_path=out_dir) as context:
        corpus = generate_corpus(spec)
        corpus_path, truth_path = out_dir / "corpus.csv", out_dir / "ground_truth.json"
        write_raw_corpus(corpus.records, corpus_path)
        write_ground_truth(corpus, truth_path)
        context.config = spec.model_dump(mode="json")
        context.outputs = [corpus_path, truth_path]
        _manifest(context, out_dir)
    logger.info("Wrote %d records to %s", len(corpus.records), corpus_path)
    return 0


def _featurise(args: argparse.Namespace, settings: Settings) -> SegmentDataset:
    source = Path(args.input)
    if is_raw_corpus(source):
        artifacts = read_artifacts(Path(args.ground_truth)) if args.ground_truth else None
        records = read_raw_records(source, artifacts)
        layout = FeatureLayout.eeg(args.sample_rate or settings.sample_rate_hz)
        return build_dataset(records, layout, correct_bba=args.bba_correct)
    dataset = read_features(source)
    if not args.bba_correct:
        logger.warning("%s already holds features and no correction was requested; copying it", source)
        return dataset
    return correct_dataset(dataset)


def cmd_features(args: argparse.Namespace, settings: Settings, recorder: RunRecorder) -> int:
    out_dir = Path(args.out)
    with recorder.track("features", out_path=out_dir) as context:
        dataset = _featurise(args, settings)
        target = out_dir / "features.csv"
        write_features(dataset, target)
        context.config = {"bba_correct": args.bba_correct, "sample_rate_hz": dataset.layout.sample_rate_hz}
        context.inputs = [Path(args.input)] + ([Path(args.ground_truth)] if args.ground_truth else [])
        context.outputs = [target, layout_sidecar(target)]
        _manifest(context, out_dir)
    logger.info("Wrote %d feature rows to %s", len(dataset), target)
    return 0


def _class_count(dataset: SegmentDataset, q: int | None) -> int:
    if q is not None:
        return q
    if not dataset.classes:
        raise StructuralError("the feature table has no labeled rows")
    return max(dataset.classes)


def cmd_train(args: argparse.Namespace, settings: Settings, recorder: RunRecorder) -> int:
    cfg = TrainConfig.from_file(args.config, **_overrides(args))
    out_dir = Path(args.out)
    with recorder.track("train", seed=cfg.seed, out_path=out_dir) as context:
        dataset = read_features(Path(args.input))
        q = _class_count(dataset, args.q)
        split = split_by_record(dataset, cfg.test_fraction, cfg.seed)
        model = train_model(split, q, cfg, workers=args.workers or settings.workers, source=Path(args.input).name)
        model_path, diagnostics_path = out_dir / "model.json", out_dir / "pair_diagnostics.csv"
        write_model(model, model_path)
        write_pair_diagnostics(pair_diagnostics(model), diagnostics_path)
        context.config = cfg.model_dump(mode="json")
        context.inputs = [Path(args.input)]
        context.outputs = [model_path, diagnostics_path]
        _manifest(context, out_dir)
    logger.info("Wrote %d-class model with %d pair classifiers to %s", q, len(model.pairs), model_path)
    return 0


def _partition_metrics(model: MultiClassModel, dataset: SegmentDataset) -> PartitionMetrics:
    return PartitionMetrics(
        segments=len(dataset),
        records=len(dataset.record_labels()),
        segment_accuracy=segment_accuracy(model, dataset),
        record_accuracy=record_accuracy(model, dataset),
    )


def cmd_eval(args: argparse.Namespace, settings: Settings, recorder: RunRecorder) -> int:
    out_dir = Path(args.out)
    with recorder.track("eval", out_path=out_dir) as context:
        model = read_model(Path(args.model))
        dataset = read_features(Path(args.input))
        model.feature_layout.check_compatible(dataset.layout)
        if not len(dataset):
            raise StructuralError(f"{args.input} has no feature rows")
        if np.any(dataset.labels == UNLABELED):
            raise StructuralError("evaluation needs a label on every row; use predict for unlabeled tables")
        require_class_labels(dataset.labels, model.q)
        trained = model.metadata.get("train_records", [])
        dataset = dataset.with_partitions(np.where(np.isin(dataset.record_ids, trained), TRAIN, TEST))

        partitions = {"all": dataset, TRAIN: dataset.partition(TRAIN), TEST: dataset.partition(TEST)}
        metrics = {
            name: _partition_metrics(model, rows).model_dump() for name, rows in partitions.items() if len(rows)
        }
        paths = {
            "metrics": out_dir / "metrics.json",
            "confusion": out_dir / "confusion.csv",
            "decisions": out_dir / "record_decisions.csv",
            "pairs": out_dir / "pair_diagnostics.csv",
        }
        write_json(paths["metrics"], {"q": model.q, "partitions": metrics})
        confusion = ConfusionMatrix.from_labels(dataset.labels, model.predict_batch(dataset.values), model.q)
        write_confusion(confusion, paths["confusion"])
        write_record_decisions(record_decisions(model, dataset), model.q, paths["decisions"])
        write_pair_diagnostics(pair_diagnostics(model), paths["pairs"])
        context.inputs = [Path(args.model), Path(args.input)]
        context.outputs = list(paths.values())
        _manifest(context, out_dir)
    logger.info("Segment accuracy over all rows: %.4f", metrics["all"]["segment_accuracy"])
    return 0


def cmd_predict(args: argparse.Namespace, settings: Settings, recorder: RunRecorder) -> int:
    out_dir = Path(args.out) if args.out else None
    with recorder.track("predict", out_path=out_dir) as context:
        model = read_model(Path(args.model))
        source = Path(args.input)
        layout, _ = read_feature_meta(source, peek_feature_width(source))
        model.feature_layout.check_compatible(layout)
        target = out_dir / "predictions.csv" if out_dir else None
        if target is not None:
            target.parent.mkdir(parents=True, exist_ok=True)
        rows = 0
        sink = target.open("w", encoding="utf-8", newline="") if target else nullcontext(sys.stdout)
        with sink as handle:
            for index, chunk in enumerate(iter_feature_chunks(source, settings.predict_chunk_rows)):
                frame = pd.DataFrame(
                    {
                        "record_id": chunk["record_ids"],
                        "segment_index": chunk["segment_indices"],
                        "predicted": model.predict_batch(chunk["values"]),
                    }
                )
                frame.to_csv(handle, index=False, header=index == 0, lineterminator="\n")
                rows += len(frame)
        if target is not None:
            context.inputs = [Path(args.model), source]
            context.outputs = [target]
            _manifest(context, out_dir)
    logger.info("Predicted %d segments", rows)
    return 0


def cmd_compare(args: argparse.Namespace, settings: Settings, recorder: RunRecorder) -> int:
    cfg = TrainConfig.from_file(args.config, **_overrides(args))
    out_dir = Path(args.out)
    with recorder.track("compare", seed=cfg.seed, out_path=out_dir) as context:
        dataset = read_features(Path(args.input))
        q = _class_count(dataset, args.q)
        split = split_by_record(dataset, cfg.test_fraction, cfg.seed)
        report = compare_decompositions(split, q, cfg, workers=args.workers or settings.workers)
        target = out_dir / "comparison.json"
        write_json(target, report.model_dump())
        context.config = cfg.model_dump(mode="json")
        context.inputs = [Path(args.input)]
        context.outputs = [target]
        _manifest(context, out_dir)
    return 0


def cmd_runs(args: argparse.Namespace, settings: Settings, recorder: RunRecorder) -> int:
    rows = [
        {
            "id": run.id,
            "command": run.command,
            "seed": run.seed or "",
            "status": run.status,
            "started_at": run.started_at.isoformat(timespec="seconds"),
            "duration_seconds": "" if run.duration_seconds is None else f"{run.duration_seconds:.3f}",
            "error_message": run.error_message or "",
        }
        for run in recorder.recent(args.limit)
    ]
    columns = ["id", "command", "seed", "status", "started_at", "duration_seconds", "error_message"]
    pd.DataFrame(rows, columns=columns).to_csv(sys.stdout, index=False, lineterminator="\n")
    return 0


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pairnet", description="Pairwise-coupled multi-class network pipeline.")
    parser.add_argument("--log-level", help="override PAIRNET_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    def add(name: str, handler: Handler, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.set_defaults(handler=handler)
        return sub

    gen = add("gen", cmd_gen, "generate a synthetic labeled corpus")
    gen.add_argument("--config", help="key=value synthetic corpus spec")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out", required=True, help="output directory")

    features = add("features", cmd_features, "extract segment features from a raw corpus")
    features.add_argument("input", help="raw corpus CSV or feature CSV")
    features.add_argument("--out", required=True, help="output directory")
    features.add_argument("--bba-correct", action="store_true", help="subtract background activity")
    features.add_argument("--ground-truth", help="ground-truth JSON listing artifact segments to exclude")
    features.add_argument("--sample-rate", type=float, help="sampling rate of the raw corpus in Hz")

    for name, handler, help_text in (
        ("train", cmd_train, "train the pairwise network"),
        ("compare", cmd_compare, "compare pairwise, one-vs-all and hierarchical decompositions"),
    ):
        sub = add(name, handler, help_text)
        sub.add_argument("input", help="feature CSV")
        sub.add_argument("--config", help="key=value training config")
        sub.add_argument("--seed", type=int)
        sub.add_argument("--q", type=int, help="number of classes (default: largest label)")
        sub.add_argument("--workers", type=int, help="processes for pair training")
        sub.add_argument("--out", required=True, help="output directory")

    evaluate = add("eval", cmd_eval, "score a model on a labeled feature table")
    evaluate.add_argument("model")
    evaluate.add_argument("input", help="feature CSV")
    evaluate.add_argument("--out", required=True, help="output directory")

    predict = add("predict", cmd_predict, "predict a class per segment")
    predict.add_argument("model")
    predict.add_argument("input", help="feature CSV")
    predict.add_argument("--out", help="output directory (default: standard output)")

    runs = add("runs", cmd_runs, "list recent runs")
    runs.add_argument("--limit", type=int, default=20)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = create_parser().parse_args(argv)
    settings = get_settings()
    logging.basicConfig(level=(args.log_level or settings.log_level).upper(), stream=sys.stderr, format=LOG_FORMAT)
    try:
        return args.handler(args, settings, RunRecorder(settings))
    except (StructuralError, ValidationError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return USER_ERROR
    except Exception:
        logger.exception("%s failed", args.command)
        return INTERNAL_ERROR
