"""Segment and record scoring, plus the one-vs-all and hierarchical baselines."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import partial

import numpy as np
from sklearn.metrics import confusion_matrix

from app.config import TrainConfig
from app.schemas import ComparisonReport, PairDiagnostic, RecordDecision
from services.dataset import TEST, TRAIN, SegmentDataset
from services.errors import StructuralError
from services.features import FeatureLayout
from services.network import LinearUnit, MultiClassModel, SupportsPredict, classifier_count
from services.training import derive_seed, fit_binary, model_diagnostics, train_model
from workers.pool import run_parallel

logger = logging.getLogger(__name__)


def require_class_labels(labels: np.ndarray, q: int, what: str = "true") -> None:
    """Raise unless every label is a class index 1..q."""

    outside = np.unique(labels[(labels < 1) | (labels > q)])
    if outside.size:
        shown = ", ".join(str(int(label)) for label in outside[:5])
        raise StructuralError(f"{what} labels {shown} fall outside classes 1..{q}")


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class, both 1..q."""

    counts: np.ndarray

    @classmethod
    def from_labels(cls, true: np.ndarray, predicted: np.ndarray, q: int) -> ConfusionMatrix:
        true, predicted = np.asarray(true), np.asarray(predicted)
        require_class_labels(true, q, "true")
        require_class_labels(predicted, q, "predicted")
        return cls(confusion_matrix(true, predicted, labels=list(range(1, q + 1))))

    @property
    def q(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0


def _require_rows(dataset: SegmentDataset) -> None:
    if len(dataset) == 0:
        raise StructuralError("cannot score an empty partition")


def segment_accuracy(model: SupportsPredict, dataset: SegmentDataset) -> float:
    _require_rows(dataset)
    require_class_labels(dataset.labels, model.q)
    return float(np.mean(model.predict_batch(dataset.values) == dataset.labels))


def segment_confusion(model: SupportsPredict, dataset: SegmentDataset) -> ConfusionMatrix:
    _require_rows(dataset)
    return ConfusionMatrix.from_labels(dataset.labels, model.predict_batch(dataset.values), model.q)


def vote_record(
    record_id: str, predictions: np.ndarray, q: int, *, true_class: int | None = None
) -> RecordDecision:
    """Plurality of segment predictions; the winner's share is the record probability."""

    predictions = np.asarray(predictions, dtype=int)
    if predictions.size == 0:
        raise StructuralError(f"record {record_id} has no segments")
    if predictions.min() < 1 or predictions.max() > q:
        raise StructuralError(f"predictions of record {record_id} fall outside 1..{q}")
    counts = np.bincount(predictions, minlength=q + 1)[1:]
    fractions = counts / predictions.size
    winner = int(np.argmax(counts))
    return RecordDecision(
        record_id=record_id,
        predicted_class=winner + 1,
        probability=float(fractions[winner]),
        per_class_fractions=[float(value) for value in fractions],
        true_class=true_class,
    )


def aggregate_record(
    model: SupportsPredict, segments: SegmentDataset | np.ndarray, record_id: str | None = None
) -> RecordDecision:
    if isinstance(segments, SegmentDataset):
        rows = segments.values
        if record_id is None and len(segments):
            record_id = str(segments.record_ids[0])
    else:
        rows = np.asarray(segments, dtype=float)
    return vote_record(record_id or "", model.predict_batch(rows), model.q)


def record_decisions(model: SupportsPredict, dataset: SegmentDataset) -> list[RecordDecision]:
    labels = dataset.record_labels()
    predictions = model.predict_batch(dataset.values) if len(dataset) else np.array([], dtype=int)
    decisions = []
    for record_id in labels:
        mask = dataset.record_ids == record_id
        true_class = labels[record_id] or None
        decisions.append(vote_record(record_id, predictions[mask], model.q, true_class=true_class))
    return decisions


def record_accuracy(model: SupportsPredict, dataset: SegmentDataset) -> float:
    _require_rows(dataset)
    decisions = record_decisions(model, dataset)
    return float(np.mean([decision.predicted_class == decision.true_class for decision in decisions]))


def pair_diagnostics(model: MultiClassModel) -> list[PairDiagnostic]:
    """Rows `i,j,n_features,val_error` in pair order."""

    rows = model_diagnostics(model)
    if rows:
        return rows
    # models without training metadata still report their feature counts
    return [
        PairDiagnostic(
            i=c.class_lo,
            j=c.class_hi,
            n_features=c.n_features,
            train_accuracy=0.0,
            validation_accuracy=0.0,
            epochs_used=0,
        )
        for c in model.classifiers.values()
    ]


def score_profile_record(model: MultiClassModel, rows: np.ndarray) -> np.ndarray:
    """Group scores summed over a record's segments."""

    scores, _ = model.group_scores_batch(rows)
    return scores.sum(axis=0)


@dataclass(frozen=True, eq=False)
class OneVsAllModel:
    """One unit per class against all others; decision by largest raw activation."""

    q: int
    units: tuple[LinearUnit, ...]
    feature_layout: FeatureLayout

    @property
    def classifier_count(self) -> int:
        return len(self.units)

    def activations(self, X: np.ndarray) -> np.ndarray:
        return np.column_stack([unit.activations(X) for unit in self.units])

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.activations(X), axis=1) + 1


def _one_vs_all_job(dataset: SegmentDataset, label: int, q: int, cfg: TrainConfig) -> LinearUnit:
    rest = (dataset.labels != label) & (dataset.labels >= 1) & (dataset.labels <= q)
    unit_cfg = cfg.model_copy(update={"seed": derive_seed(cfg.seed, 0, label)})
    return fit_binary(dataset.rows_of(label), dataset.values[rest], unit_cfg, name=f"class {label} vs rest").classifier


def train_one_vs_all(dataset: SegmentDataset, q: int, cfg: TrainConfig, *, workers: int = 1) -> OneVsAllModel:
    classifier_count(q)
    train = dataset.partition(TRAIN)
    train.require_classes(range(1, q + 1))
    logger.info("Training %d one-vs-all units", q)
    units = run_parallel(partial(_one_vs_all_job, train, q=q, cfg=cfg), list(range(1, q + 1)), workers)
    return OneVsAllModel(q=q, units=tuple(units), feature_layout=dataset.layout)


@dataclass(frozen=True, eq=False)
class SplitNode:
    """Internal node separating classes ``lo..split`` (+1) from ``split+1..hi`` (−1)."""

    lo: int
    split: int
    hi: int
    unit: LinearUnit
    left: SplitNode | None = None
    right: SplitNode | None = None


def split_ranges(lo: int, hi: int) -> list[tuple[int, int, int]]:
    """Preorder ``(lo, split, hi)`` of the balanced contiguous-range tree; the left half takes ceil(n/2)."""

    if hi <= lo:
        return []
    split = lo + math.ceil((hi - lo + 1) / 2) - 1
    return [(lo, split, hi)] + split_ranges(lo, split) + split_ranges(split + 1, hi)


@dataclass(frozen=True, eq=False)
class HierarchicalModel:
    q: int
    root: SplitNode
    feature_layout: FeatureLayout

    @property
    def classifier_count(self) -> int:
        def count(node: SplitNode | None) -> int:
            return 0 if node is None else 1 + count(node.left) + count(node.right)

        return count(self.root)

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[np.newaxis, :]
        predictions = np.zeros(X.shape[0], dtype=int)

        def descend(node: SplitNode, rows: np.ndarray) -> None:
            if rows.size == 0:
                return
            go_left = node.unit.outputs(X[rows]) == 1
            for branch, child, leaf in ((go_left, node.left, node.lo), (~go_left, node.right, node.hi)):
                if child is None:
                    predictions[rows[branch]] = leaf
                else:
                    descend(child, rows[branch])

        descend(self.root, np.arange(X.shape[0]))
        return predictions


def _split_job(dataset: SegmentDataset, bounds: tuple[int, int, int], cfg: TrainConfig) -> LinearUnit:
    lo, split, hi = bounds
    left = (dataset.labels >= lo) & (dataset.labels <= split)
    right = (dataset.labels > split) & (dataset.labels <= hi)
    node_cfg = cfg.model_copy(update={"seed": derive_seed(cfg.seed, lo, hi)})
    fit = fit_binary(dataset.values[left], dataset.values[right], node_cfg, name=f"split {lo}..{split}|{hi}")
    return fit.classifier


def train_hierarchical(dataset: SegmentDataset, q: int, cfg: TrainConfig, *, workers: int = 1) -> HierarchicalModel:
    classifier_count(q)
    train = dataset.partition(TRAIN)
    train.require_classes(range(1, q + 1))
    ranges = split_ranges(1, q)
    logger.info("Training %d range-split units", len(ranges))
    units = dict(zip(ranges, run_parallel(partial(_split_job, train, cfg=cfg), ranges, workers), strict=True))

    def build(lo: int, hi: int) -> SplitNode | None:
        if hi <= lo:
            return None
        split = lo + math.ceil((hi - lo + 1) / 2) - 1
        return SplitNode(lo, split, hi, units[(lo, split, hi)], build(lo, split), build(split + 1, hi))

    root = build(1, q)
    assert root is not None
    return HierarchicalModel(q=q, root=root, feature_layout=dataset.layout)


def compare_decompositions(
    dataset: SegmentDataset, q: int, cfg: TrainConfig, *, workers: int = 1
) -> ComparisonReport:
    """Train the pairwise model and both baselines on the train partition; score the test partition."""

    models: dict[str, SupportsPredict] = {
        "pairwise": train_model(dataset, q, cfg, workers=workers),
        "one_vs_all": train_one_vs_all(dataset, q, cfg, workers=workers),
        "hierarchical": train_hierarchical(dataset, q, cfg, workers=workers),
    }
    test = dataset.partition(TEST)
    report = ComparisonReport(
        seed=cfg.seed,
        q=q,
        classifier_counts={
            "pairwise": classifier_count(q),
            "one_vs_all": models["one_vs_all"].classifier_count,
            "hierarchical": models["hierarchical"].classifier_count,
        },
        segment_accuracy={name: segment_accuracy(model, test) for name, model in models.items()},
        record_accuracy={name: record_accuracy(model, test) for name, model in models.items()},
    )
    logger.info("Test segment accuracy: %s", report.segment_accuracy)
    return report
