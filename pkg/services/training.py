"""Pocket-perceptron pair training with greedy forward feature selection."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import partial
from typing import NamedTuple

import numpy as np
from sklearn.preprocessing import StandardScaler

from app.config import TrainConfig
from app.schemas import PairDiagnostic
from services.dataset import TRAIN, SegmentDataset
from services.errors import DimensionError, EmptySplitError, PairTrainingError, StructuralError
from services.network import LinearUnit, MultiClassModel, PairwiseClassifier, class_pairs, format_real
from workers.pool import run_parallel

logger = logging.getLogger(__name__)

SPLIT_STREAM = 0


def derive_seed(seed: int, *parts: int) -> int:
    """Mix a master seed with stream coordinates into an independent 64-bit seed."""

    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(part) for part in parts))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def step_seed(seed: int, step: int) -> int:
    """Epoch-order seed of the ``step``-th selection round (0-based)."""

    return derive_seed(seed, step + 1)


@dataclass(frozen=True, eq=False)
class PocketResult:
    weights: np.ndarray
    bias: float
    train_accuracy: float
    epochs_used: int
    history: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class BinaryFit:
    classifier: LinearUnit
    train_accuracy: float
    validation_accuracy: float
    epochs_used: int
    selection_trace: tuple[tuple[int, float], ...] = ()
    degenerate: bool = False

    def __post_init__(self) -> None:
        for name in ("train_accuracy", "validation_accuracy"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise StructuralError(f"{name} must lie in [0, 1]")


class HoldoutSplit(NamedTuple):
    train_positives: np.ndarray
    train_negatives: np.ndarray
    val_positives: np.ndarray
    val_negatives: np.ndarray


class _UnitBatch(NamedTuple):
    weights: np.ndarray  # C × (k+1), bias last
    accuracy: np.ndarray
    epochs_used: np.ndarray
    history: np.ndarray  # epochs+1 × C


def _rows(rows: np.ndarray, side: str) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, np.newaxis]
    if rows.shape[0] == 0:
        raise StructuralError(f"no {side} examples")
    if rows.shape[1] == 0:
        raise StructuralError("rows have zero features")
    return rows


def _checked_sides(positives: np.ndarray, negatives: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    positives = _rows(positives, "positive")
    negatives = _rows(negatives, "negative")
    if positives.shape[1] != negatives.shape[1]:
        raise DimensionError(f"positives have {positives.shape[1]} features, negatives {negatives.shape[1]}")
    return positives, negatives


def _stack(positives: np.ndarray, negatives: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.vstack([positives, negatives])
    y = np.concatenate([np.ones(len(positives)), -np.ones(len(negatives))])
    return X, y


def _accuracy(X: np.ndarray, y: np.ndarray, W: np.ndarray) -> np.ndarray:
    return ((np.einsum("cnk,ck->cn", X, W) >= 0) == (y > 0)).mean(axis=1)


def _fit_units(stack: np.ndarray, y: np.ndarray, cfg: TrainConfig, seed: int) -> _UnitBatch:
    """Train one pocket unit per leading slice of ``stack`` (C × n × k), sharing epoch orders.

    Every unit sees the same seeded sample order, so a unit trained inside a
    batch ends bit-identical to the same unit trained alone.
    """

    count, n, _ = stack.shape
    X = np.concatenate([stack, np.ones((count, n, 1))], axis=2)
    W = np.zeros((count, X.shape[2]))
    pocket = W.copy()
    pocket_acc = _accuracy(X, y, pocket)
    run = np.zeros(count, dtype=int)
    trigger = np.zeros(count, dtype=int)
    stale = np.zeros(count, dtype=int)
    epochs_used = np.zeros(count, dtype=int)
    active = pocket_acc < 1.0
    history = [pocket_acc.copy()]
    rng = np.random.default_rng(seed)

    def ratchet(mask: np.ndarray) -> None:
        rows = np.flatnonzero(mask)
        if rows.size == 0:
            return
        accuracy = _accuracy(X[rows], y, W[rows])
        better = accuracy > pocket_acc[rows]
        replaced = rows[better]
        pocket[replaced] = W[replaced]
        pocket_acc[replaced] = accuracy[better]

    for epoch in range(cfg.epochs):
        if not active.any():
            break
        order = rng.permutation(n)
        epochs_used[active] += 1
        start_acc = pocket_acc.copy()
        temperature = cfg.thermal_temperature * (1.0 - epoch / cfg.epochs)
        for index in order:
            xi = X[:, index, :]
            target = y[index]
            activation = np.einsum("ck,ck->c", W, xi)
            correct = (activation >= 0) == (target > 0)
            run = np.where(correct, run + 1, 0)
            wrong = active & ~correct
            if wrong.any():
                step = cfg.learning_rate * target
                if cfg.learner == "thermal":
                    scale = step * np.exp(-np.abs(activation[wrong]) / temperature)
                    W[wrong] += scale[:, np.newaxis] * xi[wrong]
                else:
                    W[wrong] += step * xi[wrong]
            check = active & correct & (run > trigger)
            if check.any():
                trigger[check] = run[check]
                ratchet(check)
        ratchet(active)
        active &= pocket_acc < 1.0
        if cfg.epoch_patience is not None:
            # opt-in stall limit
            stale = np.where(pocket_acc > start_acc, 0, stale + 1)
            active &= stale < cfg.epoch_patience
        history.append(pocket_acc.copy())

    return _UnitBatch(pocket, pocket_acc, epochs_used, np.array(history))


def pocket_train(
    positives: np.ndarray, negatives: np.ndarray, cfg: TrainConfig, *, seed: int | None = None
) -> PocketResult:
    """Fit a single threshold unit: positives target +1, negatives −1.

    Starts from zero weights and bias and keeps the most accurate weights seen
    (replaced only on strict improvement).
    """

    positives, negatives = _checked_sides(positives, negatives)
    X, y = _stack(positives, negatives)
    batch = _fit_units(X[np.newaxis], y, cfg, cfg.seed if seed is None else seed)
    return PocketResult(
        weights=batch.weights[0, :-1].copy(),
        bias=float(batch.weights[0, -1]),
        train_accuracy=float(batch.accuracy[0]),
        epochs_used=int(batch.epochs_used[0]),
        history=tuple(float(value) for value in batch.history[:, 0]),
    )


def _holdout_size(fraction: float, n: int) -> int:
    return int(np.floor(fraction * n + 0.5))


def holdout_split(positives: np.ndarray, negatives: np.ndarray, fraction: float, seed: int) -> HoldoutSplit:
    """Stratified holdout: ``fraction`` of each side, drawn by a seeded shuffle."""

    rng = np.random.default_rng(seed)
    parts: list[np.ndarray] = []
    for side, rows in (("positive", positives), ("negative", negatives)):
        n = len(rows)
        n_val = _holdout_size(fraction, n)
        if n_val == 0:
            raise EmptySplitError(
                f"validation_fraction={fraction:g} leaves no {side} validation rows out of {n}; "
                "choose another validation_fraction or supply more data"
            )
        if n_val == n:
            raise EmptySplitError(
                f"validation_fraction={fraction:g} leaves no {side} training rows out of {n}; "
                "lower validation_fraction"
            )
        order = rng.permutation(n)
        parts.append(rows[np.sort(order[n_val:])])
        parts.append(rows[np.sort(order[:n_val])])
    train_pos, val_pos, train_neg, val_neg = parts
    return HoldoutSplit(train_pos, train_neg, val_pos, val_neg)


def forward_select(
    positives: np.ndarray, negatives: np.ndarray, cfg: TrainConfig, *, use_holdout: bool = True
) -> BinaryFit:
    """Greedy bottom-up feature search around :func:`pocket_train`.

    Each round fits every unselected feature added to the current set, scores
    the fits on the holdout and accepts the best (lowest index on ties). The
    search stops after ``selection_patience`` additions without a strict gain,
    at ``max_features``, or once the holdout is classified perfectly, and
    returns the fit of the best subset seen.
    """

    positives, negatives = _checked_sides(positives, negatives)
    n_features = positives.shape[1]
    if use_holdout:
        split = holdout_split(positives, negatives, cfg.validation_fraction, derive_seed(cfg.seed, SPLIT_STREAM))
    else:
        split = HoldoutSplit(positives, negatives, positives, negatives)
    X_train, y_train = _stack(split.train_positives, split.train_negatives)
    X_val, y_val = _stack(split.val_positives, split.val_negatives)

    if cfg.standardize:
        scaler = StandardScaler().fit(X_train)
        mean, scale = scaler.mean_, scaler.scale_
    else:
        mean, scale = np.zeros(n_features), np.ones(n_features)
    Z_train = (X_train - mean) / scale
    Z_val = (X_val - mean) / scale

    selected: list[int] = []
    trace: list[tuple[int, float]] = []
    best: tuple[list[int], np.ndarray, float, int, float] | None = None
    best_val = -1.0
    stale = 0
    limit = min(cfg.max_features, n_features)
    step = 0
    while len(selected) < limit:
        candidates = [f for f in range(n_features) if f not in selected]
        subsets = [sorted(selected + [f]) for f in candidates]
        stack = np.stack([Z_train[:, columns] for columns in subsets])
        batch = _fit_units(stack, y_train, cfg, step_seed(cfg.seed, step))
        val_stack = np.stack([Z_val[:, columns] for columns in subsets])
        val_stack = np.concatenate([val_stack, np.ones((*val_stack.shape[:2], 1))], axis=2)
        scores = _accuracy(val_stack, y_val, batch.weights)
        pick = int(np.argmax(scores))
        selected.append(candidates[pick])
        score = float(scores[pick])
        trace.append((candidates[pick] + 1, score))
        if score > best_val:
            best_val = score
            best = (
                subsets[pick], batch.weights[pick], float(batch.accuracy[pick]), int(batch.epochs_used[pick]), score
            )
            stale = 0
        else:
            stale += 1
        if best_val >= 1.0 or stale >= cfg.selection_patience:
            break
        step += 1

    assert best is not None
    columns, weights, train_acc, epochs_used, val_acc = best
    raw_weights = weights[:-1] / scale[columns]
    raw_bias = weights[-1] - float(np.sum(weights[:-1] * mean[columns] / scale[columns]))
    unit = LinearUnit(feature_indices=tuple(c + 1 for c in columns), weights=raw_weights, bias=raw_bias)
    return BinaryFit(
        classifier=unit,
        train_accuracy=train_acc,
        validation_accuracy=val_acc,
        epochs_used=epochs_used,
        selection_trace=tuple(trace),
    )


def fit_binary(positives: np.ndarray, negatives: np.ndarray, cfg: TrainConfig, *, name: str = "") -> BinaryFit:
    """:func:`forward_select`, falling back to training-data scoring when the holdout is empty."""

    try:
        return forward_select(positives, negatives, cfg)
    except EmptySplitError as exc:
        logger.warning("Selection holdout for %s is empty (%s); scoring on training data", name or "unit", exc)
        fit = forward_select(positives, negatives, cfg, use_holdout=False)
        return BinaryFit(
            classifier=fit.classifier,
            train_accuracy=fit.train_accuracy,
            validation_accuracy=fit.validation_accuracy,
            epochs_used=fit.epochs_used,
            selection_trace=fit.selection_trace,
            degenerate=True,
        )


def train_pair(dataset: SegmentDataset, i: int, j: int, cfg: TrainConfig) -> BinaryFit:
    if not 1 <= i < j:
        raise StructuralError(f"a pair needs 1 <= i < j, got ({i}, {j})")
    train = dataset.partition(TRAIN)
    train.require_classes((i, j))
    pair_cfg = cfg.model_copy(update={"seed": derive_seed(cfg.seed, i, j)})
    fit = fit_binary(train.rows_of(i), train.rows_of(j), pair_cfg, name=f"pair {i}/{j}")
    unit = fit.classifier
    classifier = PairwiseClassifier(
        feature_indices=unit.feature_indices, weights=unit.weights, bias=unit.bias, class_lo=i, class_hi=j
    )
    logger.debug("Pair %d/%d: %d features, validation accuracy %.3f", i, j, unit.n_features, fit.validation_accuracy)
    return BinaryFit(
        classifier=classifier,
        train_accuracy=fit.train_accuracy,
        validation_accuracy=fit.validation_accuracy,
        epochs_used=fit.epochs_used,
        selection_trace=fit.selection_trace,
        degenerate=fit.degenerate,
    )


def _train_pair_job(dataset: SegmentDataset, pair: tuple[int, int], cfg: TrainConfig) -> BinaryFit:
    try:
        return train_pair(dataset, pair[0], pair[1], cfg)
    except StructuralError as exc:
        raise PairTrainingError(pair, exc) from exc


def diagnostic(fit: BinaryFit) -> PairDiagnostic:
    classifier = fit.classifier
    assert isinstance(classifier, PairwiseClassifier)
    return PairDiagnostic(
        i=classifier.class_lo,
        j=classifier.class_hi,
        n_features=classifier.n_features,
        train_accuracy=fit.train_accuracy,
        validation_accuracy=fit.validation_accuracy,
        epochs_used=fit.epochs_used,
        degenerate=fit.degenerate,
    )


def _textual(values: dict) -> dict:
    return {key: format_real(value) if isinstance(value, float) else value for key, value in values.items()}


def train_model(
    dataset: SegmentDataset, q: int, cfg: TrainConfig, *, workers: int = 1, source: str = ""
) -> MultiClassModel:
    """Train all q(q−1)/2 pair classifiers independently and couple them into one model."""

    pairs = class_pairs(q)
    train = dataset.partition(TRAIN)
    unexpected = [label for label in train.classes if label > q]
    if unexpected:
        raise StructuralError(f"labels {unexpected} exceed q={q}")
    train.require_classes(range(1, q + 1))

    logger.info("Training %d pair classifiers on %d segments (workers=%d)", len(pairs), len(train), workers)
    fits = run_parallel(partial(_train_pair_job, train, cfg=cfg), pairs, workers)
    diagnostics = [diagnostic(fit) for fit in fits]
    for row in diagnostics:
        if row.degenerate:
            logger.warning("Pair %d/%d was selected on training data (holdout empty)", row.i, row.j)

    metadata = {
        "config": _textual(cfg.model_dump(mode="json")),
        "train_records": sorted({str(record_id) for record_id in train.record_ids}),
        "bba_corrected": dataset.bba_corrected,
        "pairs": [_textual(row.model_dump()) for row in diagnostics],
    }
    return MultiClassModel(
        q=q,
        classifiers={pair: fit.classifier for pair, fit in zip(pairs, fits, strict=True)},
        feature_layout=dataset.layout,
        trained_on=source or f"{len(train)} segments from {len(metadata['train_records'])} records",
        metadata=metadata,
    )


def model_diagnostics(model: MultiClassModel) -> list[PairDiagnostic]:
    """Per-pair diagnostics recorded at training time."""

    return [PairDiagnostic.model_validate(row) for row in model.metadata.get("pairs", [])]
