"""Pairwise-coupled threshold network: pair outputs, coupling and group scores."""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Literal, Protocol

import numpy as np

from services.errors import DimensionError, StructuralError
from services.features import FeatureLayout, FeatureVector

ScoreMode = Literal["hard", "margin"]
MODEL_FORMAT = "pairnet-model"
MODEL_FORMAT_VERSION = 1
# weights, biases and float metadata are JSON strings holding format_real text
REAL_ENCODING = "decimal-string-.16e"


def format_real(value: float) -> str:
    """Fixed 17-significant-digit text; ``float()`` restores the value exactly."""

    return format(float(value), ".16e")


def _as_matrix(x: np.ndarray | FeatureVector) -> np.ndarray:
    values = x.values if isinstance(x, FeatureVector) else x
    matrix = np.asarray(values, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix[np.newaxis, :]
    if matrix.ndim != 2:
        raise DimensionError("inputs must be a feature vector or a matrix of feature rows")
    return matrix


@dataclass(frozen=True, eq=False)
class LinearUnit:
    """Threshold unit over a subset of features.

    ``feature_indices`` are 1-based positions into the feature layout, distinct
    and ascending; ``weights`` align with them.
    """

    feature_indices: tuple[int, ...]
    weights: np.ndarray
    bias: float

    def __post_init__(self) -> None:
        indices = tuple(int(index) for index in self.feature_indices)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if not indices:
            raise StructuralError("a trained unit selects at least one feature")
        if any(index < 1 for index in indices):
            raise StructuralError("feature indices are 1-based")
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise StructuralError("feature indices must be distinct and ascending")
        if weights.size != len(indices):
            raise StructuralError(f"{weights.size} weights for {len(indices)} selected features")
        weights.setflags(write=False)
        object.__setattr__(self, "feature_indices", indices)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "_positions", np.asarray(indices) - 1)

    @property
    def n_features(self) -> int:
        return len(self.feature_indices)

    def activations(self, X: np.ndarray) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] < self.feature_indices[-1]:
            raise DimensionError(
                f"input has {X.shape[1]} features but the unit reads feature {self.feature_indices[-1]}"
            )
        return (X[:, self._positions] * self.weights).sum(axis=1) + self.bias

    def outputs(self, X: np.ndarray) -> np.ndarray:
        """±1 outputs; an activation of exactly zero maps to +1."""

        return np.where(self.activations(X) >= 0, 1, -1)

    def activation(self, x: np.ndarray | FeatureVector) -> float:
        return float(self.activations(_as_matrix(x))[0])

    def output(self, x: np.ndarray | FeatureVector) -> int:
        return int(self.outputs(_as_matrix(x))[0])


@dataclass(frozen=True, eq=False)
class PairwiseClassifier(LinearUnit):
    """Separates class ``class_lo`` (+1) from class ``class_hi`` (−1)."""

    class_lo: int = 0
    class_hi: int = 0

    def __post_init__(self) -> None:
        super().__post_init__()
        if not 1 <= self.class_lo < self.class_hi:
            raise StructuralError(f"pair ({self.class_lo}, {self.class_hi}) needs 1 <= class_lo < class_hi")

    @property
    def pair(self) -> tuple[int, int]:
        return (self.class_lo, self.class_hi)


def pair_output(
    classifier: PairwiseClassifier, x: np.ndarray | FeatureVector, layout: FeatureLayout | None = None
) -> int:
    """±1 output of one pair classifier.

    A bare classifier only knows its highest selected feature, so the full
    width of ``x`` is checked against ``layout`` when one is given.
    :class:`MultiClassModel` always checks against its own layout.
    """

    if layout is not None and _as_matrix(x).shape[1] != layout.size:
        raise DimensionError(f"input has {_as_matrix(x).shape[1]} features, layout has {layout.size}")
    return classifier.output(x)


def classifier_count(q: int) -> int:
    if q < 2:
        raise StructuralError(f"q must be >= 2, got {q}")
    return q * (q - 1) // 2


def class_pairs(q: int) -> list[tuple[int, int]]:
    """All pairs ``(a, b)`` with ``a < b`` in lexicographic order."""

    classifier_count(q)
    return [(a, b) for a in range(1, q + 1) for b in range(a + 1, q + 1)]


def coupling_weight(i: int, pair: tuple[int, int], q: int) -> int:
    a, b = pair
    if not 1 <= i <= q:
        raise StructuralError(f"class {i} outside 1..{q}")
    if not 1 <= a < b <= q:
        raise StructuralError(f"pair ({a}, {b}) outside 1..{q} or not ascending")
    if i == a:
        return 1
    if i == b:
        return -1
    return 0


@lru_cache(maxsize=64)
def coupling_matrix(q: int) -> np.ndarray:
    """q × q(q−1)/2 matrix of coupling weights, columns in :func:`class_pairs` order."""

    pairs = class_pairs(q)
    matrix = np.zeros((q, len(pairs)), dtype=int)
    for column, (a, b) in enumerate(pairs):
        matrix[a - 1, column] = 1
        matrix[b - 1, column] = -1
    matrix.setflags(write=False)
    return matrix


@dataclass(frozen=True, eq=False)
class GroupScores:
    scores: np.ndarray
    votes: np.ndarray
    winner: int


def couple(outputs: np.ndarray, q: int, activations: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Superpose pair outputs into group scores and vote counts.

    ``outputs`` is an ``n × q(q−1)/2`` matrix of ±1 in pair order. When
    ``activations`` is given the scores superpose those instead (margin mode);
    votes always follow the signs.
    """

    coupling = coupling_matrix(q)
    outputs = np.asarray(outputs, dtype=int)
    source = outputs if activations is None else np.asarray(activations, dtype=float)
    scores = source @ coupling.T
    votes = (outputs == 1).astype(int) @ (coupling == 1).T + (outputs == -1).astype(int) @ (coupling == -1).T
    return scores, votes


def winners(scores: np.ndarray) -> np.ndarray:
    """1-based argmax per row; ties go to the lowest class index."""

    return np.argmax(scores, axis=1) + 1


class SupportsPredict(Protocol):
    q: int
    feature_layout: FeatureLayout

    def predict_batch(self, X: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class MultiClassModel:
    q: int
    classifiers: Mapping[tuple[int, int], PairwiseClassifier]
    feature_layout: FeatureLayout
    trained_on: str = ""
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        expected = class_pairs(self.q)
        if sorted(self.classifiers) != expected:
            raise StructuralError(f"a {self.q}-class model needs exactly {len(expected)} pair classifiers")
        for key, classifier in self.classifiers.items():
            if classifier.pair != key:
                raise StructuralError(f"classifier for {classifier.pair} stored under {key}")
            if classifier.feature_indices[-1] > self.feature_layout.size:
                raise StructuralError(f"classifier {key} reads beyond the {self.feature_layout.size}-feature layout")
        object.__setattr__(self, "classifiers", {pair: self.classifiers[pair] for pair in expected})

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(self.classifiers)

    def _checked(self, X: np.ndarray | FeatureVector) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.feature_layout.size:
            raise DimensionError(f"input has {X.shape[1]} features, model layout has {self.feature_layout.size}")
        return X

    def pair_activations(self, X: np.ndarray) -> np.ndarray:
        X = self._checked(X)
        return np.column_stack([classifier.activations(X) for classifier in self.classifiers.values()])

    def pair_outputs(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.pair_activations(X) >= 0, 1, -1)

    def group_scores_batch(self, X: np.ndarray, mode: ScoreMode = "hard") -> tuple[np.ndarray, np.ndarray]:
        activations = self.pair_activations(X)
        outputs = np.where(activations >= 0, 1, -1)
        return couple(outputs, self.q, activations if mode == "margin" else None)

    def predict_batch(self, X: np.ndarray, mode: ScoreMode = "hard") -> np.ndarray:
        scores, _ = self.group_scores_batch(X, mode)
        return winners(scores)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "real_encoding": REAL_ENCODING,
            "class_indexing": "1-based",
            "feature_indexing": "1-based",
            "q": self.q,
            "trained_on": self.trained_on,
            "feature_layout": self.feature_layout.to_dict(),
            "classifiers": [
                {
                    "class_lo": c.class_lo,
                    "class_hi": c.class_hi,
                    "feature_indices": list(c.feature_indices),
                    "weights": [format_real(w) for w in c.weights],
                    "bias": format_real(c.bias),
                }
                for c in self.classifiers.values()
            ],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> MultiClassModel:
        if payload.get("format") != MODEL_FORMAT:
            raise StructuralError("document is not a pairnet model")
        if payload.get("class_indexing") != "1-based" or payload.get("feature_indexing") != "1-based":
            raise StructuralError("model document must declare 1-based class and feature indexing")
        if payload.get("real_encoding") != REAL_ENCODING:
            raise StructuralError(f"model document must declare real_encoding {REAL_ENCODING!r}")
        classifiers = {}
        for entry in payload["classifiers"]:
            classifier = PairwiseClassifier(
                feature_indices=tuple(entry["feature_indices"]),
                weights=np.array([float(w) for w in entry["weights"]]),
                bias=float(entry["bias"]),
                class_lo=int(entry["class_lo"]),
                class_hi=int(entry["class_hi"]),
            )
            if classifier.pair in classifiers:
                raise StructuralError(f"pair {classifier.pair} appears twice")
            classifiers[classifier.pair] = classifier
        return cls(
            q=int(payload["q"]),
            classifiers=classifiers,
            feature_layout=FeatureLayout.from_dict(payload["feature_layout"]),
            trained_on=payload.get("trained_on", ""),
            metadata=payload.get("metadata", {}),
        )


def group_scores(model: MultiClassModel, x: np.ndarray | FeatureVector, mode: ScoreMode = "hard") -> GroupScores:
    scores, votes = model.group_scores_batch(_as_matrix(x), mode)
    return GroupScores(scores=scores[0], votes=votes[0], winner=int(winners(scores)[0]))


def predict(model: MultiClassModel, x: np.ndarray | FeatureVector) -> int:
    return group_scores(model, x).winner
