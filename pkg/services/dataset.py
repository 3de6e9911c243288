"""Labeled segment feature tables grouped by record."""
from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass, field, replace

import numpy as np

from services.errors import DimensionError, DoubleCorrectionError, MissingClassError, StructuralError
from services.features import (
    UNLABELED,
    FeatureLayout,
    FeatureVector,
    RawRecord,
    bba_correct,
    extract_features,
    segment_record,
)

logger = logging.getLogger(__name__)

TRAIN = "train"
TEST = "test"


@dataclass(frozen=True, eq=False)
class SegmentDataset:
    """Feature rows with their record ids, segment indices, labels and partition tags.

    Rows are kept in insertion order. ``labels`` are 1-based class indices, or
    ``UNLABELED``; ``partitions`` holds ``"train"`` or ``"test"`` per row.
    """

    values: np.ndarray
    labels: np.ndarray
    record_ids: np.ndarray
    segment_indices: np.ndarray
    layout: FeatureLayout
    partitions: np.ndarray | None = None
    bba_corrected: bool = False
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            values = values.reshape(-1, self.layout.size)
        if values.shape[1] != self.layout.size:
            raise DimensionError(f"rows have {values.shape[1]} features, layout has {self.layout.size}")
        n = values.shape[0]
        partitions = self.partitions if self.partitions is not None else np.full(n, TRAIN)
        columns = {
            "values": values,
            "labels": np.asarray(self.labels, dtype=int),
            "record_ids": np.asarray(self.record_ids, dtype=str),
            "segment_indices": np.asarray(self.segment_indices, dtype=int),
            "partitions": np.asarray(partitions, dtype=str),
        }
        for name, column in columns.items():
            if column.shape[0] != n:
                raise DimensionError(f"{name} has {column.shape[0]} rows, expected {n}")
            object.__setattr__(self, name, column)

    @classmethod
    def from_vectors(
        cls, vectors: Iterable[FeatureVector], layout: FeatureLayout, *, warnings: tuple[str, ...] = ()
    ) -> SegmentDataset:
        vectors = list(vectors)
        corrected = {vector.bba_corrected for vector in vectors}
        if len(corrected) > 1:
            raise StructuralError("cannot mix BBA-corrected and uncorrected vectors")
        return cls(
            values=np.array([vector.values for vector in vectors]).reshape(len(vectors), layout.size),
            labels=np.array([vector.label for vector in vectors], dtype=int),
            record_ids=np.array([vector.record_id for vector in vectors], dtype=str),
            segment_indices=np.array([vector.segment_index for vector in vectors], dtype=int),
            layout=layout,
            bba_corrected=corrected == {True},
            warnings=warnings,
        )

    @classmethod
    def from_records(
        cls, records: Iterable[RawRecord], layout: FeatureLayout, *, correct_bba: bool = False
    ) -> SegmentDataset:
        """Segment and featurise raw records; artifact-flagged segments are left out."""

        vectors: list[FeatureVector] = []
        excluded = 0
        for record in records:
            for segment in segment_record(
                record.samples,
                layout,
                record_id=record.record_id,
                label=record.label,
                artifact_segments=record.artifact_segments,
            ):
                if segment.artifact:
                    excluded += 1
                    continue
                vector = extract_features(segment, layout)
                vectors.append(bba_correct(vector, layout) if correct_bba else vector)
        if excluded:
            logger.warning("Excluded %d artifact-flagged segments", excluded)
        logger.info("Featurised %d segments", len(vectors))
        dataset = cls.from_vectors(vectors, layout)
        return replace(dataset, bba_corrected=correct_bba)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def classes(self) -> list[int]:
        return sorted(int(label) for label in np.unique(self.labels) if label != UNLABELED)

    def _subset(self, mask: np.ndarray) -> SegmentDataset:
        return replace(
            self,
            values=self.values[mask],
            labels=self.labels[mask],
            record_ids=self.record_ids[mask],
            segment_indices=self.segment_indices[mask],
            partitions=self.partitions[mask],
        )

    def partition(self, name: str) -> SegmentDataset:
        return self._subset(self.partitions == name)

    def with_partitions(self, partitions: np.ndarray, warnings: tuple[str, ...] = ()) -> SegmentDataset:
        return replace(self, partitions=np.asarray(partitions, dtype=str), warnings=self.warnings + warnings)

    def rows_of(self, label: int) -> np.ndarray:
        return self.values[self.labels == label]

    def require_classes(self, classes: Iterable[int], partition: str = TRAIN) -> None:
        present = set(self.classes)
        for label in classes:
            if label not in present:
                raise MissingClassError(label, partition)

    def record_labels(self) -> dict[str, int]:
        """Label of every record; a record whose segments disagree is rejected."""

        labels: dict[str, int] = {}
        for record_id, label in zip(self.record_ids, self.labels, strict=True):
            previous = labels.setdefault(str(record_id), int(label))
            if previous != label:
                raise StructuralError(f"record {record_id} carries more than one label")
        return labels

def build_dataset(records: Iterable[RawRecord], layout: FeatureLayout, *, correct_bba: bool = False) -> SegmentDataset:
    return SegmentDataset.from_records(records, layout, correct_bba=correct_bba)


def correct_dataset(dataset: SegmentDataset) -> SegmentDataset:
    """BBA-correct every row of an uncorrected eeg feature table."""

    if dataset.bba_corrected:
        raise DoubleCorrectionError()
    dataset.layout.require_eeg()
    values = np.array(
        [bba_correct(FeatureVector(row), dataset.layout).values for row in dataset.values]
    ).reshape(len(dataset), dataset.layout.size)
    return replace(dataset, values=values, bba_corrected=True)
