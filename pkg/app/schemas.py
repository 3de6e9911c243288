"""Pydantic schemas shared across services."""
from __future__ import annotations

from datetime import datetime
from typing import Any

from pydantic import BaseModel, Field, model_validator


class PairDiagnostic(BaseModel):
    """Per-pair training outcome, one row of the diagnostics table."""

    i: int = Field(..., ge=1)
    j: int = Field(..., ge=1)
    n_features: int = Field(..., ge=0)
    train_accuracy: float = Field(..., ge=0, le=1)
    validation_accuracy: float = Field(..., ge=0, le=1)
    epochs_used: int = Field(..., ge=0)
    degenerate: bool = False

    @property
    def val_error(self) -> float:
        return 1.0 - self.validation_accuracy


class RecordDecision(BaseModel):
    """Record-level decision with the winning class's share of segment votes."""

    record_id: str
    predicted_class: int = Field(..., ge=1)
    probability: float = Field(..., ge=0, le=1)
    per_class_fractions: list[float]
    true_class: int | None = None

    @model_validator(mode="after")
    def _check_fractions(self) -> RecordDecision:
        if abs(sum(self.per_class_fractions) - 1.0) > 1e-12:
            raise ValueError("per_class_fractions must sum to 1")
        if self.probability != max(self.per_class_fractions):
            raise ValueError("probability must equal the largest class fraction")
        return self


class PartitionMetrics(BaseModel):
    segments: int
    records: int
    segment_accuracy: float
    record_accuracy: float


class ComparisonReport(BaseModel):
    """Test-partition accuracies of the three decompositions on one split."""

    seed: int
    q: int
    classifier_counts: dict[str, int]
    segment_accuracy: dict[str, float]
    record_accuracy: dict[str, float]


class RunManifest(BaseModel):
    command: str
    config: dict[str, Any] = Field(default_factory=dict)
    inputs: list[str] = Field(default_factory=list)
    outputs: list[str] = Field(default_factory=list)
    seed: int | None = None
    checksums: dict[str, str] = Field(default_factory=dict)
    started_at: datetime
    duration_seconds: float
