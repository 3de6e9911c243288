from __future__ import annotations

import numpy as np
import pytest

from app.config import Settings, SyntheticSpec, TrainConfig, get_settings
from services.datagen import SyntheticCorpus, generate_corpus
from services.dataset import SegmentDataset
from services.features import FeatureLayout
from services.network import MultiClassModel, PairwiseClassifier, class_pairs


@pytest.fixture
def settings(tmp_path, monkeypatch) -> Settings:
    """Settings pointing at a throwaway data directory and run registry."""

    monkeypatch.setenv("PAIRNET_DATA_DIRECTORY", str(tmp_path / "data"))
    monkeypatch.setenv("PAIRNET_DATABASE_URL", f"sqlite:///{tmp_path / 'registry.db'}")
    get_settings.cache_clear()
    yield get_settings()
    get_settings.cache_clear()


@pytest.fixture(scope="session")
def small_spec() -> SyntheticSpec:
    return SyntheticSpec(q=3, records_per_class=3, segments_per_record=4, overlap=0.05, bba_drift=0.05, seed=7)


@pytest.fixture(scope="session")
def small_corpus(small_spec) -> SyntheticCorpus:
    return generate_corpus(small_spec)


@pytest.fixture(scope="session")
def small_dataset(small_corpus) -> SegmentDataset:
    return small_corpus.to_dataset(correct_bba=True)


@pytest.fixture
def fast_config() -> TrainConfig:
    return TrainConfig(epochs=60, epoch_patience=15, max_features=6, seed=3)


def threshold_model(q: int) -> MultiClassModel:
    """1-feature model whose class k owns the interval around x = k."""

    classifiers = {
        (a, b): PairwiseClassifier(
            feature_indices=(1,), weights=np.array([-1.0]), bias=(a + b) / 2, class_lo=a, class_hi=b
        )
        for a, b in class_pairs(q)
    }
    return MultiClassModel(q=q, classifiers=classifiers, feature_layout=FeatureLayout.generic(1))


def labeled_table(values: np.ndarray, labels: np.ndarray, segments_per_record: int = 1) -> SegmentDataset:
    """Generic-layout dataset with consecutive rows grouped into records of one label."""

    values = np.asarray(values, dtype=float).reshape(len(labels), -1)
    record_ids = [f"r{index // segments_per_record:03d}" for index in range(len(labels))]
    return SegmentDataset(
        values=values,
        labels=np.asarray(labels),
        record_ids=np.array(record_ids),
        segment_indices=np.arange(len(labels)) % segments_per_record,
        layout=FeatureLayout.generic(values.shape[1]),
    )
