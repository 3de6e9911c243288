"""Synthetic two-channel corpora with age-like spectral classes and background gain drift."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from app.config import SyntheticSpec
from services.dataset import TEST, TRAIN, SegmentDataset
from services.errors import StructuralError
from services.features import CANONICAL_BANDS, CHANNEL_COUNT, SEGMENT_SECONDS, FeatureLayout, RawRecord

logger = logging.getLogger(__name__)

# Youngest-class amplitudes per band and their log-amplitude change towards the oldest class.
BASE_AMPLITUDES = np.array([40.0, 25.0, 12.0, 6.0, 3.0, 1.5])
LOG_SLOPES = np.array([-0.9, -0.6, 0.3, 0.9, 0.7, 0.5])
LOG_BENDS = np.array([0.0, 0.0, 0.4, -0.3, 0.0, 0.0])
ARTIFACT_GAIN = 20.0


def default_profile(q: int) -> np.ndarray:
    """q × 6 band amplitudes drifting smoothly with class index."""

    t = np.linspace(0.0, 1.0, q)[:, np.newaxis]
    return BASE_AMPLITUDES * np.exp(LOG_SLOPES * t + LOG_BENDS * 4 * t * (1 - t))


def class_profile(spec: SyntheticSpec) -> np.ndarray:
    if spec.class_band_profile is not None:
        return np.asarray(spec.class_band_profile, dtype=float)
    return default_profile(spec.q)


def tone_frequencies(seconds: float = SEGMENT_SECONDS) -> np.ndarray:
    """Band centres snapped to the segment frequency grid, so every tone fits whole cycles."""

    centres = np.array([(band.lo_hz + band.hi_hz) / 2 for band in CANONICAL_BANDS])
    return np.round(centres * seconds) / seconds


def _phases() -> np.ndarray:
    bands = np.arange(1, len(CANONICAL_BANDS) + 1)
    return np.vstack([0.7 * bands + 1.3 * channel for channel in range(CHANNEL_COUNT)])


@dataclass(frozen=True, eq=False)
class SyntheticCorpus:
    spec: SyntheticSpec
    seed: int
    records: tuple[RawRecord, ...]
    profile: np.ndarray
    gain_curves: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def layout(self) -> FeatureLayout:
        return FeatureLayout.eeg(self.spec.sample_rate_hz)

    def to_dataset(self, *, correct_bba: bool = False) -> SegmentDataset:
        return SegmentDataset.from_records(self.records, self.layout, correct_bba=correct_bba)


def _record(
    spec: SyntheticSpec, profile: np.ndarray, seed: int, label: int, index: int
) -> tuple[RawRecord, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(label, index)))
    width = int(round(spec.sample_rate_hz * SEGMENT_SECONDS))
    t = np.arange(width) / spec.sample_rate_hz
    frequencies = tone_frequencies()
    phases = _phases()
    tones = np.sin(2 * np.pi * frequencies[np.newaxis, :, np.newaxis] * t + phases[:, :, np.newaxis])
    channel_gain = np.array([1.0, spec.channel_asymmetry])[:, np.newaxis]

    log_gain = np.cumsum(spec.bba_drift * rng.standard_normal(spec.segments_per_record))
    gains = np.exp(log_gain)
    artifacts: set[int] = set()
    segments = []
    for s in range(spec.segments_per_record):
        jitter = np.exp(spec.overlap * rng.standard_normal((CHANNEL_COUNT, len(CANONICAL_BANDS))))
        amplitudes = profile[label - 1] * channel_gain * jitter * gains[s]
        samples = np.einsum("cb,cbn->cn", amplitudes, tones)
        samples = samples + spec.noise_floor * rng.standard_normal(samples.shape)
        if rng.random() < spec.artifact_rate:
            start = int(rng.integers(0, width - int(spec.sample_rate_hz)))
            burst = slice(start, start + int(spec.sample_rate_hz))
            burst_scale = ARTIFACT_GAIN * profile[label - 1].max()
            samples[:, burst] += burst_scale * rng.standard_normal((CHANNEL_COUNT, int(spec.sample_rate_hz)))
            artifacts.add(s)
        segments.append(samples)

    record = RawRecord(
        record_id=f"c{label:02d}r{index:02d}",
        label=label,
        samples=np.hstack(segments),
        artifact_segments=frozenset(artifacts),
    )
    return record, gains


def generate_corpus(spec: SyntheticSpec, seed: int | None = None) -> SyntheticCorpus:
    """Build ``records_per_class`` records for each of the q classes.

    Each record is a concatenation of 10-s segments. A segment's channels sum
    one tone per band with amplitude = class profile × per-segment jitter
    (``overlap``) × the record's gain random walk (``bba_drift``), plus white
    noise (``noise_floor``). Records draw from independent seeded streams.
    """

    seed = spec.seed if seed is None else seed
    profile = class_profile(spec)
    records: list[RawRecord] = []
    gain_curves: dict[str, np.ndarray] = {}
    for label in range(1, spec.q + 1):
        for index in range(1, spec.records_per_class + 1):
            record, gains = _record(spec, profile, seed, label, index)
            records.append(record)
            gain_curves[record.record_id] = gains
    logger.info(
        "Generated %d records of %d segments for %d classes", len(records), spec.segments_per_record, spec.q
    )
    return SyntheticCorpus(spec=spec, seed=seed, records=tuple(records), profile=profile, gain_curves=gain_curves)


def split_by_record(dataset: SegmentDataset, test_fraction: float = 1 / 3, seed: int = 0) -> SegmentDataset:
    """Assign whole records to train or test, stratified by class.

    A class with a single record keeps it in train and a warning is recorded.
    """

    if not 0 < test_fraction < 1:
        raise StructuralError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    by_class: dict[int, list[str]] = {}
    for record_id, label in dataset.record_labels().items():
        by_class.setdefault(label, []).append(record_id)

    rng = np.random.default_rng(seed)
    test_ids: set[str] = set()
    warnings: list[str] = []
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        if len(ids) == 1:
            message = f"class {label} has a single record ({ids[0]}); it stays in train"
            logger.warning(message)
            warnings.append(message)
            continue
        n_test = min(max(int(np.floor(test_fraction * len(ids) + 0.5)), 1), len(ids) - 1)
        order = rng.permutation(len(ids))
        test_ids.update(ids[k] for k in order[:n_test])

    partitions = np.where(np.isin(dataset.record_ids, sorted(test_ids)), TEST, TRAIN)
    return dataset.with_partitions(partitions, tuple(warnings))
