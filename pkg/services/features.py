"""Segmentation, spectral band features and background-activity correction."""
from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Any, NamedTuple

import numpy as np
from scipy import signal, stats

from services.errors import DimensionError, DoubleCorrectionError, LayoutMismatchError, StructuralError

logger = logging.getLogger(__name__)

UNLABELED = 0
CHANNEL_COUNT = 2
SEGMENT_SECONDS = 10.0
LOG_FLOOR = 1e-12
MIN_SAMPLE_RATE_HZ = 50.0

BAND_STATISTICS = ("log_power", "relative_power", "spectral_variance", "peak_frequency", "spectral_entropy")
GLOBAL_STATISTICS = (
    "total_log_power",
    "signal_variance",
    "skewness",
    "kurtosis",
    "zero_crossing_rate",
    "line_length",
)


@dataclass(frozen=True)
class FrequencyBand:
    name: str
    lo_hz: float
    hi_hz: float
    closed_upper: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.lo_hz < self.hi_hz:
            raise StructuralError(f"band {self.name!r} needs 0 <= lo_hz < hi_hz, got {self.lo_hz}..{self.hi_hz}")

    def contains(self, frequencies: np.ndarray) -> np.ndarray:
        upper = frequencies <= self.hi_hz if self.closed_upper else frequencies < self.hi_hz
        return (frequencies >= self.lo_hz) & upper


CANONICAL_BANDS: tuple[FrequencyBand, ...] = (
    FrequencyBand("subdelta", 0.0, 1.5),
    FrequencyBand("delta", 1.5, 3.5),
    FrequencyBand("theta", 3.5, 7.5),
    FrequencyBand("alpha", 7.5, 13.5),
    FrequencyBand("beta1", 13.5, 19.5),
    FrequencyBand("beta2", 19.5, 25.0, closed_upper=True),
)
TOP_FREQUENCY_HZ = CANONICAL_BANDS[-1].hi_hz


@dataclass(frozen=True)
class FeatureDescriptor:
    statistic: str
    channel: int | None = None
    band: str | None = None

    @property
    def name(self) -> str:
        parts = []
        if self.channel is not None:
            parts.append(f"c{self.channel}")
        if self.band is not None:
            parts.append(self.band)
        parts.append(self.statistic)
        return "_".join(parts)


@dataclass(frozen=True)
class FeatureLayout:
    """Ordered feature descriptors plus the sampling geometry they assume.

    Layouts of kind ``eeg`` are produced by :meth:`eeg` and hold exactly 72
    entries: for each channel, five statistics in each of the six bands, then
    six whole-signal statistics per channel. Layouts of kind ``generic`` name
    columns ``f1..fn`` of tables that did not come from the extractor.
    """

    features: tuple[FeatureDescriptor, ...]
    sample_rate_hz: float = 100.0
    segment_seconds: float = SEGMENT_SECONDS
    kind: str = "eeg"

    def __post_init__(self) -> None:
        names = self.names
        if len(set(names)) != len(names):
            raise StructuralError("feature names must be unique")
        if self.kind == "eeg":
            expected = CHANNEL_COUNT * (len(CANONICAL_BANDS) * len(BAND_STATISTICS) + len(GLOBAL_STATISTICS))
            if len(self.features) != expected:
                raise StructuralError(f"an eeg layout has exactly {expected} features, got {len(self.features)}")
            if self.segment_seconds != SEGMENT_SECONDS:
                raise StructuralError(f"segments are fixed at {SEGMENT_SECONDS:g} s")
        elif self.kind != "generic":
            raise StructuralError(f"unknown layout kind {self.kind!r}")
        if not self.features:
            raise StructuralError("a layout needs at least one feature")

    @classmethod
    def eeg(cls, sample_rate_hz: float = 100.0) -> FeatureLayout:
        features: list[FeatureDescriptor] = []
        for channel in range(1, CHANNEL_COUNT + 1):
            for band in CANONICAL_BANDS:
                features.extend(FeatureDescriptor(stat, channel, band.name) for stat in BAND_STATISTICS)
        for channel in range(1, CHANNEL_COUNT + 1):
            features.extend(FeatureDescriptor(stat, channel) for stat in GLOBAL_STATISTICS)
        return cls(tuple(features), sample_rate_hz=sample_rate_hz)

    @classmethod
    def generic(cls, n_features: int, sample_rate_hz: float = 100.0) -> FeatureLayout:
        features = tuple(FeatureDescriptor(f"f{k}") for k in range(1, n_features + 1))
        return cls(features, sample_rate_hz=sample_rate_hz, kind="generic")

    @property
    def size(self) -> int:
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [descriptor.name for descriptor in self.features]

    @property
    def samples_per_segment(self) -> int:
        return int(round(self.sample_rate_hz * self.segment_seconds))

    def position(self, statistic: str, channel: int | None = None, band: str | None = None) -> int:
        """0-based column of a descriptor."""

        target = FeatureDescriptor(statistic, channel, band)
        try:
            return self.features.index(target)
        except ValueError:
            raise StructuralError(f"layout has no feature {target.name!r}") from None

    def log_power_positions(self, channel: int) -> list[int]:
        return [self.position("log_power", channel, band.name) for band in CANONICAL_BANDS]

    def require_eeg(self) -> None:
        if self.kind != "eeg":
            raise StructuralError("operation needs an eeg feature layout")

    def check_compatible(self, other: FeatureLayout) -> None:
        """Raise unless rows laid out as ``other`` can be fed to a model expecting ``self``.

        A generic table (no layout sidecar) is accepted when its width matches.
        """

        if self.size != other.size:
            raise LayoutMismatchError(f"model expects {self.size} features, table has {other.size}")
        if other.kind == "generic" or self == other:
            return
        raise LayoutMismatchError("feature layout of the table differs from the model's layout")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "sample_rate_hz": self.sample_rate_hz,
            "segment_seconds": self.segment_seconds,
            "features": [
                {"name": d.name, "channel": d.channel, "band": d.band, "statistic": d.statistic} for d in self.features
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> FeatureLayout:
        features = tuple(
            FeatureDescriptor(entry["statistic"], entry.get("channel"), entry.get("band"))
            for entry in payload["features"]
        )
        layout = cls(
            features,
            sample_rate_hz=float(payload["sample_rate_hz"]),
            segment_seconds=float(payload.get("segment_seconds", SEGMENT_SECONDS)),
            kind=payload.get("kind", "eeg"),
        )
        declared = [entry.get("name") for entry in payload["features"]]
        if any(name is not None for name in declared) and declared != layout.names:
            raise StructuralError("feature names in the layout document do not match their descriptors")
        return layout


@dataclass(frozen=True)
class RawRecord:
    """One recording: two equal-length channels sampled at the layout rate."""

    record_id: str
    label: int
    samples: np.ndarray
    artifact_segments: frozenset[int] = field(default_factory=frozenset)


@dataclass(frozen=True)
class Segment:
    record_id: str
    segment_index: int
    channels: np.ndarray
    artifact: bool = False
    label: int = UNLABELED


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    record_id: str = ""
    segment_index: int = 0
    label: int = UNLABELED
    bba_corrected: bool = False

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise DimensionError("feature values must be a flat vector")
        if not np.all(np.isfinite(values)):
            raise StructuralError("feature values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


class Spectrum(NamedTuple):
    frequencies: np.ndarray
    power: np.ndarray


def _as_channels(samples: np.ndarray | Sequence[np.ndarray]) -> np.ndarray:
    if isinstance(samples, np.ndarray) and samples.ndim == 2:
        channels = samples
    else:
        lengths = {len(channel) for channel in samples}
        if len(lengths) > 1:
            raise DimensionError(f"channels differ in length: {sorted(lengths)}")
        channels = np.vstack([np.asarray(channel, dtype=float) for channel in samples])
    if channels.shape[0] != CHANNEL_COUNT:
        raise DimensionError(f"expected {CHANNEL_COUNT} channels, got {channels.shape[0]}")
    return np.asarray(channels, dtype=float)


def segment_record(
    samples: np.ndarray | Sequence[np.ndarray],
    layout: FeatureLayout,
    *,
    record_id: str = "",
    label: int = UNLABELED,
    artifact_segments: frozenset[int] | set[int] = frozenset(),
) -> list[Segment]:
    """Cut a two-channel recording into consecutive non-overlapping 10-s windows.

    A trailing partial window is dropped; a record shorter than one window
    yields no segments.
    """

    if layout.sample_rate_hz <= MIN_SAMPLE_RATE_HZ:
        raise StructuralError(
            f"sample rate {layout.sample_rate_hz:g} Hz cannot resolve the {TOP_FREQUENCY_HZ:g} Hz top band"
        )
    channels = _as_channels(samples)
    width = layout.samples_per_segment
    count = channels.shape[1] // width
    return [
        Segment(
            record_id=record_id,
            segment_index=index,
            channels=channels[:, index * width : (index + 1) * width],
            artifact=index in artifact_segments,
            label=label,
        )
        for index in range(count)
    ]


def power_spectrum(samples: np.ndarray, sample_rate_hz: float) -> Spectrum:
    """Single-sided periodogram of the mean-removed signal.

    Powers sum to the population variance of ``samples``.
    """

    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1 or samples.size < 2:
        raise StructuralError("a spectrum needs at least 2 samples")
    if np.ptp(samples) == 0:
        frequencies = np.fft.rfftfreq(samples.size, d=1.0 / sample_rate_hz)
        return Spectrum(frequencies, np.zeros_like(frequencies))
    frequencies, power = signal.periodogram(
        samples, fs=sample_rate_hz, window="boxcar", detrend="constant", scaling="spectrum"
    )
    return Spectrum(frequencies, power)


def band_power(spectrum: Spectrum, band: FrequencyBand) -> float:
    return float(spectrum.power[band.contains(spectrum.frequencies)].sum())


def _band_statistics(spectrum: Spectrum, band: FrequencyBand, total: float) -> tuple[float, ...]:
    mask = band.contains(spectrum.frequencies)
    bins = spectrum.power[mask]
    power = float(bins.sum())
    relative = power / total if total > 0 else 0.0
    variance = float(np.var(bins)) if bins.size else 0.0
    if power > 0:
        peak = float(spectrum.frequencies[mask][np.argmax(bins)])
        entropy = float(stats.entropy(bins / power))
    else:
        peak = 0.0
        entropy = 0.0
    return np.log(power + LOG_FLOOR), relative, variance, peak, entropy


def _signal_statistics(samples: np.ndarray, total: float) -> tuple[float, ...]:
    variance = float(np.var(samples))
    if variance > 0:
        skewness = float(stats.skew(samples))
        kurtosis = float(stats.kurtosis(samples))
    else:
        skewness = kurtosis = 0.0
    negative = np.signbit(samples).astype(np.int8)
    crossings = np.count_nonzero(np.diff(negative)) / (samples.size - 1)
    line_length = float(np.mean(np.abs(np.diff(samples))))
    return np.log(total + LOG_FLOOR), variance, skewness, kurtosis, crossings, line_length


def extract_features(segment: Segment, layout: FeatureLayout) -> FeatureVector:
    layout.require_eeg()
    channels = _as_channels(segment.channels)
    if channels.shape[1] != layout.samples_per_segment:
        raise DimensionError(
            f"segment has {channels.shape[1]} samples per channel, layout expects {layout.samples_per_segment}"
        )
    if not np.all(np.isfinite(channels)):
        raise StructuralError(f"segment {segment.record_id}#{segment.segment_index} holds non-finite samples")

    band_part: list[float] = []
    global_part: list[float] = []
    for samples in channels:
        spectrum = power_spectrum(samples, layout.sample_rate_hz)
        total = sum(band_power(spectrum, band) for band in CANONICAL_BANDS)
        for band in CANONICAL_BANDS:
            band_part.extend(_band_statistics(spectrum, band, total))
        global_part.extend(_signal_statistics(samples, total))

    return FeatureVector(
        values=np.asarray(band_part + global_part),
        record_id=segment.record_id,
        segment_index=segment.segment_index,
        label=segment.label,
    )


def compute_bba(vector: FeatureVector, layout: FeatureLayout) -> np.ndarray:
    """Background activity per channel: the mean of the six log band powers."""

    layout.require_eeg()
    return np.array(
        [vector.values[layout.log_power_positions(channel)].mean() for channel in range(1, CHANNEL_COUNT + 1)]
    )


def bba_correct(vector: FeatureVector, layout: FeatureLayout) -> FeatureVector:
    """Subtract each channel's background activity from its log-power features."""

    if vector.bba_corrected:
        raise DoubleCorrectionError()
    if vector.values.size != layout.size:
        raise DimensionError(f"vector has {vector.values.size} values, layout has {layout.size}")
    values = vector.values.copy()
    for channel, bba in enumerate(compute_bba(vector, layout), start=1):
        positions = layout.log_power_positions(channel) + [layout.position("total_log_power", channel)]
        values[positions] -= bba
    return replace(vector, values=values, bba_corrected=True)
