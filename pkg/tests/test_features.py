from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from services.errors import DoubleCorrectionError, LayoutMismatchError, StructuralError
from services.features import (
    CANONICAL_BANDS,
    LOG_FLOOR,
    FeatureLayout,
    FeatureVector,
    Segment,
    band_power,
    bba_correct,
    compute_bba,
    extract_features,
    power_spectrum,
    segment_record,
)

RATE = 100.0
BANDS = {band.name: band for band in CANONICAL_BANDS}


def tone(frequency: float, seconds: float = 10.0, amplitude: float = 1.0) -> np.ndarray:
    t = np.arange(int(RATE * seconds)) / RATE
    return amplitude * np.sin(2 * np.pi * frequency * t + 0.3)


def noisy_segment(seed: int = 0, gain: float = 1.0) -> Segment:
    rng = np.random.default_rng(seed)
    channels = np.vstack([tone(2.5) + rng.normal(size=1000), tone(10.0, amplitude=2.0) + rng.normal(size=1000)])
    return Segment(record_id="r", segment_index=0, channels=gain * channels)


@pytest.mark.parametrize("n", [1000, 999])
def test_periodogram_power_sums_to_variance(n):
    samples = np.random.default_rng(n).normal(loc=40.0, size=n)
    spectrum = power_spectrum(samples, RATE)
    assert spectrum.power.sum() == pytest.approx(np.var(samples), rel=1e-9)


@given(st.lists(st.floats(min_value=-1e3, max_value=1e3, allow_nan=False), min_size=8, max_size=256))
def test_parseval_holds_for_arbitrary_signals(values):
    samples = np.array(values)
    spectrum = power_spectrum(samples, RATE)
    assert np.isclose(spectrum.power.sum(), np.var(samples), rtol=1e-9, atol=1e-9)


def test_constant_signal_has_no_power():
    spectrum = power_spectrum(np.full(1000, 3.0), RATE)
    assert np.all(spectrum.power == 0)


def test_theta_tone_lands_in_theta():
    spectrum = power_spectrum(tone(5.0), RATE)
    total = sum(band_power(spectrum, band) for band in CANONICAL_BANDS)
    assert band_power(spectrum, BANDS["theta"]) / total > 0.99


def test_band_edges():
    edges = [(band.name, band.lo_hz, band.hi_hz) for band in CANONICAL_BANDS]
    assert edges == [
        ("subdelta", 0.0, 1.5),
        ("delta", 1.5, 3.5),
        ("theta", 3.5, 7.5),
        ("alpha", 7.5, 13.5),
        ("beta1", 13.5, 19.5),
        ("beta2", 19.5, 25.0),
    ]
    frequencies = np.array([1.5, 3.5, 7.5, 13.5, 19.5, 25.0, 25.1])
    members = np.array([[band.contains(np.array([f]))[0] for band in CANONICAL_BANDS] for f in frequencies])
    # a shared edge belongs to the upper band; 25 Hz closes beta2
    np.testing.assert_array_equal(members.sum(axis=1), [1, 1, 1, 1, 1, 1, 0])
    assert BANDS["delta"].contains(np.array([1.5]))[0]
    assert BANDS["beta2"].contains(np.array([25.0]))[0]


def test_segmentation_drops_partial_window():
    layout = FeatureLayout.eeg(RATE)
    samples = np.zeros((2, 3500))
    segments = segment_record(samples, layout, record_id="a", label=2, artifact_segments={1})
    assert [segment.segment_index for segment in segments] == [0, 1, 2]
    assert [segment.artifact for segment in segments] == [False, True, False]
    assert all(segment.channels.shape == (2, 1000) for segment in segments)
    assert segment_record(np.zeros((2, 999)), layout) == []


def test_segmentation_rejects_low_sample_rate():
    with pytest.raises(StructuralError):
        segment_record(np.zeros((2, 500)), FeatureLayout.eeg(50.0))


def test_eeg_layout_has_72_unique_features():
    layout = FeatureLayout.eeg(RATE)
    assert layout.size == 72
    assert len(set(layout.names)) == 72
    assert layout.names[0] == "c1_subdelta_log_power"
    assert layout.names[-1] == "c2_line_length"
    assert FeatureLayout.from_dict(layout.to_dict()) == layout


def test_generic_layout_needs_no_fixed_width():
    layout = FeatureLayout.generic(3)
    assert layout.names == ["f1", "f2", "f3"]
    with pytest.raises(StructuralError):
        layout.require_eeg()


def test_layout_compatibility():
    eeg = FeatureLayout.eeg(RATE)
    eeg.check_compatible(FeatureLayout.eeg(RATE))
    eeg.check_compatible(FeatureLayout.generic(72))
    with pytest.raises(LayoutMismatchError):
        eeg.check_compatible(FeatureLayout.generic(71))
    with pytest.raises(LayoutMismatchError):
        eeg.check_compatible(FeatureLayout.eeg(200.0))


def test_extracted_features_follow_layout():
    layout = FeatureLayout.eeg(RATE)
    vector = extract_features(noisy_segment(), layout)
    assert vector.values.shape == (72,)
    assert np.all(np.isfinite(vector.values))
    assert vector.values[layout.position("peak_frequency", 2, "alpha")] == 10.0
    relative = [layout.position("relative_power", 1, band.name) for band in CANONICAL_BANDS]
    assert vector.values[relative].sum() == pytest.approx(1.0)
    assert 0 <= vector.values[layout.position("zero_crossing_rate", 1)] <= 1


@pytest.mark.parametrize("gain", [0.1, 10.0])
def test_bba_correction_removes_gain(gain):
    layout = FeatureLayout.eeg(RATE)
    reference = bba_correct(extract_features(noisy_segment(), layout), layout)
    scaled = bba_correct(extract_features(noisy_segment(gain=gain), layout), layout)
    positions = [p for channel in (1, 2) for p in layout.log_power_positions(channel)]
    positions += [layout.position("total_log_power", channel) for channel in (1, 2)]
    np.testing.assert_allclose(scaled.values[positions], reference.values[positions], atol=1e-6)


def test_corrected_vector_has_zero_background():
    layout = FeatureLayout.eeg(RATE)
    corrected = bba_correct(extract_features(noisy_segment(3), layout), layout)
    np.testing.assert_allclose(compute_bba(corrected, layout), 0.0, atol=1e-12)
    assert corrected.bba_corrected


def test_correcting_twice_is_refused():
    layout = FeatureLayout.eeg(RATE)
    corrected = bba_correct(extract_features(noisy_segment(), layout), layout)
    with pytest.raises(DoubleCorrectionError):
        bba_correct(corrected, layout)


def test_feature_vector_rejects_non_finite_values():
    with pytest.raises(StructuralError):
        FeatureVector(np.array([1.0, np.nan]))


def silent_segment(first: np.ndarray | None = None) -> Segment:
    channels = np.zeros((2, int(RATE * 10)))
    if first is not None:
        channels[0] = first
    return Segment(record_id="r", segment_index=0, channels=channels)


def assert_silent_channel(values: np.ndarray, layout: FeatureLayout, channel: int) -> None:
    for band in CANONICAL_BANDS:
        assert values[layout.position("log_power", channel, band.name)] == np.log(LOG_FLOOR)
        assert values[layout.position("relative_power", channel, band.name)] == 0.0
    assert values[layout.position("total_log_power", channel)] == np.log(LOG_FLOOR)
    assert values[layout.position("zero_crossing_rate", channel)] == 0.0
    assert values[layout.position("signal_variance", channel)] == 0.0


def test_zero_segment_gets_degenerate_defaults():
    layout = FeatureLayout.eeg(RATE)
    vector = extract_features(silent_segment(), layout)
    for channel in (1, 2):
        assert_silent_channel(vector.values, layout, channel)


def test_tone_on_one_channel_and_silence_on_the_other():
    layout = FeatureLayout.eeg(RATE)
    vector = extract_features(silent_segment(tone(5.0)), layout)
    assert vector.values[layout.position("relative_power", 1, "theta")] > 0.99
    assert_silent_channel(vector.values, layout, 2)


def test_relative_powers_ignore_amplitude_scale():
    layout = FeatureLayout.eeg(RATE)
    reference = extract_features(noisy_segment(4), layout)
    scaled = extract_features(noisy_segment(4, gain=10.0), layout)
    positions = [layout.position("relative_power", c, band.name) for c in (1, 2) for band in CANONICAL_BANDS]
    np.testing.assert_allclose(scaled.values[positions], reference.values[positions], rtol=0, atol=1e-9)


def test_white_noise_band_power_follows_bandwidth():
    # subdelta loses its DC bin to mean removal and beta2 closes its upper edge
    bands = [BANDS[name] for name in ("delta", "theta", "alpha", "beta1")]
    powers = np.array(
        [
            [band_power(power_spectrum(np.random.default_rng(seed).normal(size=1000), RATE), band) for band in bands]
            for seed in range(200)
        ]
    )
    density = powers / np.array([band.hi_hz - band.lo_hz for band in bands])
    mean = density.mean(axis=0)
    stderr = density.std(axis=0, ddof=1) / np.sqrt(len(density))
    # unit-variance white noise has a one-sided density of 2 / rate per Hz
    assert np.all(np.abs(mean - 2 / RATE) <= 3 * stderr)
