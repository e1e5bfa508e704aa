#!/usr/bin/env python3
"""
Tests for the STFT, the Vorbis window and the ERB filterbank
"""

import sys

import numpy as np
import pytest

from dsp_core import (
    FRAME_SIZE, HOP_SIZE, NUM_BANDS, NUM_BINS, AudioBuffer, FrameSpectrum, apply_bin_gains,
    band_complex_norms, band_energies, design_erb_filterbank, erb_rate, erb_rate_to_hz,
    interpolate_band_gains, istft, num_frames, stft, vorbis_window,
)
from errors import ShapeError
from testing_support import collect, energy_db, run_suite

FB = design_erb_filterbank()


def test_vorbis_window_endpoints():
    w = vorbis_window(FRAME_SIZE)
    assert w[0] == 0.0
    assert w[FRAME_SIZE // 2] == pytest.approx(1.0, abs=1e-15)


def test_vorbis_window_power_complementary():
    w = vorbis_window(FRAME_SIZE)
    deviation = np.abs(w[:HOP_SIZE] ** 2 + w[HOP_SIZE:] ** 2 - 1.0)
    assert deviation.max() < 1e-12


def test_vorbis_window_rejects_odd_length():
    with pytest.raises(ValueError):
        vorbis_window(961)


def test_stft_shapes():
    assert stft(np.zeros(0)).shape == (0, NUM_BINS)
    assert stft(np.zeros(1000)).shape == (num_frames(1000), NUM_BINS)
    assert num_frames(960) == 2
    assert num_frames(961) == 3


def test_stft_of_silence_is_zero():
    assert not np.any(stft(np.zeros(4800)))


def test_stft_sinusoid_peak_bin():
    t = np.arange(48000) / 48000.0
    spectra = stft(np.sin(2 * np.pi * 1000.0 * t))
    peaks = np.argmax(np.abs(spectra[2:-2]), axis=1)
    assert np.all(peaks == 20)


def test_stft_rejects_other_sample_rates():
    with pytest.raises(ValueError):
        stft(AudioBuffer(np.zeros(1600), sample_rate=16000))


def test_round_trip_interior():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.standard_normal(int(rng.integers(5000, 20000)))
        y = istft(stft(x), length=len(x))
        interior = slice(FRAME_SIZE, len(x) - FRAME_SIZE)
        assert energy_db(x[interior] - y[interior]) - energy_db(x[interior]) < -60.0


def test_istft_zero_and_single_frame():
    assert not np.any(istft(np.zeros((5, NUM_BINS), dtype=complex)))

    rng = np.random.default_rng(1)
    bins = np.fft.rfft(rng.standard_normal(FRAME_SIZE))
    out = istft(bins[None], center=False)
    expected = np.fft.irfft(bins, n=FRAME_SIZE) * vorbis_window(FRAME_SIZE)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_istft_accepts_frame_spectra():
    rng = np.random.default_rng(2)
    spectra = stft(rng.standard_normal(4800))
    frames = [FrameSpectrum(row, i) for i, row in enumerate(spectra)]
    np.testing.assert_allclose(istft(frames), istft(spectra), atol=1e-12)


def test_istft_rejects_mismatched_frames():
    with pytest.raises(ShapeError):
        istft([FrameSpectrum(np.zeros(NUM_BINS)), FrameSpectrum(np.zeros(257))])


def test_frame_spectrum_forces_real_edges():
    spec = FrameSpectrum(np.full(NUM_BINS, 1 + 1j))
    assert spec.bins[0].imag == 0.0 and spec.bins[-1].imag == 0.0
    assert spec.bins[1] == 1 + 1j


def test_audio_buffer_validation():
    with pytest.raises(ShapeError):
        AudioBuffer(np.zeros((100, 2)))
    with pytest.raises(ValueError):
        AudioBuffer(np.array([0.0, np.nan]))
    assert AudioBuffer(np.zeros(48000)).duration == pytest.approx(1.0)


def test_erb_rate_inverse():
    freqs = np.array([0.0, 100.0, 1000.0, 20000.0])
    np.testing.assert_allclose(erb_rate_to_hz(erb_rate(freqs)), freqs, atol=1e-9)


def test_filterbank_layout():
    assert FB.num_bands == NUM_BANDS
    assert FB.num_bins == NUM_BINS
    assert FB.band_centers[0] == 0.0
    assert FB.band_centers[-1] == 20000.0
    assert np.all(np.diff(FB.band_centers) > 0)
    assert np.all(FB.band_weights >= 0)


def test_filterbank_partition_of_unity():
    assert np.abs(FB.band_weights.sum(axis=0) - 1.0).max() < 1e-9


def test_band_energies():
    assert not np.any(band_energies(np.zeros(NUM_BINS), FB))
    flat = np.ones(NUM_BINS, dtype=complex)
    np.testing.assert_allclose(band_energies(flat, FB), FB.band_areas, atol=1e-12)

    rng = np.random.default_rng(3)
    spec = rng.standard_normal(NUM_BINS) + 1j * rng.standard_normal(NUM_BINS)
    assert band_energies(spec, FB).sum() == pytest.approx(np.sum(np.abs(spec) ** 2), rel=1e-12)


def test_band_energies_rejects_wrong_bins():
    with pytest.raises(ShapeError):
        band_energies(np.ones(257), FB)


def test_band_complex_norms():
    rng = np.random.default_rng(4)
    real_only = rng.standard_normal(NUM_BINS).astype(complex)
    assert not np.any(band_complex_norms(real_only, FB)[1])

    spec = rng.standard_normal(NUM_BINS) + 1j * rng.standard_normal(NUM_BINS)
    real_norms, imag_norms = band_complex_norms(spec, FB)
    scaled_real, scaled_imag = band_complex_norms(3.0 * spec, FB)
    np.testing.assert_allclose(scaled_real, 3.0 * real_norms, rtol=1e-12)
    np.testing.assert_allclose(scaled_imag, 3.0 * imag_norms, rtol=1e-12)

    for b in range(NUM_BANDS):
        naive_real = np.sqrt(sum(FB.band_weights[b, k] * spec[k].real ** 2 for k in range(NUM_BINS)))
        naive_imag = np.sqrt(sum(FB.band_weights[b, k] * spec[k].imag ** 2 for k in range(NUM_BINS)))
        assert real_norms[b] == pytest.approx(naive_real, abs=1e-12)
        assert imag_norms[b] == pytest.approx(naive_imag, abs=1e-12)


def test_interpolate_band_gains():
    np.testing.assert_allclose(interpolate_band_gains(np.ones(NUM_BANDS), FB), 1.0, atol=1e-12)
    assert not np.any(interpolate_band_gains(np.zeros(NUM_BANDS), FB))
    single = np.zeros(NUM_BANDS)
    single[7] = 1.0
    np.testing.assert_allclose(interpolate_band_gains(single, FB), FB.band_weights[7])
    with pytest.raises(ShapeError):
        interpolate_band_gains(np.ones(10), FB)


def test_apply_bin_gains():
    rng = np.random.default_rng(5)
    spec = rng.standard_normal(NUM_BINS) + 1j * rng.standard_normal(NUM_BINS)
    np.testing.assert_array_equal(apply_bin_gains(spec, np.ones(NUM_BINS)), spec)
    assert not np.any(apply_bin_gains(spec, np.zeros(NUM_BINS)))
    half = apply_bin_gains(spec, np.full(NUM_BINS, 0.5))
    np.testing.assert_allclose(np.abs(half), 0.5 * np.abs(spec))
    np.testing.assert_allclose(np.angle(half), np.angle(spec))
    with pytest.raises(ValueError):
        apply_bin_gains(spec, -np.ones(NUM_BINS))


if __name__ == "__main__":
    sys.exit(0 if run_suite("DSP core", collect(globals())) else 1)
