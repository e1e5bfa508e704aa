import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import signal

from dsp_core import (
    FRAME_SIZE, HOP_SIZE, ErbFilterbank, SpectrumLike, as_bins,
    interpolate_band_gains,
)

logger = logging.getLogger(__name__)

MIN_PERIOD = 96
MAX_PERIOD = 768
PITCH_WINDOW = 2 * MAX_PERIOD
COMB_TAPS = (1.0, 0.65, 0.28)
COMB_HISTORY = 3
OCTAVE_RATIO = 0.9
SILENCE_ENERGY = 1e-12


@dataclass
class PitchInfo:
    """
    Pitch period and the normalized autocorrelation at that period

    Args:
        period: Period in samples
        correlation: Normalized autocorrelation in [0, 1]
    """
    period: int = MIN_PERIOD
    correlation: float = 0.0

    def __post_init__(self):
        self.period = int(self.period)
        self.correlation = float(np.clip(self.correlation, 0.0, 1.0))


def _normalized_autocorrelation(x: np.ndarray, min_period: int, max_period: int) -> np.ndarray:
    target = x[max_period:]
    width = len(target)
    cross = signal.correlate(x, target, mode='valid', method='fft')

    cumulative = np.concatenate(([0.0], np.cumsum(x * x)))
    target_energy = cumulative[-1] - cumulative[max_period]

    lags = np.arange(min_period, max_period + 1)
    starts = max_period - lags
    segment_energy = cumulative[starts + width] - cumulative[starts]
    denom = np.sqrt(target_energy * segment_energy)
    with np.errstate(divide='ignore', invalid='ignore'):
        corr = np.where(denom > SILENCE_ENERGY, cross[starts] / denom, 0.0)
    return corr


def estimate_pitch(recent_audio: np.ndarray, previous: Optional[PitchInfo] = None,
                   min_period: int = MIN_PERIOD, max_period: int = MAX_PERIOD) -> PitchInfo:
    """
    Estimate the pitch period by normalized time-domain autocorrelation

    The last max_period samples are correlated against every delay in
    [min_period, max_period]. A lag L is preferred over its double 2L when
    its correlation exceeds 0.9 times that of 2L.

    Args:
        recent_audio: At least 2*max_period most recent samples
        previous: Estimate of the previous frame, reused on silence
        min_period: Shortest period in samples
        max_period: Longest period in samples

    Returns:
        PitchInfo
    """
    recent_audio = np.asarray(recent_audio, dtype=np.float64)
    if len(recent_audio) < 2 * max_period:
        raise ValueError(f"Pitch window needs {2 * max_period} samples, got {len(recent_audio)}")
    x = recent_audio[-2 * max_period:]

    if np.sum(x * x) < SILENCE_ENERGY:
        period = previous.period if previous is not None else min_period
        return PitchInfo(period=period, correlation=0.0)

    corr = _normalized_autocorrelation(x, min_period, max_period)
    best = int(np.argmax(corr))
    best_lag = best + min_period

    # octave-error guard
    while True:
        half = int(round(best_lag / 2))
        if half < min_period or corr[half - min_period] <= OCTAVE_RATIO * corr[best_lag - min_period]:
            break
        best_lag = half

    return PitchInfo(period=best_lag, correlation=corr[best_lag - min_period])


def delayed_frame(history: np.ndarray, period: int, window: np.ndarray) -> np.ndarray:
    """
    Spectrum of the current frame delayed by one pitch period

    Args:
        history: Time-domain samples whose last len(window) samples are the current frame
        period: Delay in samples
        window: Analysis window

    Returns:
        Complex bins of the delayed, windowed segment (zeros before the history start)
    """
    frame_len = len(window)
    end = len(history) - period
    start = end - frame_len
    segment = np.zeros(frame_len)
    if end > 0:
        take = history[max(start, 0):end]
        segment[frame_len - len(take):] = take
    return np.fft.rfft(segment * window)


def pitch_coherence(spec: SpectrumLike, delayed_spec: SpectrumLike, fb: ErbFilterbank) -> np.ndarray:
    """
    Per-band normalized correlation between a frame and its pitch-delayed copy

    Args:
        spec: Frame bins (bins,) or (frames, bins)
        delayed_spec: Same shape, signal delayed by one pitch period
        fb: Filterbank

    Returns:
        Band coherences in [-1, 1]; 0 where either band norm vanishes
    """
    x = fb.check_bins(as_bins(spec))
    p = fb.check_bins(as_bins(delayed_spec))
    weights = fb.band_weights.T
    inner = np.real(x * np.conj(p)) @ weights
    norm = np.sqrt(((np.abs(x) ** 2) @ weights) * ((np.abs(p) ** 2) @ weights))
    with np.errstate(divide='ignore', invalid='ignore'):
        coherence = np.where(norm > 0.0, inner / norm, 0.0)
    return np.clip(coherence, -1.0, 1.0)


def comb_filter(spec_history: np.ndarray, period: int, strengths: np.ndarray,
                fb: ErbFilterbank, hop: int = HOP_SIZE, frame_len: int = FRAME_SIZE,
                min_period: int = MIN_PERIOD, max_period: int = MAX_PERIOD) -> np.ndarray:
    """
    Strength-controlled comb filter in the STFT domain

    The combed frame is the normalized weighted sum of the current frame
    and the frames one and two pitch periods away on either side. Each
    offset is rounded to whole hops; the residual delay is applied as a
    linear phase. The result is blended with the raw frame per bin using
    the interpolated band strengths.

    Args:
        spec_history: (2*R + 1, bins) frames centered on the current one
        period: Pitch period in samples
        strengths: Per-band strengths in [0, 1]
        fb: Filterbank
        hop: Hop size in samples
        frame_len: FFT size
        min_period: Shortest accepted period
        max_period: Longest accepted period

    Returns:
        Filtered bins of the current frame
    """
    spec_history = np.asarray(spec_history)
    if not min_period <= period <= max_period:
        raise ValueError(f"Pitch period {period} outside [{min_period}, {max_period}]")
    strengths = np.asarray(strengths, dtype=np.float64)
    if np.any(strengths < 0.0) or np.any(strengths > 1.0):
        raise ValueError("Pitch filter strengths must lie in [0, 1]")

    center = len(spec_history) // 2
    raw = spec_history[center]
    phase_step = -2j * np.pi * np.arange(spec_history.shape[1]) / frame_len

    combed = COMB_TAPS[0] * raw
    total = COMB_TAPS[0]
    for k, tap in enumerate(COMB_TAPS[1:], start=1):
        for sign in (-1, 1):
            delay = sign * k * period
            frames_away = int(np.rint(delay / hop))
            if abs(frames_away) > center:
                raise ValueError(f"Comb offset of {frames_away} frames exceeds history of {center}")
            residual = frames_away * hop - delay
            combed = combed + tap * spec_history[center + frames_away] * np.exp(phase_step * residual)
            total += tap
    combed = combed / total

    blend = interpolate_band_gains(strengths, fb)
    return (1.0 - blend) * raw + blend * combed
