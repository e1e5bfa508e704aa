import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from errors import ShapeError

logger = logging.getLogger(__name__)

SAMPLE_RATE = 48000
FRAME_SIZE = 960
HOP_SIZE = 480
NUM_BINS = FRAME_SIZE // 2 + 1
NUM_BANDS = 34
MAX_BAND_FREQ = 20000.0


@dataclass
class AudioBuffer:
    """
    Mono audio samples with their sample rate

    Args:
        samples: Real samples, nominally in [-1, 1]
        sample_rate: Sample rate in Hz
    """
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeError(f"AudioBuffer expects mono samples, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("AudioBuffer samples must be finite")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class FrameSpectrum:
    """
    Complex STFT bins of one frame

    Args:
        bins: Complex bins, length frame_size/2 + 1
        frame_index: Position of the frame in its stream
    """
    bins: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        self.bins = np.array(self.bins, dtype=np.complex128)
        if self.bins.ndim != 1:
            raise ShapeError(f"FrameSpectrum expects a 1-D bin vector, got shape {self.bins.shape}")
        # rfft guarantees this; hand-built spectra must respect it too
        self.bins[0] = self.bins[0].real
        self.bins[-1] = self.bins[-1].real


SpectrumLike = Union[FrameSpectrum, np.ndarray]


def as_bins(spec: SpectrumLike) -> np.ndarray:
    """Return the raw bin array of a FrameSpectrum or pass an array through"""
    if isinstance(spec, FrameSpectrum):
        return spec.bins
    return np.asarray(spec)


def vorbis_window(frame_len: int = FRAME_SIZE) -> np.ndarray:
    """
    Power-complementary Vorbis window

    Args:
        frame_len: Window length in samples, even and positive

    Returns:
        Window weights w(n) = sin(pi/2 * sin^2(pi*n/frame_len))
    """
    if frame_len <= 0 or frame_len % 2:
        raise ValueError(f"frame_len must be even and positive, got {frame_len}")
    n = np.arange(frame_len)
    return np.sin(0.5 * np.pi * np.sin(np.pi * n / frame_len) ** 2)


def num_frames(num_samples: int, hop: int = HOP_SIZE) -> int:
    """Frame count produced by stft for a signal of num_samples samples"""
    return -(-num_samples // hop)


def stft(audio: Union[AudioBuffer, np.ndarray], frame_len: int = FRAME_SIZE,
         hop: int = HOP_SIZE) -> np.ndarray:
    """
    Windowed short-time Fourier transform

    A half frame of zeros is prepended so that frame t covers padded
    samples [t*hop, t*hop + frame_len); the tail is zero padded as needed.

    Args:
        audio: AudioBuffer (48 kHz) or a 1-D sample array
        frame_len: Frame length in samples
        hop: Hop size in samples

    Returns:
        Complex array of shape (frames, frame_len/2 + 1), one FrameSpectrum per row
    """
    if isinstance(audio, AudioBuffer):
        if audio.sample_rate != SAMPLE_RATE:
            raise ValueError(f"stft expects {SAMPLE_RATE} Hz audio, got {audio.sample_rate} Hz")
        samples = audio.samples
    else:
        samples = np.asarray(audio, dtype=np.float64)

    count = num_frames(len(samples), hop)
    if count == 0:
        return np.zeros((0, frame_len // 2 + 1), dtype=np.complex128)

    padded = np.zeros(count * hop + frame_len)
    padded[frame_len // 2:frame_len // 2 + len(samples)] = samples
    index = np.arange(count)[:, None] * hop + np.arange(frame_len)[None, :]
    return np.fft.rfft(padded[index] * vorbis_window(frame_len), axis=-1)


def synthesize_frame(bins: SpectrumLike, window: np.ndarray) -> np.ndarray:
    """Inverse transform of one frame followed by the synthesis window"""
    return np.fft.irfft(as_bins(bins), n=len(window)) * window


def istft(spectra: np.ndarray, hop: int = HOP_SIZE, center: bool = True,
          length: Optional[int] = None) -> np.ndarray:
    """
    Windowed overlap-add synthesis

    Args:
        spectra: Complex array (frames, bins) or a sequence of FrameSpectrum
        hop: Hop size in samples
        center: Drop the half-frame pad that stft prepends
        length: Trim or zero-pad the result to this many samples

    Returns:
        Reconstructed samples
    """
    if len(spectra) and isinstance(spectra[0], FrameSpectrum):
        sizes = {len(spec.bins) for spec in spectra}
        if len(sizes) != 1:
            raise ShapeError(f"Mismatched frame sizes in istft input: {sorted(sizes)}")
        spectra = np.stack([spec.bins for spec in spectra])
    spectra = np.asarray(spectra)
    if spectra.ndim != 2:
        raise ShapeError(f"istft expects (frames, bins), got shape {spectra.shape}")

    frame_len = 2 * (spectra.shape[1] - 1)
    if frame_len != 2 * hop:
        raise ShapeError(f"istft supports 50% overlap only: frame {frame_len}, hop {hop}")

    count = spectra.shape[0]
    window = vorbis_window(frame_len)
    output = np.zeros(count * hop + frame_len - hop)
    if count:
        frames = np.fft.irfft(spectra, n=frame_len, axis=-1) * window
        for t in range(count):
            output[t * hop:t * hop + frame_len] += frames[t]

    if center:
        output = output[frame_len // 2:]
    if length is not None:
        if len(output) >= length:
            output = output[:length]
        else:
            output = np.pad(output, (0, length - len(output)))
    return output


def erb_rate(freq_hz: np.ndarray) -> np.ndarray:
    """Glasberg & Moore ERB-rate of a frequency in Hz"""
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(freq_hz, dtype=np.float64))


def erb_rate_to_hz(erbs: np.ndarray) -> np.ndarray:
    """Inverse of erb_rate"""
    return (10.0 ** (np.asarray(erbs, dtype=np.float64) / 21.4) - 1.0) / 0.00437


@dataclass
class ErbFilterbank:
    """
    Triangular ERB-spaced filterbank over STFT bins

    Args:
        band_weights: Non-negative weights, shape (num_bands, num_bins)
        band_centers: Band center frequencies in Hz
        sample_rate: Sample rate the bins refer to
    """
    band_weights: np.ndarray
    band_centers: np.ndarray
    sample_rate: int = SAMPLE_RATE
    bin_freqs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        num_bins = self.band_weights.shape[1]
        self.bin_freqs = np.arange(num_bins) * self.sample_rate / (2.0 * (num_bins - 1))

    @property
    def num_bands(self) -> int:
        return self.band_weights.shape[0]

    @property
    def num_bins(self) -> int:
        return self.band_weights.shape[1]

    @property
    def band_areas(self) -> np.ndarray:
        return self.band_weights.sum(axis=1)

    def check_bins(self, bins: np.ndarray) -> np.ndarray:
        if bins.shape[-1] != self.num_bins:
            raise ShapeError(f"Spectrum has {bins.shape[-1]} bins, filterbank expects {self.num_bins}")
        return bins


def design_erb_filterbank(num_bands: int = NUM_BANDS, fs: int = SAMPLE_RATE,
                          fmax: float = MAX_BAND_FREQ,
                          frame_len: int = FRAME_SIZE) -> ErbFilterbank:
    """
    Build the triangular ERB filterbank

    Band centers are equally spaced on the ERB-rate scale between 0 Hz
    and fmax. Each band rises from the previous center and falls to the
    next one; band 0 is flat below its center and the last band is flat
    above fmax, so the weights sum to one at every bin.

    Args:
        num_bands: Number of bands, at least 2
        fs: Sample rate in Hz
        fmax: Center of the last band in Hz
        frame_len: FFT size the bins come from

    Returns:
        ErbFilterbank
    """
    if num_bands < 2:
        raise ValueError(f"num_bands must be at least 2, got {num_bands}")
    if fmax > fs / 2:
        raise ValueError(f"fmax {fmax} Hz exceeds the Nyquist frequency {fs / 2} Hz")

    centers = erb_rate_to_hz(np.linspace(0.0, erb_rate(fmax), num_bands))
    centers[0] = 0.0
    centers[-1] = fmax

    num_bins = frame_len // 2 + 1
    freqs = np.arange(num_bins) * fs / frame_len
    weights = np.zeros((num_bands, num_bins))
    for b in range(num_bands - 1):
        lo, hi = centers[b], centers[b + 1]
        inside = (freqs >= lo) & (freqs < hi)
        frac = (freqs[inside] - lo) / (hi - lo)
        weights[b, inside] = 1.0 - frac
        weights[b + 1, inside] = frac
    weights[0, freqs < centers[0]] = 1.0
    weights[-1, freqs >= centers[-1]] = 1.0

    logger.debug("Designed %d-band ERB filterbank up to %.0f Hz", num_bands, fmax)
    return ErbFilterbank(band_weights=weights, band_centers=centers, sample_rate=fs)


def band_energies(spec: SpectrumLike, fb: ErbFilterbank) -> np.ndarray:
    """
    Band-weighted spectral energy

    Args:
        spec: One frame (bins,) or several frames (frames, bins)
        fb: Filterbank

    Returns:
        Energies with the bin axis replaced by the band axis
    """
    bins = fb.check_bins(as_bins(spec))
    return (np.abs(bins) ** 2) @ fb.band_weights.T


def band_complex_norms(spec: SpectrumLike, fb: ErbFilterbank):
    """
    Band-weighted L2 norms of the real and imaginary parts

    Args:
        spec: One frame (bins,) or several frames (frames, bins)
        fb: Filterbank

    Returns:
        (real_norms, imag_norms)
    """
    bins = fb.check_bins(as_bins(spec))
    real_norms = np.sqrt((bins.real ** 2) @ fb.band_weights.T)
    imag_norms = np.sqrt((bins.imag ** 2) @ fb.band_weights.T)
    return real_norms, imag_norms


def interpolate_band_gains(band_gains: np.ndarray, fb: ErbFilterbank) -> np.ndarray:
    """
    Expand per-band values to per-bin values by triangular interpolation

    Args:
        band_gains: (bands,) or (frames, bands)
        fb: Filterbank

    Returns:
        Per-bin values
    """
    band_gains = np.asarray(band_gains, dtype=np.float64)
    if band_gains.shape[-1] != fb.num_bands:
        raise ShapeError(f"Expected {fb.num_bands} band values, got {band_gains.shape[-1]}")
    return band_gains @ fb.band_weights


def apply_bin_gains(spec: SpectrumLike, gains: np.ndarray) -> np.ndarray:
    """
    Scale every bin by a real, non-negative gain

    Args:
        spec: Frame bins
        gains: Per-bin gains with the same shape

    Returns:
        Scaled bins
    """
    bins = as_bins(spec)
    gains = np.asarray(gains, dtype=np.float64)
    if gains.shape != bins.shape:
        raise ShapeError(f"Gain shape {gains.shape} does not match spectrum shape {bins.shape}")
    if np.any(gains < 0):
        raise ValueError("Bin gains must be non-negative")
    return bins * gains
