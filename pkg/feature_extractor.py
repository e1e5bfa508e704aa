import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from dsp_core import (
    FRAME_SIZE, HOP_SIZE, NUM_BANDS, ErbFilterbank, SpectrumLike, as_bins,
    band_complex_norms, band_energies, design_erb_filterbank, num_frames,
    stft, vorbis_window,
)
from errors import ShapeError
from pitch_filter import (
    MAX_PERIOD, PITCH_WINDOW, PitchInfo, delayed_frame, estimate_pitch,
    pitch_coherence,
)

logger = logging.getLogger(__name__)

FO_DIM = 2 * NUM_BANDS + 2
FC_DIM = 2 * NUM_BANDS
LOG_EPS = 1e-9
DEGENERATE_NORM = 1e-12
STRENGTH_EPS = 1e-9
SNR_DB_LOW = -10.0
SNR_DB_HIGH = 30.0

CACHE_MAGIC = b"PCPF"
CACHE_VERSION = 1
RECORD_LEN = FO_DIM + FC_DIM + 3 * NUM_BANDS + 1
_CACHE_HEADER = struct.Struct('<4sHH')


@dataclass
class FeatureFrame:
    """
    Network input for one frame

    Args:
        f_o: 70 hand-crafted values (log band energies, pitch coherences,
             normalized period, pitch correlation)
        f_c: 68 log-compressed real and imaginary band norms
    """
    f_o: np.ndarray
    f_c: np.ndarray

    def __post_init__(self):
        if self.f_o.shape[-1] != FO_DIM or self.f_c.shape[-1] != FC_DIM:
            raise ShapeError(f"Feature sizes must be {FO_DIM} and {FC_DIM}, "
                             f"got {self.f_o.shape[-1]} and {self.f_c.shape[-1]}")


@dataclass
class TrainTarget:
    """
    Ground truth for one frame, every component in [0, 1]

    Args:
        g_r: Real-part band gains
        g_i: Imaginary-part band gains
        r: Pitch filter strengths
        snr: Normalized frame SNR
    """
    g_r: np.ndarray
    g_i: np.ndarray
    r: np.ndarray
    snr: float


@dataclass
class FrameAnalysis:
    """Everything the analyzer derives from one noisy frame"""
    spectrum: np.ndarray
    delayed: np.ndarray
    pitch: PitchInfo
    coherence: np.ndarray
    features: FeatureFrame


@dataclass
class UtteranceFeatures:
    """
    Features and targets of a whole utterance, one row per frame

    Args:
        f_o: (frames, 70)
        f_c: (frames, 68)
        g_r, g_i, r: (frames, 34)
        snr: (frames,)
    """
    f_o: np.ndarray
    f_c: np.ndarray
    g_r: np.ndarray
    g_i: np.ndarray
    r: np.ndarray
    snr: np.ndarray

    def __len__(self) -> int:
        return len(self.f_o)

    def records(self) -> np.ndarray:
        """Flatten into the (frames, RECORD_LEN) cache layout"""
        return np.concatenate(
            [self.f_o, self.f_c, self.g_r, self.g_i, self.r, self.snr[:, None]], axis=1
        )

    @classmethod
    def from_records(cls, records: np.ndarray) -> 'UtteranceFeatures':
        records = np.asarray(records, dtype=np.float64)
        edges = np.cumsum([FO_DIM, FC_DIM, NUM_BANDS, NUM_BANDS, NUM_BANDS])
        f_o, f_c, g_r, g_i, r, snr = np.split(records, edges, axis=1)
        return cls(f_o=f_o, f_c=f_c, g_r=g_r, g_i=g_i, r=r, snr=snr[:, 0])

    def target(self, t: int) -> TrainTarget:
        return TrainTarget(g_r=self.g_r[t], g_i=self.g_i[t], r=self.r[t], snr=float(self.snr[t]))


def assemble_features(noisy_spec: SpectrumLike, pitch_info: PitchInfo, coherence: np.ndarray,
                      fb: ErbFilterbank, max_period: int = MAX_PERIOD) -> FeatureFrame:
    """
    Build the f_o and f_c network inputs of one frame

    Args:
        noisy_spec: Noisy frame bins
        pitch_info: Pitch estimate of the frame
        coherence: Per-band pitch coherence
        fb: Filterbank

    Returns:
        FeatureFrame
    """
    energies = band_energies(noisy_spec, fb)
    real_norms, imag_norms = band_complex_norms(noisy_spec, fb)
    f_o = np.concatenate([
        np.log10(LOG_EPS + energies),
        coherence,
        [pitch_info.period / max_period, pitch_info.correlation],
    ])
    f_c = np.log10(LOG_EPS + np.concatenate([real_norms, imag_norms]))
    return FeatureFrame(f_o=f_o, f_c=f_c)


def _norm_ratio(clean_norm: np.ndarray, noisy_norm: np.ndarray) -> np.ndarray:
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = np.clip(clean_norm / noisy_norm, 0.0, 1.0)
    ratio = np.where(noisy_norm < DEGENERATE_NORM, 0.0, ratio)
    both_silent = (noisy_norm < DEGENERATE_NORM) & (clean_norm < DEGENERATE_NORM)
    return np.where(both_silent, 1.0, ratio)


def gain_targets(clean_spec: SpectrumLike, noisy_spec: SpectrumLike,
                 fb: ErbFilterbank) -> Tuple[np.ndarray, np.ndarray]:
    """
    Real and imaginary band gain targets

    Args:
        clean_spec: Clean frame bins
        noisy_spec: Time-aligned noisy frame bins
        fb: Filterbank

    Returns:
        (g_r, g_i), ratios of clean to noisy band norms clamped to [0, 1]
    """
    clean_real, clean_imag = band_complex_norms(clean_spec, fb)
    noisy_real, noisy_imag = band_complex_norms(noisy_spec, fb)
    return _norm_ratio(clean_real, noisy_real), _norm_ratio(clean_imag, noisy_imag)


def strength_targets(clean_spec: SpectrumLike, clean_delayed_spec: SpectrumLike,
                     noisy_spec: SpectrumLike, noisy_delayed_spec: SpectrumLike,
                     fb: ErbFilterbank) -> np.ndarray:
    """
    Pitch filter strength targets

    High when the clean band is much more pitch-coherent than the noisy one.

    Returns:
        Per-band strengths in [0, 1]
    """
    coh_clean = pitch_coherence(clean_spec, clean_delayed_spec, fb)
    coh_noisy = pitch_coherence(noisy_spec, noisy_delayed_spec, fb)
    return np.clip((coh_clean - coh_noisy) / (1.0 - coh_noisy + STRENGTH_EPS), 0.0, 1.0)


def snr_target(clean_mag_frames: np.ndarray, noise_mag_frames: np.ndarray,
               q_low: float = SNR_DB_LOW, q_high: float = SNR_DB_HIGH) -> np.ndarray:
    """
    Normalized frame SNR

    Q(t) = 20*log10(X_m(t) / N_m(t)) with X_m, N_m the L2 norms of the clean
    and noise magnitude spectra, mapped linearly from [q_low, q_high] dB to [0, 1].

    Args:
        clean_mag_frames: (frames, bins) clean magnitudes (or complex bins)
        noise_mag_frames: (frames, bins) noise magnitudes (or complex bins)

    Returns:
        (frames,) values in [0, 1]
    """
    clean_norm = np.linalg.norm(np.abs(np.atleast_2d(clean_mag_frames)), axis=-1)
    noise_norm = np.linalg.norm(np.abs(np.atleast_2d(noise_mag_frames)), axis=-1)
    with np.errstate(divide='ignore', invalid='ignore'):
        q = 20.0 * np.log10(clean_norm / noise_norm)
    q = np.where(clean_norm < DEGENERATE_NORM, q_low, q)
    q = np.where(noise_norm < DEGENERATE_NORM, q_high, q)
    return np.clip((q - q_low) / (q_high - q_low), 0.0, 1.0)


def snr_db_to_normalized(snr_db: float, q_low: float = SNR_DB_LOW, q_high: float = SNR_DB_HIGH) -> float:
    """Map an SNR in dB onto the [0, 1] scale of snr_target"""
    return float(np.clip((snr_db - q_low) / (q_high - q_low), 0.0, 1.0))


class FrameAnalyzer:
    """
    Streaming analysis front-end

    Consumes one hop of samples at a time and produces the frame
    spectrum, its pitch-delayed counterpart, the pitch estimate and the
    network features. Training and enhancement share this object so
    features never drift between the two.
    """

    def __init__(self, fb: Optional[ErbFilterbank] = None, frame_len: int = FRAME_SIZE,
                 hop: int = HOP_SIZE):
        self.fb = fb if fb is not None else design_erb_filterbank()
        self.frame_len = frame_len
        self.hop = hop
        self.window = vorbis_window(frame_len)
        self.history = np.zeros(max(frame_len + MAX_PERIOD, PITCH_WINDOW))
        self.pitch = PitchInfo()
        self.frame_index = 0

    def reset(self):
        self.history[:] = 0.0
        self.pitch = PitchInfo()
        self.frame_index = 0

    def push(self, hop_samples: np.ndarray, period: Optional[int] = None) -> FrameAnalysis:
        """
        Analyze the frame ending with the given hop

        Args:
            hop_samples: Exactly hop new samples
            period: Force this pitch period instead of estimating one

        Returns:
            FrameAnalysis
        """
        hop_samples = np.asarray(hop_samples, dtype=np.float64)
        if hop_samples.shape != (self.hop,):
            raise ShapeError(f"Analyzer expects {self.hop} samples per push, got {hop_samples.shape}")

        self.history = np.concatenate([self.history[self.hop:], hop_samples])
        spectrum = np.fft.rfft(self.history[-self.frame_len:] * self.window)

        if period is None:
            self.pitch = estimate_pitch(self.history[-PITCH_WINDOW:], previous=self.pitch)
        else:
            self.pitch = PitchInfo(period=period, correlation=0.0)

        delayed = delayed_frame(self.history, self.pitch.period, self.window)
        coherence = pitch_coherence(spectrum, delayed, self.fb)
        features = assemble_features(spectrum, self.pitch, coherence, self.fb)
        self.frame_index += 1
        return FrameAnalysis(spectrum=spectrum, delayed=delayed, pitch=self.pitch,
                             coherence=coherence, features=features)


def _hops(samples: np.ndarray, hop: int) -> np.ndarray:
    count = num_frames(len(samples), hop)
    padded = np.zeros(count * hop)
    padded[:len(samples)] = samples
    return padded.reshape(count, hop)


def extract_utterance(clean: np.ndarray, noisy: np.ndarray, noise: np.ndarray,
                      fb: Optional[ErbFilterbank] = None) -> UtteranceFeatures:
    """
    Compute features and targets for one aligned (clean, noisy, noise) triple

    The pitch period is estimated on the noisy signal and reused for the
    clean delayed spectrum, matching what the comb filter sees at run time.

    Args:
        clean: Clean samples (48 kHz)
        noisy: Mixture samples
        noise: Scaled noise component of the mixture

    Returns:
        UtteranceFeatures
    """
    if not len(clean) == len(noisy) == len(noise):
        raise ShapeError("clean, noisy and noise must have equal lengths")
    fb = fb if fb is not None else design_erb_filterbank()
    noisy_analyzer = FrameAnalyzer(fb)
    clean_analyzer = FrameAnalyzer(fb)

    f_o, f_c, g_r, g_i, r = [], [], [], [], []
    for noisy_hop, clean_hop in zip(_hops(noisy, HOP_SIZE), _hops(clean, HOP_SIZE)):
        noisy_frame = noisy_analyzer.push(noisy_hop)
        clean_frame = clean_analyzer.push(clean_hop, period=noisy_frame.pitch.period)
        gains = gain_targets(clean_frame.spectrum, noisy_frame.spectrum, fb)
        f_o.append(noisy_frame.features.f_o)
        f_c.append(noisy_frame.features.f_c)
        g_r.append(gains[0])
        g_i.append(gains[1])
        r.append(strength_targets(clean_frame.spectrum, clean_frame.delayed,
                                  noisy_frame.spectrum, noisy_frame.delayed, fb))

    snr = snr_target(stft(clean), stft(noise))
    if not f_o:
        empty = np.zeros((0, NUM_BANDS))
        return UtteranceFeatures(np.zeros((0, FO_DIM)), np.zeros((0, FC_DIM)),
                                 empty, empty.copy(), empty.copy(), np.zeros(0))
    return UtteranceFeatures(f_o=np.array(f_o), f_c=np.array(f_c), g_r=np.array(g_r),
                             g_i=np.array(g_i), r=np.array(r), snr=snr)


def write_feature_cache(path: Union[str, Path], utterance: UtteranceFeatures) -> Path:
    """
    Write one utterance as a PCPF record stream

    Layout: 8-byte header (magic "PCPF", version u16, record length u16)
    followed by little-endian float32 records of RECORD_LEN values.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as handle:
        handle.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, RECORD_LEN))
        handle.write(utterance.records().astype('<f4').tobytes())
    return path


def read_feature_cache(path: Union[str, Path]) -> UtteranceFeatures:
    """Read a file written by write_feature_cache"""
    data = Path(path).read_bytes()
    if len(data) < _CACHE_HEADER.size:
        raise ShapeError(f"{path}: truncated feature cache")
    magic, version, record_len = _CACHE_HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise ShapeError(f"{path}: not a feature cache (magic {magic!r})")
    if version != CACHE_VERSION or record_len != RECORD_LEN:
        raise ShapeError(f"{path}: unsupported cache version {version} / record length {record_len}")
    if (len(data) - _CACHE_HEADER.size) % (4 * RECORD_LEN):
        raise ShapeError(f"{path}: cache body is not a whole number of records")
    body = np.frombuffer(data, dtype='<f4', offset=_CACHE_HEADER.size)
    return UtteranceFeatures.from_records(body.reshape(-1, RECORD_LEN))
