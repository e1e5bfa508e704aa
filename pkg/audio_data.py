import logging
from dataclasses import dataclass
from math import gcd
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
import soundfile as sf
from scipy import signal

from dsp_core import HOP_SIZE, SAMPLE_RATE, AudioBuffer
from errors import AudioFormatError, ConfigurationError

logger = logging.getLogger(__name__)

SNR_RANGE_DB = (-5.0, 20.0)
ACTIVE_THRESHOLD_DBFS = -40.0
SILENT_POWER = 1e-20
SUPPORTED_SUBTYPES = {'PCM_16', 'PCM_24', 'PCM_32', 'FLOAT', 'DOUBLE'}
# both mix components live on this grid so their float64 sum is exact
MIX_GRID = 2.0 ** -40

AudioLike = Union[AudioBuffer, np.ndarray]


def _samples(audio: AudioLike) -> np.ndarray:
    if isinstance(audio, AudioBuffer):
        return audio.samples
    return np.asarray(audio, dtype=np.float64)


@dataclass
class MixSpec:
    """
    One line of a mixing manifest

    Args:
        clean: Clean speech WAV
        noise: Noise WAV
        snr_db: Mixture SNR over active speech
        seed: Seed of the noise offset
        rir: Optional room impulse response WAV applied to the clean speech
    """
    clean: str
    noise: str
    snr_db: float
    seed: int
    rir: Optional[str] = None

    def __post_init__(self):
        self.snr_db = float(self.snr_db)
        self.seed = int(self.seed)
        if not SNR_RANGE_DB[0] <= self.snr_db <= SNR_RANGE_DB[1]:
            raise ConfigurationError(f"snr_db {self.snr_db} outside {SNR_RANGE_DB}")

    @property
    def name(self) -> str:
        return f"{Path(self.clean).stem}__{Path(self.noise).stem}__{self.seed}"

    def to_line(self) -> str:
        fields = [self.clean, self.noise, f"{self.snr_db:.4f}", str(self.seed)]
        if self.rir:
            fields.append(self.rir)
        return '\t'.join(fields)


def read_manifest(path: Union[str, Path]) -> List[MixSpec]:
    """Parse a TAB-separated manifest; blank lines and lines starting with # are skipped"""
    specs = []
    for number, line in enumerate(Path(path).read_text(encoding='utf-8').splitlines(), start=1):
        if not line.strip() or line.startswith('#'):
            continue
        parts = line.split('\t')
        if len(parts) not in (4, 5):
            raise ConfigurationError(f"{path}:{number}: expected 4 or 5 TAB-separated fields, got {len(parts)}")
        try:
            specs.append(MixSpec(*parts))
        except ValueError as e:
            raise ConfigurationError(f"{path}:{number}: {e}") from e
    return specs


def write_manifest(path: Union[str, Path], specs: Iterable[MixSpec]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(''.join(spec.to_line() + '\n' for spec in specs), encoding='utf-8')
    return path


def read_wav(path: Union[str, Path]) -> AudioBuffer:
    """
    Read a WAV file as mono float samples

    Args:
        path: RIFF/WAVE file, PCM or float; several channels are averaged

    Returns:
        AudioBuffer with samples in [-1, 1]
    """
    path = Path(path)
    if not path.is_file():
        raise AudioFormatError(f"Audio file not found: {path}")
    try:
        info = sf.info(str(path))
        if info.format not in ('WAV', 'WAVEX'):
            raise AudioFormatError(f"{path}: not a WAV file ({info.format})")
        if info.subtype not in SUPPORTED_SUBTYPES:
            raise AudioFormatError(f"{path}: unsupported sample format {info.subtype}")
        data, rate = sf.read(str(path), dtype='float64', always_2d=True)
    except AudioFormatError:
        raise
    except (RuntimeError, ValueError, TypeError) as e:
        raise AudioFormatError(f"{path}: cannot decode audio: {e}") from e
    logger.debug("Read %s: %d samples, %d channels, %d Hz", path, len(data), data.shape[1], rate)
    return AudioBuffer(samples=data.mean(axis=1), sample_rate=int(rate))


def write_wav(path: Union[str, Path], audio: AudioLike, sample_rate: int = SAMPLE_RATE,
              subtype: str = 'FLOAT') -> Path:
    """Write mono samples; FLOAT keeps float32 values exactly"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(audio, AudioBuffer):
        sample_rate = audio.sample_rate
    sf.write(str(path), _samples(audio), sample_rate, subtype=subtype)
    return path


def active_frames(clean: np.ndarray, frame_len: int = HOP_SIZE,
                  threshold_dbfs: float = ACTIVE_THRESHOLD_DBFS) -> np.ndarray:
    """Boolean mask of frames whose mean power exceeds threshold_dbfs"""
    count = max(1, -(-len(clean) // frame_len))
    padded = np.zeros(count * frame_len)
    padded[:len(clean)] = clean
    power = np.mean(padded.reshape(count, frame_len) ** 2, axis=1)
    with np.errstate(divide='ignore'):
        level = 10.0 * np.log10(power)
    return level > threshold_dbfs


def _snap(x: np.ndarray) -> np.ndarray:
    return np.round(x / MIX_GRID) * MIX_GRID


def mix(clean: AudioLike, noise: AudioLike, snr_db: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Add noise to speech at a given SNR over the active speech frames

    The noise is looped from a seeded random offset to the speech length.
    Both components are snapped to a 2**-40 grid, which leaves PCM and
    float32 audio unchanged above 1e-12, so noisy - noise_scaled
    reproduces the snapped clean signal exactly.

    Args:
        clean: Clean speech
        noise: Noise, any length
        snr_db: Target SNR in dB
        seed: Seed of the noise offset

    Returns:
        (noisy, noise_scaled)
    """
    clean = _snap(_samples(clean))
    noise = _samples(noise)
    if len(clean) == 0 or np.mean(clean ** 2) < SILENT_POWER:
        raise ValueError("Cannot mix silent clean speech")
    if len(noise) == 0:
        raise ValueError("Noise signal is empty")

    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, len(noise)))
    segment = noise[(offset + np.arange(len(clean))) % len(noise)]

    mask = np.repeat(active_frames(clean), HOP_SIZE)[:len(clean)]
    if not mask.any():
        mask[:] = True
    clean_power = np.mean(clean[mask] ** 2)
    noise_power = np.mean(segment[mask] ** 2)
    if noise_power < SILENT_POWER:
        raise ValueError("Noise is silent over the active speech frames")

    scale = np.sqrt(clean_power / (noise_power * 10.0 ** (snr_db / 10.0)))
    noise_scaled = _snap(segment * scale)
    return clean + noise_scaled, noise_scaled


def rir_convolve(audio: AudioLike, rir: AudioLike) -> np.ndarray:
    """
    Reverberate audio with a room impulse response

    The full convolution is cut to the input length and rescaled to the
    input peak.
    """
    samples = _samples(audio)
    rir = _samples(rir)
    if rir.size == 0:
        raise ValueError("Room impulse response is empty")
    if len(rir) > len(samples):
        raise ValueError(f"RIR of {len(rir)} samples is longer than the audio ({len(samples)})")
    wet = signal.fftconvolve(samples, rir, mode='full')[:len(samples)]
    peak_in, peak_out = np.max(np.abs(samples)), np.max(np.abs(wet))
    if peak_out > 0.0:
        wet = wet * (peak_in / peak_out)
    return wet


def resample(audio: AudioLike, orig_rate: int, target_rate: int) -> np.ndarray:
    """Polyphase windowed-sinc resampling"""
    if orig_rate <= 0 or target_rate <= 0:
        raise ValueError(f"Sample rates must be positive, got {orig_rate} and {target_rate}")
    samples = _samples(audio)
    if orig_rate == target_rate:
        return samples.copy()
    factor = gcd(orig_rate, target_rate)
    return signal.resample_poly(samples, target_rate // factor, orig_rate // factor)


def load_at_rate(path: Union[str, Path], rate: int = SAMPLE_RATE) -> np.ndarray:
    """Read a WAV file and resample it to rate"""
    audio = read_wav(path)
    if audio.sample_rate != rate:
        logger.info("Resampling %s from %d Hz to %d Hz", path, audio.sample_rate, rate)
    return resample(audio.samples, audio.sample_rate, rate)


def render_mix(spec: MixSpec, base_dir: Optional[Union[str, Path]] = None
               ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Produce the clean, noisy and scaled-noise signals of a manifest entry

    Returns:
        (clean, noisy, noise_scaled); clean is noisy - noise_scaled exactly
    """
    base = Path(base_dir) if base_dir is not None else Path('.')
    clean = load_at_rate(base / spec.clean)
    noise = load_at_rate(base / spec.noise)
    if spec.rir:
        clean = rir_convolve(clean, load_at_rate(base / spec.rir))
    noisy, noise_scaled = mix(clean, noise, spec.snr_db, spec.seed)
    return noisy - noise_scaled, noisy, noise_scaled


def synth_speech(seconds: float, seed: int, fs: int = SAMPLE_RATE) -> np.ndarray:
    """
    Harmonic speech surrogate

    Voiced syllables with a gliding f0 between 90 and 250 Hz and 1/k
    harmonic amplitudes, separated by short pauses.
    """
    rng = np.random.default_rng(seed)
    total = int(round(seconds * fs))
    out = np.zeros(total)
    position = int(rng.integers(0, fs // 10))
    while position < total:
        length = int(rng.uniform(0.15, 0.4) * fs)
        length = min(length, total - position)
        t = np.arange(length) / fs
        f_start, f_end = rng.uniform(90.0, 250.0, size=2)
        f0 = np.linspace(f_start, f_end, length)
        phase = 2.0 * np.pi * np.cumsum(f0) / fs
        harmonics = int(min(40, 20000.0 // max(f_start, f_end)))
        syllable = sum(np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k for k in range(1, harmonics + 1))
        envelope = np.sin(np.pi * t / max(t[-1], 1e-3)) ** 2 if length > 1 else np.ones(length)
        out[position:position + length] = 0.3 * syllable * envelope
        position += length + int(rng.uniform(0.05, 0.25) * fs)
    peak = np.max(np.abs(out)) if total else 0.0
    return out / peak * 0.5 if peak > 0 else out


def white_noise(seconds: float, seed: int, level: float = 0.1, fs: int = SAMPLE_RATE) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return level * rng.standard_normal(int(round(seconds * fs)))


def babble_noise(seconds: float, seed: int, talkers: int = 6, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Sum of independent speech surrogates, normalized to a 0.1 RMS"""
    rng = np.random.default_rng(seed)
    babble = sum(synth_speech(seconds, int(rng.integers(0, 2 ** 31)), fs) for _ in range(talkers))
    rms = np.sqrt(np.mean(babble ** 2)) if np.size(babble) else 0.0
    return babble * (0.1 / rms) if rms > 0 else np.zeros(int(round(seconds * fs)))


def synth_rir(seed: int, rt60: float = 0.3, seconds: float = 0.25, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Exponentially decaying noise tail behind a direct-path impulse"""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * fs))
    decay = np.exp(-6.91 * np.arange(n) / (rt60 * fs))
    rir = 0.3 * rng.standard_normal(n) * decay
    rir[0] = 1.0
    return rir
