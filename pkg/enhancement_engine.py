import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from audio_data import active_frames, babble_noise, read_manifest, read_wav, synth_speech, white_noise
from dsp_core import (
    FRAME_SIZE, HOP_SIZE, NUM_BANDS, NUM_BINS, SAMPLE_RATE, AudioBuffer, ErbFilterbank,
    design_erb_filterbank, interpolate_band_gains, vorbis_window,
)
from errors import AudioFormatError, ConfigurationError
from feature_extractor import FrameAnalysis, FrameAnalyzer, UtteranceFeatures, extract_utterance
from metrics import si_sdr, stoi
from network import PercepNetPlus
from pitch_filter import COMB_HISTORY, comb_filter
from post_processor import NoiseTracker, PostprocConfig, SwitchState, apply_postproc

logger = logging.getLogger(__name__)

PP_MODES = ('switch', 'never', 'always')
REPORT_COLUMNS = ['file', 'snr_bucket', 'stoi_noisy', 'stoi_enh', 'sisdr_noisy', 'sisdr_enh']
SNR_BUCKETS = ((2.5, '<2.5'), (7.5, '2.5-7.5'), (14.0, '7.5-14'), (float('inf'), '>=14'))


@dataclass
class EnhanceConfig:
    """
    Enhancement settings

    Args:
        postproc: MMSE-LSA and switch settings
        pp_mode: 'switch' follows the SNR switch, 'never' always bypasses,
                 'always' post-processes every frame
        sample_rate: Rate the session accepts
    """
    postproc: PostprocConfig = field(default_factory=PostprocConfig)
    pp_mode: str = 'switch'
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.pp_mode not in PP_MODES:
            raise ConfigurationError(f"pp_mode must be one of {PP_MODES}, got '{self.pp_mode}'")


@dataclass
class FrameGains:
    """Per-band gains, strengths and normalized SNR of one frame"""
    gain_real: np.ndarray
    gain_imag: np.ndarray
    strength: np.ndarray
    snr: float


class GainSource:
    """
    Supplies the gains of the frame COMB_HISTORY frames behind the newest analysis

    Subclasses implement push(); it returns None while the lookahead fills.
    """
    lookahead = COMB_HISTORY

    def reset(self):
        pass

    def push(self, analysis: FrameAnalysis) -> Optional[FrameGains]:
        raise NotImplementedError


class ModelGainSource(GainSource):
    """Streams features through a trained network"""

    def __init__(self, model: PercepNetPlus):
        if model.config.lookahead_frames != COMB_HISTORY:
            raise ConfigurationError(
                f"Model looks {model.config.lookahead_frames} frames ahead, the pipeline expects {COMB_HISTORY}")
        self.model = model.eval()
        self.dtype = next(model.parameters()).dtype
        self.reset()

    def reset(self):
        self.state = self.model.initial_state()

    def push(self, analysis: FrameAnalysis) -> Optional[FrameGains]:
        f_o = torch.as_tensor(analysis.features.f_o, dtype=self.dtype)[None]
        f_c = torch.as_tensor(analysis.features.f_c, dtype=self.dtype)[None]
        with torch.no_grad():
            output = self.model.step(f_o, f_c, self.state)
        if output is None:
            return None
        values = [t[0].double().numpy() for t in output]
        return FrameGains(gain_real=values[0], gain_imag=values[1], strength=values[2], snr=float(values[3]))


class OracleGainSource(GainSource):
    """
    Ground-truth gains computed from the clean speech and the noise

    The noisy signal the session receives must be clean + noise.
    """

    def __init__(self, clean: np.ndarray, noise: np.ndarray, fb: Optional[ErbFilterbank] = None):
        clean = np.concatenate([np.asarray(clean, dtype=np.float64), np.zeros(HOP_SIZE)])
        noise = np.concatenate([np.asarray(noise, dtype=np.float64), np.zeros(HOP_SIZE)])
        self.targets: UtteranceFeatures = extract_utterance(clean, clean + noise, noise, fb)
        self.reset()

    def reset(self):
        self.count = 0

    def push(self, analysis: FrameAnalysis) -> Optional[FrameGains]:
        frame = self.count - self.lookahead
        self.count += 1
        if frame < 0:
            return None
        frame = min(frame, len(self.targets) - 1)
        target = self.targets.target(frame)
        return FrameGains(gain_real=target.g_r, gain_imag=target.g_i, strength=target.r, snr=target.snr)


class ConstantGainSource(GainSource):
    """The same gains for every frame"""

    def __init__(self, gain_real: float = 1.0, gain_imag: float = 1.0, strength: float = 0.0,
                 snr: float = 1.0, num_bands: int = NUM_BANDS):
        self.gains = FrameGains(gain_real=np.full(num_bands, gain_real), gain_imag=np.full(num_bands, gain_imag),
                                strength=np.full(num_bands, strength), snr=snr)
        self.reset()

    def reset(self):
        self.count = 0

    def push(self, analysis: FrameAnalysis) -> Optional[FrameGains]:
        self.count += 1
        return self.gains if self.count > self.lookahead else None


class EnhanceSession:
    """
    Streaming enhancer for one audio stream

    Each pushed hop is analyzed immediately; the frame COMB_HISTORY hops
    older is then comb filtered, scaled by its complex band gains,
    optionally post-processed and overlap-added. The first hop that
    comes out is the half-frame pad in front of the stream.
    """

    def __init__(self, source: GainSource, config: Optional[EnhanceConfig] = None,
                 sample_rate: int = SAMPLE_RATE, fb: Optional[ErbFilterbank] = None):
        self.config = config or EnhanceConfig()
        if sample_rate != self.config.sample_rate:
            raise AudioFormatError(f"Session runs at {self.config.sample_rate} Hz, input is {sample_rate} Hz")
        self.fb = fb if fb is not None else design_erb_filterbank()
        self.source = source
        self.analyzer = FrameAnalyzer(self.fb)
        self.window = vorbis_window(FRAME_SIZE)
        postproc = self.config.postproc
        self.update_threshold = 1.0 if self.config.pp_mode == 'always' else postproc.snr_threshold_norm
        self.reset()

    def reset(self):
        history = 2 * COMB_HISTORY + 1
        self.source.reset()
        self.analyzer.reset()
        self.spectra = np.zeros((history, NUM_BINS), dtype=np.complex128)
        self.periods = np.full(history, self.analyzer.pitch.period)
        self.tracker = NoiseTracker.zeros(NUM_BINS)
        self.switch = SwitchState(self.config.postproc)
        self.ola_tail = np.zeros(FRAME_SIZE - HOP_SIZE)
        self.snr_track: List[float] = []
        self.bypass_track: List[bool] = []

    def _bypass(self, snr: float) -> bool:
        decision = self.switch.decide(snr)
        if self.config.pp_mode == 'never':
            return True
        if self.config.pp_mode == 'always':
            return False
        return decision

    def process(self, hop_samples: np.ndarray) -> Optional[np.ndarray]:
        """
        Push one hop of noisy samples

        Returns:
            One hop of enhanced samples, or None while the lookahead fills
        """
        analysis = self.analyzer.push(hop_samples)
        self.spectra = np.roll(self.spectra, -1, axis=0)
        self.spectra[-1] = analysis.spectrum
        self.periods = np.roll(self.periods, -1)
        self.periods[-1] = analysis.pitch.period

        gains = self.source.push(analysis)
        if gains is None:
            return None

        filtered = comb_filter(self.spectra, int(self.periods[COMB_HISTORY]), gains.strength, self.fb)
        real_bins = interpolate_band_gains(gains.gain_real, self.fb)
        imag_bins = interpolate_band_gains(gains.gain_imag, self.fb)
        enhanced = real_bins * filtered.real + 1j * (imag_bins * filtered.imag)

        bypass = self._bypass(gains.snr)
        final = apply_postproc(enhanced, bypass, self.tracker, self.config.postproc,
                               update_noise=gains.snr < self.update_threshold)
        self.snr_track.append(gains.snr)
        self.bypass_track.append(bypass)

        frame = np.fft.irfft(final, n=FRAME_SIZE) * self.window
        out = self.ola_tail + frame[:HOP_SIZE]
        self.ola_tail = frame[HOP_SIZE:]
        return out

    def flush(self) -> List[np.ndarray]:
        """Push the zero hops that release every pending frame"""
        released = []
        for _ in range(1 + COMB_HISTORY):
            out = self.process(np.zeros(HOP_SIZE))
            if out is not None:
                released.append(out)
        return released


def enhance_frame(session: EnhanceSession, noisy_frame: np.ndarray) -> Optional[np.ndarray]:
    """Push one hop of noisy samples through a session"""
    return session.process(noisy_frame)


def run_session(session: EnhanceSession, samples: np.ndarray) -> np.ndarray:
    """
    Stream a whole signal through a session and trim the result to its length

    Args:
        session: Fresh session
        samples: Noisy samples

    Returns:
        Enhanced samples, same length as the input
    """
    samples = np.asarray(samples, dtype=np.float64)
    count = -(-len(samples) // HOP_SIZE)
    padded = np.zeros(count * HOP_SIZE)
    padded[:len(samples)] = samples

    emitted = []
    for hop in padded.reshape(count, HOP_SIZE):
        out = enhance_frame(session, hop)
        if out is not None:
            emitted.append(out)
    emitted.extend(session.flush())
    # the first hop out is the half-frame analysis pad
    output = np.concatenate(emitted[1:]) if len(emitted) > 1 else np.zeros(0)
    return output[:len(samples)]


def enhance_file(in_audio: Union[AudioBuffer, np.ndarray, str, Path],
                 model: Union[PercepNetPlus, GainSource],
                 config: Optional[EnhanceConfig] = None) -> AudioBuffer:
    """
    Enhance a complete signal

    Args:
        in_audio: AudioBuffer, 48 kHz sample array or WAV path
        model: Network, or any GainSource
        config: Enhancement settings

    Returns:
        Enhanced AudioBuffer of the same length
    """
    if isinstance(in_audio, (str, Path)):
        in_audio = read_wav(in_audio)
    if not isinstance(in_audio, AudioBuffer):
        in_audio = AudioBuffer(np.asarray(in_audio, dtype=np.float64))
    source = ModelGainSource(model) if isinstance(model, PercepNetPlus) else model
    session = EnhanceSession(source, config, sample_rate=in_audio.sample_rate)
    enhanced = run_session(session, in_audio.samples)
    if session.bypass_track:
        logger.info("Enhanced %.2f s of audio, %.0f%% of frames bypassed post-processing",
                    in_audio.duration, 100.0 * np.mean(session.bypass_track))
    return AudioBuffer(enhanced, in_audio.sample_rate)


def snr_bucket(snr_db: float) -> str:
    """Label of the mixture-SNR range used in evaluation reports"""
    for upper, label in SNR_BUCKETS:
        if snr_db < upper:
            return label
    return SNR_BUCKETS[-1][1]


def mixture_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    """SNR of a mixture over the active frames of its clean reference"""
    noise = noisy - clean
    mask = np.repeat(active_frames(clean), HOP_SIZE)[:len(clean)]
    if not mask.any():
        mask[:] = True
    noise_power = np.mean(noise[mask] ** 2)
    if noise_power <= 0.0:
        return float('inf')
    return float(10.0 * np.log10(np.mean(clean[mask] ** 2) / noise_power))


@dataclass
class TestItem:
    """One noisy file of a test set with its clean reference"""
    name: str
    noisy: Path
    clean: Path
    snr_db: Optional[float] = None


def load_testset(testset: Union[str, Path]) -> List[TestItem]:
    """
    Collect the test files of a mixed dataset directory

    Every noisy/<name>.wav is paired with clean/<name>.wav; a
    manifest.tsv next to them supplies the mixture SNRs.
    """
    root = Path(testset)
    if not root.is_dir():
        raise ConfigurationError(f"Test set directory not found: {root}")
    snrs: Dict[str, float] = {}
    if (root / 'manifest.tsv').exists():
        snrs = {spec.name: spec.snr_db for spec in read_manifest(root / 'manifest.tsv')}
    return [TestItem(name=path.stem, noisy=path, clean=root / 'clean' / path.name, snr_db=snrs.get(path.stem))
            for path in sorted((root / 'noisy').glob('*.wav'))]


@dataclass
class EvaluationReport:
    """
    Per-file metrics and the over-attenuation census

    Args:
        frame: One row per evaluated file, REPORT_COLUMNS
        skipped: Files without a usable reference
    """
    frame: pd.DataFrame
    skipped: List[str] = field(default_factory=list)

    def bucket_means(self) -> pd.DataFrame:
        if self.frame.empty:
            return pd.DataFrame(columns=REPORT_COLUMNS[1:])
        return self.frame.groupby('snr_bucket')[REPORT_COLUMNS[2:]].mean()

    def census(self) -> Dict[str, float]:
        """Files whose STOI or SI-SDR dropped, and the share of them in the top SNR bucket"""
        if self.frame.empty:
            return {'degraded': 0, 'degraded_high_snr_share': 0.0}
        degraded = self.frame[(self.frame.stoi_enh < self.frame.stoi_noisy)
                              | (self.frame.sisdr_enh < self.frame.sisdr_noisy)]
        share = float(np.mean(degraded.snr_bucket == SNR_BUCKETS[-1][1])) if len(degraded) else 0.0
        return {'degraded': int(len(degraded)), 'degraded_high_snr_share': share}

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.frame.to_csv(path, index=False, float_format='%.6f')
        return path


def evaluate(model: Union[PercepNetPlus, GainSource], testset: Union[str, Path, List[TestItem]],
             config: Optional[EnhanceConfig] = None,
             report_path: Optional[Union[str, Path]] = None) -> EvaluationReport:
    """
    STOI and SI-SDR of noisy and enhanced files, bucketed by mixture SNR

    Args:
        model: Network or gain source used for every file
        testset: Directory from load_testset or a list of TestItem
        config: Enhancement settings
        report_path: Where to write the CSV report

    Returns:
        EvaluationReport
    """
    items = load_testset(testset) if isinstance(testset, (str, Path)) else list(testset)
    rows, skipped = [], []
    for item in tqdm(items, desc='Evaluating', disable=not items):
        if not Path(item.clean).is_file():
            logger.warning("Skipping %s: clean reference %s is missing", item.name, item.clean)
            skipped.append(item.name)
            continue
        clean, noisy = read_wav(item.clean).samples, read_wav(item.noisy).samples
        if len(clean) != len(noisy):
            logger.warning("Skipping %s: reference length %d differs from %d", item.name, len(clean), len(noisy))
            skipped.append(item.name)
            continue
        source = ModelGainSource(model) if isinstance(model, PercepNetPlus) else model
        enhanced = enhance_file(noisy, source, config).samples
        snr_db = item.snr_db if item.snr_db is not None else mixture_snr_db(clean, noisy)
        rows.append({
            'file': item.name,
            'snr_bucket': snr_bucket(snr_db),
            'stoi_noisy': stoi(clean, noisy, SAMPLE_RATE),
            'stoi_enh': stoi(clean, enhanced, SAMPLE_RATE),
            'sisdr_noisy': si_sdr(clean, noisy),
            'sisdr_enh': si_sdr(clean, enhanced),
        })

    report = EvaluationReport(frame=pd.DataFrame(rows, columns=REPORT_COLUMNS), skipped=skipped)
    if report_path is not None:
        report.to_csv(report_path)
    census = report.census()
    logger.info("Evaluated %d files (%d skipped); %d degraded after enhancement",
                len(report.frame), len(skipped), census['degraded'])
    return report


def bench_input(seconds: float, seed: int = 0, content: str = 'speech') -> np.ndarray:
    """Synthesized benchmark input: 'speech' (speech in babble), 'noise' or 'silence'"""
    samples = int(round(seconds * SAMPLE_RATE))
    if content == 'silence':
        return np.zeros(samples)
    if content == 'noise':
        return white_noise(seconds, seed)
    if content == 'speech':
        return synth_speech(seconds, seed) + 0.3 * babble_noise(seconds, seed + 1)
    raise ConfigurationError(f"Unknown benchmark content '{content}'")


def bench_rtf(model: Union[PercepNetPlus, GainSource], duration: float = 30.0, seed: int = 0,
              content: str = 'speech', config: Optional[EnhanceConfig] = None) -> float:
    """
    Single-threaded real-time factor

    Returns:
        Processing time divided by the audio duration
    """
    if duration <= 0:
        raise ConfigurationError(f"Benchmark duration must be positive, got {duration}")
    audio = bench_input(duration, seed, content)
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        start = time.perf_counter()
        enhance_file(audio, model, config)
        elapsed = time.perf_counter() - start
    finally:
        torch.set_num_threads(threads)
    rtf = elapsed / duration
    logger.info("Processed %.1f s of %s in %.2f s (RTF %.3f)", duration, content, elapsed, rtf)
    return rtf
