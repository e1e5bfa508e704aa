import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np
from scipy.special import exp1

from errors import ConfigurationError, ShapeError

logger = logging.getLogger(__name__)

PSD_FLOOR = 1e-12


@dataclass
class PostprocConfig:
    """
    MMSE-LSA post-processing and SNR switch settings

    Args:
        snr_threshold_norm: Normalized SNR above which post-processing is bypassed (0.6 is 14 dB)
        dd_beta: Decision-directed smoothing factor
        gain_floor: Lowest gain the estimator may apply
        switch_median_frames: Median window of the switch, 1 switches per frame
        noise_update_rate: Recursive averaging rate of the noise PSD
        xi_min: Floor of the a-priori SNR
        init_frames: Frames averaged into the first noise estimate
    """
    snr_threshold_norm: float = 0.6
    dd_beta: float = 0.98
    gain_floor: float = 0.05
    switch_median_frames: int = 5
    noise_update_rate: float = 0.95
    xi_min: float = 10 ** (-25 / 10)
    init_frames: int = 6

    def __post_init__(self):
        if not 0.0 <= self.snr_threshold_norm <= 1.0:
            raise ConfigurationError(f"snr_threshold_norm must lie in [0, 1], got {self.snr_threshold_norm}")
        if not 0.0 <= self.dd_beta < 1.0:
            raise ConfigurationError(f"dd_beta must lie in [0, 1), got {self.dd_beta}")
        if not 0.0 < self.gain_floor <= 1.0:
            raise ConfigurationError(f"gain_floor must lie in (0, 1], got {self.gain_floor}")
        if self.switch_median_frames < 1:
            raise ConfigurationError("switch_median_frames must be at least 1")
        if not 0.0 <= self.noise_update_rate <= 1.0:
            raise ConfigurationError(f"noise_update_rate must lie in [0, 1], got {self.noise_update_rate}")
        if self.init_frames < 0:
            raise ConfigurationError("init_frames must be non-negative")


@dataclass
class NoiseTracker:
    """
    Per-stream noise statistics for the decision-directed SNR estimate

    The first init_frames frames are averaged into noise_psd; after that
    the estimate only moves through recursive averaging.
    """
    noise_psd: np.ndarray
    prev_gain: np.ndarray
    prev_enhanced_psd: np.ndarray
    frames_seen: int = 0

    @classmethod
    def zeros(cls, num_bins: int) -> 'NoiseTracker':
        return cls(noise_psd=np.zeros(num_bins), prev_gain=np.ones(num_bins),
                   prev_enhanced_psd=np.zeros(num_bins))

    def observe(self, psd: np.ndarray, cfg: PostprocConfig, update_noise: bool):
        if self.frames_seen < cfg.init_frames:
            self.noise_psd = self.noise_psd + (psd - self.noise_psd) / (self.frames_seen + 1)
        elif update_noise:
            rate = cfg.noise_update_rate
            self.noise_psd = rate * self.noise_psd + (1.0 - rate) * psd
        self.frames_seen += 1


def mmse_lsa_gain(xi: np.ndarray, gamma: np.ndarray, cfg: PostprocConfig = PostprocConfig()) -> np.ndarray:
    """
    Log-spectral amplitude MMSE gain

    G = xi/(1+xi) * exp(E1(v)/2), v = xi*gamma/(1+xi), clipped to [gain_floor, 1].

    Args:
        xi: A-priori SNR per bin, non-negative
        gamma: A-posteriori SNR per bin, non-negative

    Returns:
        Gains per bin
    """
    xi = np.asarray(xi, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    ratio = xi / (1.0 + xi)
    v = ratio * gamma
    with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
        gain = ratio * np.exp(0.5 * exp1(v))
    # E1 diverges at v = 0: unity unless the prefactor is zero
    gain = np.where(v <= 0.0, np.where(ratio > 0.0, 1.0, 0.0), gain)
    return np.clip(gain, cfg.gain_floor, 1.0)


def estimate_snrs(noisy_psd: np.ndarray, tracker: NoiseTracker, cfg: PostprocConfig = PostprocConfig(),
                  update_noise: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    Decision-directed a-priori and a-posteriori SNRs of one frame

    Args:
        noisy_psd: Power spectrum entering post-processing
        tracker: Noise statistics, updated in place
        cfg: Settings
        update_noise: Fold this frame into the noise estimate (noise-dominant frame)

    Returns:
        (xi, gamma)
    """
    noisy_psd = np.asarray(noisy_psd, dtype=np.float64)
    if noisy_psd.shape != tracker.noise_psd.shape:
        raise ShapeError(f"PSD of shape {noisy_psd.shape} does not match tracker {tracker.noise_psd.shape}")
    tracker.observe(noisy_psd, cfg, update_noise)

    noise = np.maximum(tracker.noise_psd, PSD_FLOOR)
    gamma = noisy_psd / noise
    xi = (cfg.dd_beta * tracker.prev_enhanced_psd / noise
          + (1.0 - cfg.dd_beta) * np.maximum(gamma - 1.0, 0.0))
    return np.maximum(xi, cfg.xi_min), gamma


def _median_windows(values: np.ndarray, width: int, causal: bool) -> np.ndarray:
    count = len(values)
    medians = np.empty(count)
    before = width - 1 if causal else width // 2
    after = 0 if causal else width - 1 - width // 2
    for t in range(count):
        medians[t] = np.median(values[max(0, t - before):min(count, t + after + 1)])
    return medians


def snr_switch(snr_sequence: Sequence[float], cfg: PostprocConfig = PostprocConfig(),
               causal: bool = False) -> np.ndarray:
    """
    Bypass decisions from a sequence of predicted normalized SNRs

    Args:
        snr_sequence: Per-frame predicted SNR in [0, 1]
        cfg: Settings
        causal: Use the trailing window ending at each frame instead of the centered one

    Returns:
        Boolean array, True where post-processing is bypassed
    """
    values = np.asarray(snr_sequence, dtype=np.float64)
    if values.size == 0:
        return np.zeros(0, dtype=bool)
    medians = _median_windows(values, cfg.switch_median_frames, causal)
    return medians > cfg.snr_threshold_norm


@dataclass
class SwitchState:
    """Streaming form of the causal snr_switch"""
    cfg: PostprocConfig = field(default_factory=PostprocConfig)
    recent: deque = field(default_factory=deque)

    def decide(self, snr: float) -> bool:
        self.recent.append(float(snr))
        while len(self.recent) > self.cfg.switch_median_frames:
            self.recent.popleft()
        return bool(np.median(self.recent) > self.cfg.snr_threshold_norm)


def apply_postproc(enhanced_spec: np.ndarray, bypass: bool, tracker: NoiseTracker,
                   cfg: PostprocConfig = PostprocConfig(), update_noise: bool = False) -> np.ndarray:
    """
    SNR-switched MMSE-LSA on one frame

    The tracker advances on every frame so the statistics stay current
    while post-processing is bypassed.

    Args:
        enhanced_spec: Frame after the network gains
        bypass: Decision from the SNR switch
        tracker: Noise statistics of the stream
        cfg: Settings
        update_noise: The frame is noise-dominant

    Returns:
        The input object itself when bypassed, otherwise G * enhanced_spec
    """
    psd = np.abs(enhanced_spec) ** 2
    xi, gamma = estimate_snrs(psd, tracker, cfg, update_noise)
    gain = mmse_lsa_gain(xi, gamma, cfg)
    tracker.prev_gain = gain
    tracker.prev_enhanced_psd = gain ** 2 * psd
    if bypass:
        return enhanced_spec
    return gain * enhanced_spec
