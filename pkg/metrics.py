import logging

import numpy as np
from pystoi.stoi import stoi as _pystoi

logger = logging.getLogger(__name__)

STOI_SEGMENT_SECONDS = 0.384
SI_SDR_LIMIT_DB = 60.0
SILENT_ENERGY = 1e-20


def _pair(clean, processed):
    clean = np.asarray(clean, dtype=np.float64)
    processed = np.asarray(processed, dtype=np.float64)
    if clean.shape != processed.shape or clean.ndim != 1:
        raise ValueError(f"Signals must be 1-D with equal lengths, got {clean.shape} and {processed.shape}")
    return clean, processed


def stoi(clean, processed, rate: int) -> float:
    """
    Short-time objective intelligibility

    Args:
        clean: Reference signal
        processed: Degraded or enhanced signal, same length
        rate: Sample rate in Hz

    Returns:
        Score in [0, 1]
    """
    clean, processed = _pair(clean, processed)
    if len(clean) < STOI_SEGMENT_SECONDS * rate:
        raise ValueError(f"STOI needs at least {STOI_SEGMENT_SECONDS * 1000:.0f} ms of audio, "
                         f"got {1000 * len(clean) / rate:.0f} ms")
    return float(_pystoi(clean, processed, rate, extended=False))


def si_sdr(clean, processed) -> float:
    """
    Scale-invariant signal-to-distortion ratio in dB

    Both signals are made zero-mean, then
    10*log10(|a*s|^2 / |a*s - s_hat|^2) with a = <s_hat, s> / |s|^2,
    reported within +/-60 dB.
    """
    clean, processed = _pair(clean, processed)
    clean, processed = clean - clean.mean(), processed - processed.mean()
    energy = np.dot(clean, clean)
    if energy < SILENT_ENERGY:
        raise ValueError("SI-SDR is undefined for a silent reference")
    target = (np.dot(processed, clean) / energy) * clean
    distortion = target - processed
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = 10.0 * np.log10(np.dot(target, target) / np.dot(distortion, distortion))
    if np.isnan(ratio):
        ratio = -SI_SDR_LIMIT_DB
    return float(np.clip(ratio, -SI_SDR_LIMIT_DB, SI_SDR_LIMIT_DB))
