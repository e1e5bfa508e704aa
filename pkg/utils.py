import io
import os
import re
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import soundfile as sf
import streamlit as st

from audio_data import resample
from dsp_core import HOP_SIZE, SAMPLE_RATE, AudioBuffer, stft

MAX_UPLOAD_BYTES = 50 * 1024 * 1024
SPECTROGRAM_FLOOR_DB = -100.0
UNSAFE_FILENAME_CHARS = re.compile(r'[<>:"/\\|?*\x00-\x1f]')


def validate_audio_file(uploaded_file) -> bool:
    """
    Validate uploaded audio file

    Args:
        uploaded_file: Streamlit uploaded file object

    Returns:
        True if it is a WAV file under the size limit, False otherwise
    """
    if uploaded_file is None:
        return False

    file_extension = os.path.splitext(uploaded_file.name)[1].lower()
    if file_extension != '.wav':
        return False

    if uploaded_file.size > MAX_UPLOAD_BYTES:
        return False

    return True


def load_audio_upload(uploaded_file) -> Optional[AudioBuffer]:
    """
    Decode an uploaded WAV file into a 48 kHz mono buffer

    Other sample rates are resampled; multichannel input is averaged.

    Args:
        uploaded_file: Streamlit uploaded file object or any binary stream

    Returns:
        AudioBuffer, or None if the file could not be decoded
    """
    try:
        data = uploaded_file.read() if hasattr(uploaded_file, 'read') else bytes(uploaded_file)
        samples, rate = sf.read(io.BytesIO(data), dtype='float64', always_2d=True)
        samples = samples.mean(axis=1)
        if rate != SAMPLE_RATE:
            samples = resample(samples, rate, SAMPLE_RATE)
        return AudioBuffer(samples, SAMPLE_RATE)

    except Exception as e:
        st.error(f"Error loading audio: {str(e)}")
        return None


def audio_to_wav_bytes(audio: Union[AudioBuffer, np.ndarray], sample_rate: int = SAMPLE_RATE) -> bytes:
    """
    Encode audio as a 32-bit float WAV file in memory

    Args:
        audio: AudioBuffer or sample array
        sample_rate: Rate used when a bare array is given

    Returns:
        WAV file contents
    """
    if isinstance(audio, AudioBuffer):
        samples, sample_rate = audio.samples, audio.sample_rate
    else:
        samples = np.asarray(audio, dtype=np.float64)
    buffer = io.BytesIO()
    sf.write(buffer, samples, sample_rate, format='WAV', subtype='FLOAT')
    return buffer.getvalue()


def get_audio_info(audio: AudioBuffer) -> dict:
    """
    Get basic information about a signal

    Args:
        audio: Input buffer

    Returns:
        Dictionary with duration, rate, length and levels
    """
    samples = audio.samples
    rms = float(np.sqrt(np.mean(samples ** 2))) if len(samples) else 0.0
    peak = float(np.max(np.abs(samples))) if len(samples) else 0.0
    return {
        'duration': f"{audio.duration:.2f} s",
        'sample_rate': f"{audio.sample_rate} Hz",
        'samples': len(samples),
        'rms_level': f"{20 * np.log10(max(rms, 1e-10)):.1f} dBFS",
        'peak_level': f"{20 * np.log10(max(peak, 1e-10)):.1f} dBFS",
    }


def spectrogram_db(samples: np.ndarray) -> np.ndarray:
    """Log-magnitude spectrogram, shape (bins, frames)"""
    spectra = stft(np.asarray(samples, dtype=np.float64))
    return np.maximum(20 * np.log10(np.abs(spectra).T + 1e-10), SPECTROGRAM_FLOOR_DB)


def spectrogram_figure(signals: Sequence[np.ndarray], titles: Sequence[str],
                       sample_rate: int = SAMPLE_RATE):
    """
    Side-by-side spectrograms sharing one colour scale

    Args:
        signals: Sample arrays to plot
        titles: One title per signal
        sample_rate: Sample rate of every signal

    Returns:
        Matplotlib figure
    """
    fig, axes = plt.subplots(1, len(signals), figsize=(8 * len(signals), 5), squeeze=False)
    images = [spectrogram_db(s) for s in signals]
    vmax = max(float(img.max()) for img in images)

    for ax, img, title in zip(axes[0], images, titles):
        extent = (0, img.shape[1] * HOP_SIZE / sample_rate, 0, sample_rate / 2000)
        ax.imshow(img, origin='lower', aspect='auto', extent=extent,
                  vmin=vmax - 80, vmax=vmax, cmap='magma')
        ax.set_title(title)
        ax.set_xlabel('Time (s)')
        ax.set_ylabel('Frequency (kHz)')

    fig.tight_layout()
    return fig


def snr_track_figure(snr_track: Sequence[float], bypass_track: Sequence[bool],
                     threshold: float, hop_seconds: float = HOP_SIZE / SAMPLE_RATE):
    """
    Per-frame predicted SNR with the frames where post-processing was skipped

    Args:
        snr_track: Normalized SNR per frame
        bypass_track: True where the post-filter was bypassed
        threshold: Switch threshold on the normalized SNR
        hop_seconds: Time step between frames

    Returns:
        Matplotlib figure
    """
    snr = np.asarray(snr_track, dtype=np.float64)
    bypass = np.asarray(bypass_track, dtype=bool)
    times = np.arange(len(snr)) * hop_seconds

    fig, ax = plt.subplots(1, figsize=(16, 3))
    ax.plot(times, snr, color='tab:blue', linewidth=1, label='predicted SNR')
    ax.axhline(threshold, color='tab:red', linestyle='--', linewidth=1, label='threshold')
    ax.fill_between(times, 0, 1, where=bypass, color='tab:gray', alpha=0.25,
                    step='mid', label='post-filter bypassed')
    ax.set_ylim(0, 1)
    ax.set_xlabel('Time (s)')
    ax.set_ylabel('Normalized SNR')
    ax.legend(loc='upper right')
    fig.tight_layout()
    return fig


def loss_curve_figure(path: Union[str, Path]):
    """
    Training loss components against step, read from a loss curve CSV

    Args:
        path: CSV written during training

    Returns:
        Matplotlib figure
    """
    frame = pd.read_csv(path)
    components = [c for c in frame.columns if c not in ('epoch', 'step')]

    fig, ax = plt.subplots(1, figsize=(12, 5))
    for name in components:
        ax.plot(frame['step'], frame[name], label=name, linewidth=2 if name == 'total' else 1)
    ax.set_yscale('log')
    ax.set_xlabel('Step')
    ax.set_ylabel('Loss')
    ax.legend()
    fig.tight_layout()
    return fig


def create_comparison_view(noisy: np.ndarray, enhanced: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """
    Show noisy and enhanced spectrograms side by side

    Args:
        noisy: Input samples
        enhanced: Output samples
        sample_rate: Sample rate of both signals
    """
    try:
        fig = spectrogram_figure([noisy, enhanced], ['Noisy', 'Enhanced'], sample_rate)
        st.pyplot(fig)
        plt.close(fig)

    except Exception as e:
        st.error(f"Error creating comparison view: {str(e)}")


def display_snr_track(snr_track: Sequence[float], bypass_track: Sequence[bool], threshold: float) -> None:
    """Plot the per-frame SNR decisions in Streamlit"""
    try:
        fig = snr_track_figure(snr_track, bypass_track, threshold)
        st.pyplot(fig)
        plt.close(fig)

    except Exception as e:
        st.error(f"Error displaying SNR track: {str(e)}")


def format_file_size(size_bytes: int) -> str:
    """Size of an exported WAV for captions, e.g. 2.0KB (whole bytes below 1KB)"""
    if size_bytes < 1024:
        return f"{int(size_bytes)}B"

    size = size_bytes / 1024.0
    for unit in ("KB", "MB"):
        if size < 1024:
            return f"{size:.1f}{unit}"
        size /= 1024.0
    return f"{size:.1f}GB"


def create_download_button(data: bytes, filename: str, button_text: str, mime: str = "audio/wav") -> None:
    """
    Create a download button in Streamlit

    Args:
        data: File data as bytes
        filename: Name of the file to download
        button_text: Text to display on the button
        mime: MIME type of the data
    """
    st.download_button(
        label=button_text,
        data=data,
        file_name=filename,
        mime=mime
    )


def show_processing_progress(progress_bar, current_step: int, total_steps: int, step_name: str) -> None:
    """Advance a Streamlit progress bar and print the step name"""
    progress_bar.progress(current_step / total_steps)
    st.write(f"Step {current_step}/{total_steps}: {step_name}")


def create_metadata_display(metadata: dict, title: str = "📊 Metadata") -> None:
    """
    Display metadata as two columns of metrics

    Args:
        metadata: Dictionary containing metadata
        title: Subheader shown above the metrics
    """
    if not metadata:
        return

    st.subheader(title)
    items = list(metadata.items())
    col1, col2 = st.columns(2)

    with col1:
        for key, value in items[:len(items) // 2]:
            st.metric(key.replace('_', ' ').title(), value)

    with col2:
        for key, value in items[len(items) // 2:]:
            st.metric(key.replace('_', ' ').title(), value)


def create_error_message(error: str, error_type: str = "Error") -> None:
    st.error(f"🚨 **{error_type}**: {error}")


def create_success_message(message: str) -> None:
    st.success(f"✅ {message}")


def create_info_message(message: str) -> None:
    st.info(f"ℹ️ {message}")


def create_warning_message(message: str) -> None:
    st.warning(f"⚠️ {message}")


def format_improvement(before: float, after: float, unit: str = "dB") -> str:
    """
    Format a metric change with color coding

    Args:
        before: Score of the noisy input
        after: Score of the enhanced output
        unit: Unit appended to the delta

    Returns:
        Formatted delta string
    """
    delta = after - before
    if delta > 0.5:
        marker = "🟢"
    elif delta >= 0:
        marker = "🟡"
    else:
        marker = "🔴"
    return f"{marker} {before:.2f} → {after:.2f} ({delta:+.2f} {unit})"


def create_timestamp() -> str:
    return datetime.now().strftime("%Y-%m-%d %H:%M:%S")


def sanitize_filename(filename: str) -> str:
    """
    Turn an uploaded file name into a safe stem for the enhanced WAV

    Args:
        filename: Name as reported by the uploader

    Returns:
        Name with path separators and reserved characters replaced,
        "enhanced_audio" when nothing usable is left
    """
    cleaned = UNSAFE_FILENAME_CHARS.sub("_", filename).strip(" .")
    return cleaned or "enhanced_audio"
