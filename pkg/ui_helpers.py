from typing import Optional

import numpy as np
import streamlit as st

import utils
from dsp_core import SAMPLE_RATE
from enhancement_engine import EnhanceSession
from metrics import si_sdr, stoi
from network import PercepNetPlus

# Result panels shown by app.py once a file has been enhanced


def display_export_options(enhanced: np.ndarray, source_name: str):
    """Offer the enhanced signal as a WAV download"""
    st.subheader("📤 Export")
    try:
        wav_data = utils.audio_to_wav_bytes(enhanced, SAMPLE_RATE)
        timestamp = utils.create_timestamp().replace(":", "-").replace(" ", "_")
        stem = utils.sanitize_filename(source_name.rsplit('.', 1)[0])
        filename = f"{stem}_enhanced_{timestamp}.wav"
        st.caption(f"32-bit float WAV, {utils.format_file_size(len(wav_data))}")
        utils.create_download_button(wav_data, filename, "🔊 Download Enhanced WAV")
    except Exception as e:
        utils.create_error_message(f"Error creating WAV file: {str(e)}")


def display_quality_metrics(clean: Optional[np.ndarray], noisy: np.ndarray, enhanced: np.ndarray):
    """STOI and SI-SDR before and after enhancement, when a clean reference is available"""
    st.subheader("📏 Quality Metrics")
    if clean is None:
        utils.create_info_message("Upload a clean reference to compute STOI and SI-SDR")
        return
    if len(clean) != len(noisy):
        utils.create_warning_message(
            f"Clean reference has {len(clean)} samples, noisy input has {len(noisy)}; metrics skipped")
        return
    try:
        col1, col2 = st.columns(2)
        with col1:
            st.write("**STOI**")
            st.write(utils.format_improvement(stoi(clean, noisy, SAMPLE_RATE),
                                              stoi(clean, enhanced, SAMPLE_RATE), unit=""))
        with col2:
            st.write("**SI-SDR**")
            st.write(utils.format_improvement(si_sdr(clean, noisy), si_sdr(clean, enhanced)))
    except ValueError as e:
        utils.create_warning_message(str(e))


def display_snr_decisions(session: EnhanceSession):
    """Per-frame SNR estimates and how often the post-filter ran"""
    st.subheader("🎚️ Post-Processing Switch")
    if not session.snr_track:
        utils.create_warning_message("No frames were processed")
        return
    threshold = session.config.postproc.snr_threshold_norm
    utils.display_snr_track(session.snr_track, session.bypass_track, threshold)

    bypassed = float(np.mean(session.bypass_track))
    col1, col2, col3 = st.columns(3)
    with col1:
        st.metric("Frames", len(session.snr_track))
    with col2:
        st.metric("Post-Filtered", f"{100 * (1 - bypassed):.1f}%")
    with col3:
        st.metric("Mean SNR Estimate", f"{np.mean(session.snr_track):.2f}")


def display_model_summary(model: Optional[PercepNetPlus]):
    """Architecture settings of the loaded network"""
    st.subheader("🧠 Model")
    if model is None:
        utils.create_info_message("No network in use: gains come from the selected source")
        return
    config = model.config
    utils.create_metadata_display({
        'parameters': f"{model.parameter_count():,}",
        'tfgru_hidden': config.tfgru_hidden,
        'complex_features': str(config.complex_features),
        'tf_gru': str(config.tf_gru),
        'snr_head': str(config.snr_head),
        'lookahead': f"{config.lookahead_frames} frames",
    }, title="🧠 Architecture")


def display_training_curves(uploaded_csv):
    """Plot an uploaded loss curve CSV"""
    st.subheader("📉 Training Curves")
    if uploaded_csv is None:
        return
    try:
        fig = utils.loss_curve_figure(uploaded_csv)
        st.pyplot(fig)
        utils.plt.close(fig)
    except Exception as e:
        utils.create_error_message(f"Error reading loss curves: {str(e)}")
