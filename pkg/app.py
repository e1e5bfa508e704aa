import os

import numpy as np
import streamlit as st

import utils
from cli import snr_threshold_from_db
from enhancement_engine import (ConstantGainSource, EnhanceConfig, EnhanceSession, ModelGainSource,
                                OracleGainSource, run_session)
from errors import EnhancerError
from network import ModelConfig, PercepNetPlus, load_model
from post_processor import PostprocConfig
from ui_helpers import (display_export_options, display_model_summary, display_quality_metrics,
                        display_snr_decisions, display_training_curves)

GAIN_SOURCES = {
    'model': "Trained model file",
    'untrained': "Untrained desk model",
    'oracle': "Oracle gains (needs clean reference)",
    'identity': "Identity (unity gains)",
}
PP_LABELS = {
    'switch': "SNR switch",
    'always': "Always post-filter",
    'never': "Never post-filter",
}

st.set_page_config(
    page_title="Full-Band Speech Enhancement",
    page_icon="🔊",
    layout="wide",
    initial_sidebar_state="expanded"
)

st.markdown("""
<style>
    .stButton > button {
        width: 100%;
        border-radius: 20px;
        height: 3rem;
        font-size: 1.1rem;
        font-weight: bold;
    }
</style>
""", unsafe_allow_html=True)

if 'enhanced' not in st.session_state:
    st.session_state.enhanced = None
if 'session' not in st.session_state:
    st.session_state.session = None
if 'model' not in st.session_state:
    st.session_state.model = None


@st.cache_resource
def load_network(path: str) -> PercepNetPlus:
    """Load and cache a model file"""
    return load_model(path)


@st.cache_resource
def untrained_network() -> PercepNetPlus:
    return PercepNetPlus(ModelConfig.desk())


def main():
    """Main application function"""

    with st.sidebar:
        st.header("⚙️ Settings")

        st.subheader("🧠 Gains")
        source_kind = st.selectbox(
            "Gain source",
            options=list(GAIN_SOURCES.keys()),
            format_func=lambda k: GAIN_SOURCES[k],
            index=0
        )
        model_path = None
        if source_kind == 'model':
            model_path = st.text_input("Model file", value="model.pcpn",
                                       help="File written by `python cli.py train`")

        st.subheader("🎚️ Post-Processing")
        pp_mode = st.radio("Mode", options=list(PP_LABELS.keys()), format_func=lambda k: PP_LABELS[k])
        threshold_db = st.slider(
            "Switch threshold (dB)",
            min_value=-10.0,
            max_value=30.0,
            value=14.0,
            step=0.5,
            help="Frames whose predicted SNR exceeds this skip the MMSE-LSA post-filter"
        )

        with st.expander("Advanced Options"):
            gain_floor = st.slider("MMSE-LSA gain floor", 0.01, 0.5, 0.05, 0.01)
            median_frames = st.number_input("Switch median window (frames)", 1, 51, 5, step=2)

        st.subheader("📉 Training")
        loss_csv = st.file_uploader("Loss curve CSV", type=['csv'])

    st.header("📤 Upload Audio")
    col1, col2 = st.columns(2)
    with col1:
        noisy_file = st.file_uploader("Noisy speech (WAV)", type=['wav'])
    with col2:
        clean_file = st.file_uploader("Clean reference (optional, WAV)", type=['wav'])

    if loss_csv is not None:
        display_training_curves(loss_csv)

    if noisy_file is None:
        return

    if not utils.validate_audio_file(noisy_file):
        utils.create_error_message("Invalid file format or size. Please upload a WAV file (max 50MB).")
        return

    noisy = utils.load_audio_upload(noisy_file)
    if noisy is None:
        return
    clean = None
    if clean_file is not None and utils.validate_audio_file(clean_file):
        clean_buffer = utils.load_audio_upload(clean_file)
        clean = clean_buffer.samples if clean_buffer is not None else None

    st.audio(utils.audio_to_wav_bytes(noisy), format='audio/wav')
    utils.create_metadata_display(utils.get_audio_info(noisy), title="📊 Input")

    if st.button("🚀 Enhance", type="primary"):
        config = EnhanceConfig(
            postproc=PostprocConfig(snr_threshold_norm=snr_threshold_from_db(threshold_db),
                                    gain_floor=gain_floor, switch_median_frames=int(median_frames)),
            pp_mode=pp_mode,
        )
        process_audio(noisy.samples, clean, source_kind, model_path, config)

    if st.session_state.enhanced is not None:
        display_results(noisy.samples, clean, noisy_file.name)


def build_source(source_kind, model_path, noisy, clean):
    """Gain source for the chosen mode, plus the network behind it if any"""
    if source_kind == 'model':
        if not model_path or not os.path.isfile(model_path):
            raise EnhancerError(f"Model file not found: {model_path}")
        model = load_network(model_path)
        return ModelGainSource(model), model
    if source_kind == 'untrained':
        model = untrained_network()
        return ModelGainSource(model), model
    if source_kind == 'oracle':
        if clean is None or len(clean) != len(noisy):
            raise EnhancerError("Oracle gains need a clean reference of the same length")
        return OracleGainSource(clean, noisy - clean), None
    return ConstantGainSource(), None


def process_audio(noisy, clean, source_kind, model_path, config):
    """Run the streaming enhancer and keep the result in the session state"""

    progress_bar = st.progress(0)
    status_text = st.empty()

    try:
        utils.show_processing_progress(progress_bar, 1, 3, "Preparing gain source...")
        source, model = build_source(source_kind, model_path, noisy, clean)
        st.session_state.model = model

        utils.show_processing_progress(progress_bar, 2, 3, "Enhancing...")
        session = EnhanceSession(source, config)
        st.session_state.enhanced = run_session(session, noisy)
        st.session_state.session = session

        utils.show_processing_progress(progress_bar, 3, 3, "Processing complete!")
        utils.create_success_message("Enhancement completed successfully!")

    except EnhancerError as e:
        utils.create_error_message(str(e), type(e).__name__)
    except Exception as e:
        utils.create_error_message(f"Error during processing: {str(e)}")
    finally:
        progress_bar.empty()
        status_text.empty()


def display_results(noisy, clean, source_name):
    """Display the enhanced signal and its diagnostics"""
    enhanced = st.session_state.enhanced

    st.header("🔊 Enhanced Audio")
    st.audio(utils.audio_to_wav_bytes(enhanced), format='audio/wav')
    utils.create_comparison_view(noisy, enhanced)

    tab1, tab2, tab3, tab4 = st.tabs(["📏 Metrics", "🎚️ Switch", "🧠 Model", "📤 Export"])

    with tab1:
        display_quality_metrics(clean, noisy, enhanced)

    with tab2:
        display_snr_decisions(st.session_state.session)

    with tab3:
        display_model_summary(st.session_state.get('model'))

    with tab4:
        display_export_options(enhanced, source_name)

    if not np.any(enhanced):
        utils.create_warning_message("The enhanced signal is silent. Check the gain source and threshold.")


if __name__ == "__main__":
    main()
