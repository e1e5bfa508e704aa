#!/usr/bin/env python3
"""
System test script for the speech enhancement package
This script checks every component end to end before you train or run the app
"""

import io
import sys
import tempfile
import traceback
from datetime import datetime
from pathlib import Path

import numpy as np


def test_imports():
    """Third-party stack"""
    print("🔍 Importing the numeric and audio stack...")

    import torch
    print(f"✅ PyTorch {torch.__version__} imported successfully")
    import scipy
    print(f"✅ SciPy {scipy.__version__} imported successfully")
    import soundfile
    print(f"✅ SoundFile imported successfully (libsndfile {soundfile.__libsndfile_version__})")
    import pystoi  # noqa: F401
    print("✅ pystoi imported successfully")
    import pandas  # noqa: F401
    print("✅ pandas imported successfully")
    import streamlit  # noqa: F401
    print("✅ Streamlit imported successfully")
    import matplotlib.pyplot  # noqa: F401
    print("✅ Matplotlib imported successfully")


def test_custom_modules():
    """Every package module imports cleanly"""
    print("\n🔍 Importing package modules...")

    modules = ['dsp_core', 'pitch_filter', 'feature_extractor', 'network', 'losses', 'post_processor',
               'audio_data', 'metrics', 'enhancement_engine', 'trainer', 'cli', 'utils', 'ui_helpers']
    for name in modules:
        __import__(name)
        print(f"✅ {name} imported successfully")


def test_signal_chain():
    """Test the STFT and filterbank the features are built on"""
    print("\n🔍 Testing signal chain...")

    from dsp_core import NUM_BANDS, design_erb_filterbank, istft, stft
    from audio_data import synth_speech

    fb = design_erb_filterbank()
    assert fb.num_bands == NUM_BANDS
    print(f"✅ ERB filterbank with {fb.num_bands} bands")

    x = synth_speech(0.5, seed=0)
    y = istft(stft(x), length=len(x))
    error = np.max(np.abs(x[960:-960] - y[960:-960]))
    assert error < 1e-9
    print(f"✅ STFT round trip error {error:.2e}")


def test_network():
    """Test model construction and streaming inference"""
    print("\n🔍 Testing network...")

    import torch
    from feature_extractor import FC_DIM, FO_DIM
    from network import ModelConfig, PercepNetPlus

    model = PercepNetPlus(ModelConfig.desk())
    print(f"✅ Desk model with {model.parameter_count():,} parameters")
    print(f"ℹ️ Full preset would have {ModelConfig.full().parameter_count():,} parameters")

    state = model.initial_state()
    outputs = [model.step(torch.zeros(1, FO_DIM), torch.zeros(1, FC_DIM), state) for _ in range(5)]
    assert outputs[2] is None and outputs[3] is not None
    print("✅ Streaming step emits after three frames of lookahead")


def test_enhancement():
    """Test the full enhancement pipeline with oracle gains"""
    print("\n🔍 Testing enhancement...")

    from audio_data import mix, synth_speech, white_noise
    from enhancement_engine import ConstantGainSource, EnhanceConfig, OracleGainSource, enhance_file
    from metrics import si_sdr, stoi

    clean = synth_speech(1.5, seed=1)
    noisy, noise = mix(clean, white_noise(1.5, seed=2), 0.0, seed=3)
    clean = noisy - noise

    identity = enhance_file(noisy, ConstantGainSource(), EnhanceConfig(pp_mode='never')).samples
    assert np.max(np.abs(identity - noisy)) < 1e-6
    print("✅ Identity gains reproduce the input")

    enhanced = enhance_file(noisy, OracleGainSource(clean, noise)).samples
    before, after = si_sdr(clean, noisy), si_sdr(clean, enhanced)
    print(f"✅ Oracle gains: SI-SDR {before:.2f} → {after:.2f} dB, "
          f"STOI {stoi(clean, noisy, 48000):.3f} → {stoi(clean, enhanced, 48000):.3f}")
    assert after > before


def test_export_functionality():
    """Test WAV export used by the app and the CLI"""
    print("\n🔍 Testing export functionality...")

    import soundfile as sf
    import utils
    from audio_data import read_wav, synth_speech, write_wav

    x = synth_speech(0.2, seed=4)
    data = utils.audio_to_wav_bytes(x)
    decoded, rate = sf.read(io.BytesIO(data))
    assert rate == 48000 and len(decoded) == len(x)
    print(f"✅ In-memory WAV export ({utils.format_file_size(len(data))})")

    with tempfile.TemporaryDirectory() as tmp:
        path = write_wav(Path(tmp) / 'out.wav', x)
        assert len(read_wav(path)) == len(x)
    print("✅ WAV file export")

    fig = utils.spectrogram_figure([x, x], ['a', 'b'])
    import matplotlib.pyplot as plt
    plt.close(fig)
    print("✅ Spectrogram figure")


def test_utils_helpers():
    """Test the formatting helpers"""
    print("\n🔍 Testing helpers...")

    import utils
    from dsp_core import AudioBuffer

    assert utils.format_file_size(0) == "0B"
    assert utils.format_file_size(2048) == "2.0KB"
    assert utils.sanitize_filename('a/b:c.wav') == 'a_b_c.wav'
    assert utils.sanitize_filename(' . ') == 'enhanced_audio'
    assert utils.format_improvement(1.0, 3.0).startswith("🟢")
    assert utils.format_improvement(3.0, 1.0).startswith("🔴")
    info = utils.get_audio_info(AudioBuffer(np.full(4800, 0.5)))
    assert info['samples'] == 4800 and info['peak_level'] == "-6.0 dBFS"
    print("✅ Helper functions")


def run_comprehensive_test():
    """Run all tests"""
    print("🧪 Speech Enhancement System - Comprehensive Test")
    print("=" * 60)
    print(f"Test started at: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print()

    tests = [
        ("Package Imports", test_imports),
        ("Custom Modules", test_custom_modules),
        ("Signal Chain", test_signal_chain),
        ("Network", test_network),
        ("Enhancement", test_enhancement),
        ("Export Functionality", test_export_functionality),
        ("Helpers", test_utils_helpers),
    ]

    passed = 0
    total = len(tests)

    for test_name, test_func in tests:
        print(f"\n{'=' * 20} {test_name} {'=' * 20}")
        try:
            test_func()
            passed += 1
            print(f"✅ {test_name} PASSED")
        except Exception as e:
            print(f"❌ {test_name} FAILED with exception: {e}")
            traceback.print_exc()

    print(f"\n{'=' * 60}")
    print(f"Test completed at: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print(f"Results: {passed}/{total} tests passed")

    if passed == total:
        print("🎉 Every component works end to end.")
        print("\n🚀 Try next:")
        print("   - python demo.py (for command-line demo)")
        print("   - streamlit run app.py (for web interface)")
        print("   - python cli.py --help (for training and evaluation)")
    else:
        print(f"⚠️ {total - passed} check(s) failed, see the tracebacks above.")
        print("\n💡 Usual causes:")
        print("   - Install missing packages: pip install -r requirements.txt")
        print("   - Install libsndfile (see SETUP.md)")
        print("   - Reinstall torch for your platform (python install.py --cpu)")

    return passed == total


if __name__ == "__main__":
    success = run_comprehensive_test()
    sys.exit(0 if success else 1)
