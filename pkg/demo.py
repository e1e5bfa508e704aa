#!/usr/bin/env python3
"""
Demo script for the full-band speech enhancer
This script runs the enhancement pipeline without the web interface
"""

import logging

import numpy as np

from audio_data import babble_noise, mix, synth_speech, write_wav
from dsp_core import SAMPLE_RATE
from enhancement_engine import (ConstantGainSource, EnhanceConfig, EnhanceSession, OracleGainSource,
                                bench_rtf, enhance_file, run_session)
from metrics import si_sdr, stoi
from network import ModelConfig, PercepNetPlus

DEMO_SECONDS = 4.0
DEMO_SNR_DB = 5.0


def create_sample_mixture(seed: int = 7):
    """Mix synthetic speech with babble noise and save both"""
    print("🎨 Creating sample mixture...")

    speech = synth_speech(DEMO_SECONDS, seed)
    noise = babble_noise(DEMO_SECONDS, seed + 1)
    noisy, noise_scaled = mix(speech, noise, DEMO_SNR_DB, seed)
    clean = noisy - noise_scaled

    write_wav("sample_noisy.wav", noisy)
    write_wav("sample_clean.wav", clean)
    print(f"✅ Sample mixture created: sample_noisy.wav at {DEMO_SNR_DB:.0f} dB SNR")

    return clean, noisy, noise_scaled


def report(label: str, clean: np.ndarray, processed: np.ndarray):
    print(f"   {label:<22} STOI {stoi(clean, processed, SAMPLE_RATE):.3f}   "
          f"SI-SDR {si_sdr(clean, processed):6.2f} dB")


def run_demo():
    """Run the enhancement demo"""
    logging.basicConfig(level=logging.WARNING)
    print("🔊 Full-Band Speech Enhancement - Demo")
    print("=" * 50)

    clean, noisy, noise = create_sample_mixture()

    print(f"\n📊 Mixture info:")
    print(f"   Duration: {len(noisy) / SAMPLE_RATE:.2f} s at {SAMPLE_RATE} Hz")
    print(f"   Peak level: {np.max(np.abs(noisy)):.3f}")

    print("\n📏 Scores against the clean reference:")
    report("noisy input", clean, noisy)

    identity = enhance_file(noisy, ConstantGainSource(), EnhanceConfig(pp_mode='never')).samples
    report("identity pipeline", clean, identity)

    print("\n🎯 Enhancing with oracle gains...")
    for mode in ('never', 'switch', 'always'):
        session = EnhanceSession(OracleGainSource(clean, noise), EnhanceConfig(pp_mode=mode))
        enhanced = run_session(session, noisy)
        report(f"oracle, pp={mode}", clean, enhanced)
        if mode == 'switch':
            print(f"      post-filter ran on {100 * (1 - np.mean(session.bypass_track)):.0f}% of frames")
            write_wav("sample_oracle.wav", enhanced)

    print("\n🧠 Building an untrained desk-size network...")
    model = PercepNetPlus(ModelConfig.desk())
    print(f"   Parameters: {model.parameter_count():,}")
    enhanced = enhance_file(noisy, model).samples
    report("untrained network", clean, enhanced)

    print("\n⏱️ Measuring real-time factor on 5 s of audio...")
    rtf = bench_rtf(model, duration=5.0)
    if rtf < 1.0:
        print(f"✅ RTF {rtf:.3f}: faster than real time")
    else:
        print(f"⚠️ RTF {rtf:.3f}: slower than real time on this machine")

    print(f"\n🎉 Demo completed!")
    print(f"💡 To train a model and open the web interface:")
    print(f"   python cli.py mix --clean-dir CLEAN --noise-dir NOISE --out-dir data")
    print(f"   python cli.py train --data data --out runs/desk.pcpn")
    print(f"   streamlit run app.py")


if __name__ == "__main__":
    run_demo()
