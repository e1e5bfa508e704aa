#!/usr/bin/env python3
"""
Installation script for the full-band speech enhancer

Installs requirements.txt into the running interpreter, checks that
libsndfile can be loaded and builds the filterbank and desk model once.
Pass --cpu to pull the CPU-only torch wheel first.
"""

import subprocess
import sys

MIN_PYTHON = (3, 8)
CPU_TORCH_INDEX = "https://download.pytorch.org/whl/cpu"


def check_python_version():
    """The package uses dataclasses and typing features from 3.8 on"""
    found = sys.version_info[:2]
    if found < MIN_PYTHON:
        print(f"❌ Python {MIN_PYTHON[0]}.{MIN_PYTHON[1]}+ needed, found {found[0]}.{found[1]}")
        return False
    print(f"✅ Running on Python {found[0]}.{found[1]}")
    return True


def pip_install(*args):
    subprocess.check_call([sys.executable, "-m", "pip", "install", *args])


def install_requirements(cpu_only: bool = False):
    """
    Install the pinned stack

    Args:
        cpu_only: Install torch from the CPU wheel index before the rest

    Returns:
        True when pip finished without error
    """
    try:
        if cpu_only:
            print("📦 Installing CPU-only torch...")
            pip_install("torch", "--index-url", CPU_TORCH_INDEX)
        print("📦 Installing requirements.txt...")
        pip_install("-r", "requirements.txt")
        print("✅ Requirements installed")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ pip exited with status {e.returncode}")
        return False


def check_libsndfile():
    """soundfile needs the libsndfile shared library at import time"""
    try:
        import soundfile
        print(f"✅ libsndfile {soundfile.__libsndfile_version__} is available")
        return True
    except (ImportError, OSError) as e:
        print(f"❌ libsndfile could not be loaded: {e}")
        print("   Linux (Ubuntu/Debian): sudo apt-get install libsndfile1")
        print("   macOS: brew install libsndfile")
        return False


def smoke_test():
    """Import the stack and build the pieces every command needs"""
    print("\n🧪 Building filterbank and model...")

    try:
        import matplotlib  # noqa: F401
        import pandas  # noqa: F401
        import pystoi  # noqa: F401
        import scipy  # noqa: F401
        import streamlit  # noqa: F401
        import torch
        import tqdm  # noqa: F401

        from dsp_core import design_erb_filterbank
        from network import ModelConfig, PercepNetPlus
    except ImportError as e:
        print(f"❌ Missing package: {e.name or e}")
        return False

    fb = design_erb_filterbank()
    print(f"✅ ERB filterbank built: {fb.num_bands} bands over {fb.num_bins} bins")
    model = PercepNetPlus(ModelConfig.desk())
    print(f"✅ Desk model built: {model.parameter_count():,} parameters")
    print(f"ℹ️ torch {torch.__version__}, {torch.get_num_threads()} CPU threads")
    return True


def main():
    print("🔊 Full-Band Speech Enhancement - Installation")
    print("=" * 50)

    steps = [
        check_python_version,
        lambda: install_requirements(cpu_only="--cpu" in sys.argv[1:]),
        check_libsndfile,
        smoke_test,
    ]
    if all(step() for step in steps):
        print("\n🎉 Ready. Next steps:")
        print("   python test_system.py")
        print("   streamlit run app.py")
        print("   python cli.py --help")
        return 0

    print("\n❌ Setup stopped at the step marked ❌ above.")
    return 1


if __name__ == "__main__":
    sys.exit(main())
