"""
Standalone runner for the test_*.py files

Every test module can be run directly (python test_dsp_core.py) as well
as through pytest; this prints one line per test and a summary.
"""

import traceback
from datetime import datetime
from typing import Callable, Sequence, Tuple

import numpy as np


def run_suite(title: str, tests: Sequence[Tuple[str, Callable[[], None]]]) -> bool:
    """
    Run test functions and report each one

    Args:
        title: Suite name shown in the header
        tests: (name, function) pairs; a test fails by raising

    Returns:
        True if every test passed
    """
    print(f"🔍 {title}")
    print("=" * 60)

    passed = 0
    for test_name, test_func in tests:
        try:
            test_func()
            passed += 1
            print(f"✅ {test_name}")
        except Exception as e:
            print(f"❌ {test_name} FAILED: {e}")
            traceback.print_exc()

    print(f"\n{'=' * 60}")
    print(f"Test completed at: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print(f"Results: {passed}/{len(tests)} tests passed")
    if passed == len(tests):
        print("🎉 All tests passed!")
    else:
        print("⚠️ Some tests failed. Please check the errors above.")
    return passed == len(tests)


def collect(namespace: dict) -> Sequence[Tuple[str, Callable[[], None]]]:
    """The test_* functions of a module namespace, in definition order"""
    return [(name.replace('test_', '', 1).replace('_', ' '), func)
            for name, func in namespace.items()
            if name.startswith('test_') and callable(func)]


def energy_db(x: np.ndarray) -> float:
    return float(10.0 * np.log10(np.sum(np.asarray(x) ** 2) + 1e-300))


def sawtooth(freq: float, seconds: float, fs: int = 48000, amplitude: float = 0.3) -> np.ndarray:
    t = np.arange(int(round(seconds * fs))) / fs
    return amplitude * (2.0 * ((t * freq) % 1.0) - 1.0)
