import numpy as np
import pytest
from scipy.signal import lfilter

SR = 16000


def speech_shaped_noise(n, rng, level=0.1):
    """Pink-ish AR(1) noise with a slow syllabic amplitude modulation."""
    x = lfilter([1.0], [1.0, -0.9], rng.standard_normal(n))
    t = np.arange(n) / SR
    x *= 0.6 + 0.4 * np.sin(2 * np.pi * 4.0 * t + rng.uniform(0, 2 * np.pi))
    return level * x / np.sqrt(np.mean(x ** 2))


def sine(freq, n, amp=1.0, phase=0.0):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / SR + phase)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Filled by tests/test_acceptance.py: (criterion, passed, detail)
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
