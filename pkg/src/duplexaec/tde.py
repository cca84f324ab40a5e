"""Reference-to-microphone delay estimation with blockwise GCC-PHAT."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len

from .dsp import SAMPLE_RATE, as_samples

BLOCK_LEN = 4096
PHAT_FLOOR = 1e-8
MIN_SECONDS = 1.0
MAX_SEARCH_MS = 1000


@dataclass(frozen=True)
class DelayEstimate:
    delay_samples: int
    confidence: float

    @property
    def delay_ms(self) -> float:
        return 1000.0 * self.delay_samples / SAMPLE_RATE


def gcc_phat_correlogram(reference, mic, max_delay: int, block_len: int = BLOCK_LEN) -> np.ndarray:
    """Block-averaged PHAT correlation for lags ``0..max_delay`` (mic lagging).

    Each mic block ``mic[s:s+B]`` is correlated against the reference span
    ``ref[s-max_delay:s+B]`` so lags longer than the block are still covered.
    """
    ref = np.asarray(reference, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    n = min(len(ref), len(mic))
    hop = block_len // 2
    nfft = next_fast_len(2 * block_len + max_delay)
    padded_ref = np.concatenate([np.zeros(max_delay), ref[:n]])
    acc = np.zeros(nfft // 2 + 1, dtype=np.complex128)
    starts = range(0, max(n - block_len, 0) + 1, hop)
    for s in starts:
        m_blk = mic[s:s + block_len]
        r_blk = padded_ref[s:s + max_delay + block_len]
        M = np.fft.rfft(m_blk, n=nfft)
        R = np.fft.rfft(r_blk, n=nfft)
        cross = M * np.conj(R)
        acc += cross / np.maximum(np.abs(cross), PHAT_FLOOR)
    cc = np.fft.irfft(acc / len(starts), n=nfft)
    # mic[s+i] ~ ref[s+i-d] sits at r_blk index i+max_delay-d, i.e. circular lag d-max_delay
    lags = np.arange(max_delay + 1) - max_delay
    return cc[lags % nfft]


def estimate_delay(reference, mic, max_delay_ms: int = 500) -> DelayEstimate:
    """Estimate how many samples ``mic`` lags ``reference``."""
    ref = as_samples(reference, "reference")
    mic = as_samples(mic, "mic")
    if not 0 <= max_delay_ms <= MAX_SEARCH_MS:
        raise ValueError(f"max_delay_ms must lie in [0, {MAX_SEARCH_MS}], got {max_delay_ms}")
    min_len = int(MIN_SECONDS * SAMPLE_RATE)
    if len(ref) < min_len or len(mic) < min_len:
        raise ValueError(f"delay estimation needs at least {MIN_SECONDS:g} s of both signals")
    if not np.any(ref) or not np.any(mic):
        raise ValueError("no correlation: reference or mic is all zeros")

    max_delay = int(round(max_delay_ms * SAMPLE_RATE / 1000))
    cc = gcc_phat_correlogram(ref, mic, max_delay)
    peak = int(np.argmax(cc))
    top = cc[peak]
    if not top > 0:
        raise ValueError("no correlation: correlogram has no positive peak")

    rest = cc.copy()
    rest[max(peak - 2, 0):peak + 3] = -np.inf
    second = float(np.max(rest)) if np.isfinite(rest).any() else 0.0
    confidence = float(np.clip(1.0 - max(second, 0.0) / top, 0.0, 1.0))
    return DelayEstimate(delay_samples=peak, confidence=confidence)


def align(reference, mic, delay: DelayEstimate) -> tuple[np.ndarray, np.ndarray]:
    """Delay the reference by the estimate and trim both to a common length."""
    ref = np.asarray(reference, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    shifted = np.concatenate([np.zeros(delay.delay_samples), ref])
    n = min(len(shifted), len(mic))
    return shifted[:n], mic[:n].copy()
