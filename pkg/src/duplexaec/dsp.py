"""Streaming STFT analysis/synthesis shared by every stage of the canceller.

Audio is carried around as plain 1-D ``float64`` numpy arrays at 16 kHz and
spectra as ``complex128`` arrays of ``bins`` values per frame.  Both the
analyzer and the synthesizer process one frame at a time with identical
arithmetic, so the output never depends on how the input was chunked.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class StftConfig:
    sample_rate_hz: int = SAMPLE_RATE
    frame_len: int = 640
    hop: int = 320
    fft_size: int = 640
    window: str = "hann"

    def __post_init__(self):
        if self.sample_rate_hz != SAMPLE_RATE:
            raise ValueError(f"only {SAMPLE_RATE} Hz is supported, got {self.sample_rate_hz}")
        if self.frame_len != 2 * self.hop:
            raise ValueError("hop must be exactly half the frame length")
        if self.fft_size < self.frame_len:
            raise ValueError("fft_size must be >= frame_len")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def latency_samples(self) -> int:
        return self.frame_len - self.hop

    def analysis_window(self) -> np.ndarray:
        return periodic_hann(self.frame_len)


def periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def as_samples(x, name: str = "samples") -> np.ndarray:
    """Coerce to a 1-D float64 array and reject NaN/Inf."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ValueError(f"{name} contains a non-finite value at index {bad}")
    return arr


class StftAnalyzer:
    """Windowed forward transform fed by an input sample FIFO.

    The first frame is emitted once ``frame_len`` samples have arrived and
    every ``hop`` samples after that.
    """

    def __init__(self, config: StftConfig | None = None):
        self.config = config or StftConfig()
        self._window = self.config.analysis_window()
        self.reset()

    def reset(self) -> None:
        self._fifo = np.zeros(0)

    def push(self, samples) -> np.ndarray:
        """Append samples; return the completed frames as ``(n, bins)``."""
        x = as_samples(samples)
        cfg = self.config
        buf = np.concatenate([self._fifo, x])
        n_frames = 0 if len(buf) < cfg.frame_len else (len(buf) - cfg.frame_len) // cfg.hop + 1
        out = np.empty((n_frames, cfg.bins), dtype=np.complex128)
        for k in range(n_frames):
            seg = buf[k * cfg.hop:k * cfg.hop + cfg.frame_len]
            out[k] = np.fft.rfft(seg * self._window, n=cfg.fft_size)
        self._fifo = buf[n_frames * cfg.hop:].copy()
        return out


class StftSynthesizer:
    """Overlap-add inverse of :class:`StftAnalyzer`.

    Each frame yields ``hop`` output samples.  The synthesis window is the
    analysis window again and the overlap-added result is divided by the
    summed squared window, which makes the round trip exact once two frames
    overlap (the first ``hop`` samples are warm-up).
    """

    def __init__(self, config: StftConfig | None = None):
        self.config = config or StftConfig()
        w = self.config.analysis_window()
        self._window = w
        hop = self.config.hop
        self._norm = w[:hop] ** 2 + w[hop:] ** 2
        self.reset()

    def reset(self) -> None:
        self._acc = np.zeros(self.config.frame_len)

    def push(self, frame) -> np.ndarray:
        cfg = self.config
        frame = np.asarray(frame)
        if frame.shape != (cfg.bins,):
            raise ValueError(f"expected a frame of {cfg.bins} bins, got shape {frame.shape}")
        seg = np.fft.irfft(frame, n=cfg.fft_size)[:cfg.frame_len] * self._window
        self._acc += seg
        out = self._acc[:cfg.hop] / self._norm
        self._acc = np.concatenate([self._acc[cfg.hop:], np.zeros(cfg.hop)])
        return out

    def push_many(self, frames) -> np.ndarray:
        frames = np.asarray(frames)
        if len(frames) == 0:
            return np.zeros(0)
        return np.concatenate([self.push(f) for f in frames])


def stft(x, config: StftConfig | None = None) -> np.ndarray:
    """Single-pass analysis of a whole buffer."""
    return StftAnalyzer(config).push(x)


def istft(frames, config: StftConfig | None = None) -> np.ndarray:
    """Single-pass synthesis; returns ``hop`` samples per frame, aligned with the input."""
    return StftSynthesizer(config).push_many(frames)


def analyze(x, config: StftConfig | None = None) -> np.ndarray:
    """Frames for a whole buffer, primed with one hop of leading zeros and
    padded at the tail so that :func:`synthesize` reproduces every sample."""
    cfg = config or StftConfig()
    x = as_samples(x)
    tail = cfg.latency_samples + (-len(x)) % cfg.hop
    return StftAnalyzer(cfg).push(np.concatenate([np.zeros(cfg.hop), x, np.zeros(tail)]))


def synthesize(frames, n: int, config: StftConfig | None = None) -> np.ndarray:
    """Inverse of :func:`analyze`: drop the priming hop and trim to ``n`` samples."""
    cfg = config or StftConfig()
    y = StftSynthesizer(cfg).push_many(frames)
    return y[cfg.hop:cfg.hop + n]


def log_magnitude(frame) -> np.ndarray:
    return np.log(np.maximum(np.abs(frame), LOG_FLOOR))
