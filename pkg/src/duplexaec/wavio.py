"""Mono 16 kHz WAV I/O (16-bit PCM or 32-bit IEEE float only)."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .dsp import SAMPLE_RATE


class WavFormatError(ValueError):
    pass


def read_wav(path) -> np.ndarray:
    """Samples as float64 in [-1, 1]; anything but mono 16 kHz int16/float32 is rejected."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        rate, data = wavfile.read(path)
    except (ValueError, EOFError, OSError) as exc:
        raise WavFormatError(f"{path}: malformed WAV ({exc})") from exc
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE}")
    if data.ndim != 1:
        raise WavFormatError(f"{path}: {data.shape[1]} channels, expected mono")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.float32:
        out = data.astype(np.float64)
        if not np.all(np.isfinite(out)):
            raise WavFormatError(f"{path}: non-finite samples")
        return out
    raise WavFormatError(f"{path}: sample format {data.dtype} not supported (int16 or float32 only)")


def write_wav(path, samples, pcm16: bool = False) -> None:
    x = np.asarray(samples, dtype=np.float64)
    if pcm16:
        data = np.round(np.clip(x, -1.0, 32767 / 32768) * 32768.0).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(Path(path), SAMPLE_RATE, data)
