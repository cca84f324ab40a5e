"""ERLE, SER, a frame-energy VAD and the detection cost function."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .dsp import SAMPLE_RATE

ERLE_CAP_DB = 120.0
VAD_HOP = 320
# mean-square energy at or below this is digital silence
SILENCE_ENERGY = 1e-12


@dataclass(frozen=True)
class DcfWeights:
    w_false: float = 0.75
    w_miss: float = 0.25

    def __post_init__(self):
        if abs(self.w_false + self.w_miss - 1.0) > 1e-12:
            raise ValueError("DCF weights must sum to 1")


def _energy(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.dot(x, x))


def erle(mic, processed) -> float:
    """Echo return loss enhancement in dB, capped at 120 dB for a silent output."""
    mic = np.asarray(mic, dtype=np.float64)
    processed = np.asarray(processed, dtype=np.float64)
    if len(mic) != len(processed):
        raise ValueError(f"length mismatch: {len(mic)} vs {len(processed)}")
    e_mic = _energy(mic)
    if e_mic == 0.0:
        raise ValueError("mic signal is silent; ERLE undefined")
    e_out = _energy(processed)
    if e_out == 0.0:
        return ERLE_CAP_DB
    return float(min(10.0 * np.log10(e_mic / e_out), ERLE_CAP_DB))


def windowed_erle(mic, processed, window_s: float = 1.0) -> np.ndarray:
    """ERLE over consecutive non-overlapping windows (trailing partial window dropped)."""
    n = int(window_s * SAMPLE_RATE)
    count = min(len(mic), len(processed)) // n
    return np.array([erle(mic[k * n:(k + 1) * n], processed[k * n:(k + 1) * n]) for k in range(count)])


def ser(speech, echo) -> float:
    """Signal-to-echo ratio in dB; ``inf`` when the echo is silent."""
    speech = np.asarray(speech, dtype=np.float64)
    echo = np.asarray(echo, dtype=np.float64)
    if len(speech) != len(echo):
        raise ValueError(f"length mismatch: {len(speech)} vs {len(echo)}")
    e_echo = _energy(echo)
    if e_echo == 0.0:
        return float("inf")
    e_speech = _energy(speech)
    if e_speech == 0.0:
        raise ValueError("speech signal is silent; SER undefined")
    return float(10.0 * np.log10(e_speech / e_echo))


def frame_energies_db(signal, hop: int = VAD_HOP) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    n_frames = -(-len(x) // hop)
    padded = np.zeros(n_frames * hop)
    padded[:len(x)] = x
    ms = np.mean(padded.reshape(n_frames, hop) ** 2, axis=1)
    return 10.0 * np.log10(np.maximum(ms, SILENCE_ENERGY))


def energy_vad(signal, threshold_db: float = -30.0, hangover_frames: int = 0,
               hop: int = VAD_HOP) -> np.ndarray:
    """Per-frame activity: energy within ``threshold_db`` of the 95th-percentile frame.

    Digital silence is never active.  Each active frame keeps the following
    ``hangover_frames`` frames active too.
    """
    e_db = frame_energies_db(signal, hop)
    if len(e_db) == 0:
        return np.zeros(0, dtype=bool)
    silent_db = 10.0 * np.log10(SILENCE_ENERGY)
    ref_db = np.percentile(e_db, 95)
    raw = (e_db >= ref_db + threshold_db) & (e_db > silent_db)
    if hangover_frames <= 0:
        return raw
    out = raw.copy()
    for k in np.flatnonzero(raw):
        out[k:k + hangover_frames + 1] = True
    return out


@dataclass(frozen=True)
class DcfResult:
    dcf: float
    p_false: float
    p_miss: float


def dcf_rates(decisions, truth, weights: DcfWeights = DcfWeights()) -> DcfResult:
    d = np.asarray(decisions).astype(bool)
    t = np.asarray(truth).astype(bool)
    if d.shape != t.shape:
        raise ValueError(f"label length mismatch: {d.shape} vs {t.shape}")
    n_inactive = int(np.sum(~t))
    n_active = int(np.sum(t))
    if n_inactive == 0:
        warnings.warn("truth has no inactive frames; P_false set to 0", RuntimeWarning, stacklevel=2)
        p_false = 0.0
    else:
        p_false = float(np.sum(d & ~t)) / n_inactive
    if n_active == 0:
        warnings.warn("truth has no active frames; P_miss set to 0", RuntimeWarning, stacklevel=2)
        p_miss = 0.0
    else:
        p_miss = float(np.sum(~d & t)) / n_active
    return DcfResult(dcf_from_rates(p_false, p_miss, weights), p_false, p_miss)


def dcf_from_rates(p_false: float, p_miss: float, weights: DcfWeights = DcfWeights()) -> float:
    return weights.w_false * p_false + weights.w_miss * p_miss


def dcf(decisions, truth, weights: DcfWeights = DcfWeights()) -> float:
    return dcf_rates(decisions, truth, weights).dcf


@dataclass
class EvalReport:
    """One row of an evaluation report; fields that were not measured stay ``None``."""

    erle_db: float | None = None
    dcf: float | None = None
    p_false: float | None = None
    p_miss: float | None = None
    ser_db: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def reports_to_json(reports: list[tuple[str, EvalReport]]) -> str:
    return json.dumps([{"pair": name, **rep.to_dict()} for name, rep in reports], indent=2)
