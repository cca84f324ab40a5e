"""Linear echo canceller: per-bin multi-tap NLMS in the STFT domain."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import StftConfig, analyze, as_samples, synthesize

NORM_CAP = 10.0
POWER_SMOOTHING = 0.99
# keeps the step finite while the reference is digital silence
ABS_EPS = 1e-12


@dataclass(frozen=True)
class LaecConfig:
    taps: int = 10
    step_size: float = 0.5
    regularization: float = 1e-3
    bins: int = 321

    def __post_init__(self):
        if self.taps < 1:
            raise ValueError("taps must be >= 1")
        if not 0.0 < self.step_size <= 1.0:
            raise ValueError("step_size must lie in (0, 1]")
        if not self.regularization > 0.0:
            raise ValueError("regularization must be positive")


class LaecState:
    """Filters, reference history and smoothed reference power for one stream.

    ``history[:, 0]`` is the current reference frame, ``history[:, l]`` the
    frame ``l`` hops back.
    """

    def __init__(self, config: LaecConfig | None = None):
        self.config = config or LaecConfig()
        self.reset()

    def reset(self) -> None:
        c = self.config
        self.weights = np.zeros((c.bins, c.taps), dtype=np.complex128)
        self.history = np.zeros((c.bins, c.taps), dtype=np.complex128)
        self.ref_power = np.zeros(c.bins)
        self.frames_seen = 0

    def snapshot(self) -> tuple:
        return (self.weights.copy(), self.history.copy(), self.ref_power.copy(), self.frames_seen)

    def restore(self, snap: tuple) -> None:
        w, h, p, n = snap
        self.weights, self.history, self.ref_power, self.frames_seen = w.copy(), h.copy(), p.copy(), n


def laec_process(state: LaecState, ref_frame, mic_frame, adapt: bool = True) -> np.ndarray:
    """Cancel the linear echo in one mic frame; returns the error spectrum (X_laec)."""
    cfg = state.config
    ref_frame = np.asarray(ref_frame, dtype=np.complex128)
    mic_frame = np.asarray(mic_frame, dtype=np.complex128)
    if ref_frame.shape != (cfg.bins,) or mic_frame.shape != (cfg.bins,):
        raise ValueError(f"frames must have {cfg.bins} bins")
    snap = state.snapshot()
    try:
        if not (np.all(np.isfinite(ref_frame)) and np.all(np.isfinite(mic_frame))):
            raise FloatingPointError("non-finite value in LAEC input frame")
        hist = state.history
        hist[:, 1:] = hist[:, :-1]
        hist[:, 0] = ref_frame
        inst = np.abs(ref_frame) ** 2
        if state.frames_seen == 0:
            state.ref_power = inst
        else:
            state.ref_power = POWER_SMOOTHING * state.ref_power + (1 - POWER_SMOOTHING) * inst
        state.frames_seen += 1

        echo_est = np.sum(np.conj(state.weights) * hist, axis=1)
        err = mic_frame - echo_est
        if adapt:
            hist_energy = np.sum(np.abs(hist) ** 2, axis=1)
            denom = hist_energy + cfg.regularization * state.ref_power + ABS_EPS
            w = state.weights + cfg.step_size * hist * (np.conj(err) / denom)[:, None]
            norms = np.linalg.norm(w, axis=1)
            over = norms > NORM_CAP
            w[over] *= (NORM_CAP / norms[over])[:, None]
            state.weights = w
        if not np.all(np.isfinite(err)) or not np.all(np.isfinite(state.weights)):
            raise FloatingPointError("LAEC produced a non-finite value")
    except FloatingPointError:
        state.restore(snap)
        raise
    return err


def laec_frames(state: LaecState, ref_frames, mic_frames, adapt: bool = True) -> np.ndarray:
    return np.stack([laec_process(state, r, m, adapt) for r, m in zip(ref_frames, mic_frames)])


def laec_run(reference, mic, config: LaecConfig | None = None,
             stft_config: StftConfig | None = None) -> np.ndarray:
    """Run the canceller over whole buffers; the output is sample-aligned with ``mic``."""
    ref = as_samples(reference, "reference")
    mic = as_samples(mic, "mic")
    if len(ref) != len(mic):
        raise ValueError(f"length mismatch: reference {len(ref)} vs mic {len(mic)} samples")
    scfg = stft_config or StftConfig()
    R = analyze(ref, scfg)
    Y = analyze(mic, scfg)
    E = laec_frames(LaecState(config or LaecConfig(bins=scfg.bins)), R, Y, adapt=True)
    return synthesize(E, len(mic), scfg)


def laec_residual(echo_recording, reference, config: LaecConfig | None = None) -> np.ndarray:
    """Residual echo R_laec left after cancelling a far-end single-talk recording."""
    return laec_run(reference, echo_recording, config)
