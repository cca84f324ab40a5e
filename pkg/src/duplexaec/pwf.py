"""Dual-mask Wiener post-filter with task-specific suppression exponents."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PwfConfig:
    beta_vad: float = 0.6
    beta_asr: float = 0.2
    denom_floor: float = 1e-8

    def __post_init__(self):
        if self.beta_vad < 0 or self.beta_asr < 0:
            raise ValueError("beta must be non-negative")
        if not self.denom_floor > 0:
            raise ValueError("denom_floor must be positive")


def wiener_mask(m_x, m_r, floor: float = 1e-8) -> np.ndarray:
    """``(m_x / (m_x + m_r))**2``; bins where both masks vanish are fully suppressed."""
    m_x = np.asarray(m_x, dtype=np.float64)
    m_r = np.asarray(m_r, dtype=np.float64)
    total = m_x + m_r
    live = total > floor
    ratio = np.divide(m_x, total, out=np.zeros_like(total), where=live)
    return np.clip(ratio, 0.0, 1.0) ** 2


def apply_pwf(m_pwf, beta: float, laec_frame) -> np.ndarray:
    if beta < 0:
        raise ValueError("beta must be non-negative")
    # numpy keeps 0.0 ** 0.0 == 1.0, so beta == 0 is the identity on every bin
    return np.power(np.asarray(m_pwf, dtype=np.float64), beta) * np.asarray(laec_frame)


def apply_pwf_outputs(m_pwf, laec_frame, betas: dict[str, float]) -> dict[str, np.ndarray]:
    """Several task outputs from one shared mask."""
    return {name: apply_pwf(m_pwf, beta, laec_frame) for name, beta in betas.items()}
