"""Streaming DFSMN mask estimator for residual echo suppression.

Network layout (``x @ W`` convention throughout)::

    features (R, Y, X_laec log-magnitudes, normalised)
      -> input projection                     m_0 = f W_0 + b_0
      -> DFSMN layer l = 1..S*L
           h_t = relu(m_{l-1,t} W_in + b_in)
           p_t = h_t V
           m_{l,t} = m_{l-1,t} + p_t + sum_{i=0..N} a_i * p_{t-i}
      -> sigmoid head after the last layer of every stage

Intermediate stages emit one speech mask; the final stage emits the
(speech, echo) mask pair.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dsp import log_magnitude


@dataclass(frozen=True)
class DfsmnConfig:
    input_dim: int = 963
    hidden_dim: int = 128
    proj_dim: int = 80
    stages: int = 3
    layers_per_stage: int = 3
    lookback_frames: int = 20
    lookahead_frames: int = 0
    bins: int = 321

    def __post_init__(self):
        if self.lookahead_frames != 0:
            raise ValueError("lookahead_frames must be 0 (strictly causal model)")
        if self.stages < 1 or self.layers_per_stage < 1:
            raise ValueError("need at least one stage and one layer per stage")
        for name in ("input_dim", "hidden_dim", "proj_dim", "bins"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lookback_frames < 0:
            raise ValueError("lookback_frames must be >= 0")

    @property
    def n_layers(self) -> int:
        return self.stages * self.layers_per_stage

    def head_dim(self, stage: int) -> int:
        return 2 * self.bins if stage == self.stages - 1 else self.bins


def param_shapes(config: DfsmnConfig) -> dict[str, tuple[int, ...]]:
    """Trainable tensors in their canonical (file) order."""
    c = config
    shapes = {"input.weight": (c.input_dim, c.proj_dim), "input.bias": (c.proj_dim,)}
    for l in range(c.n_layers):
        shapes[f"layer{l}.w_in"] = (c.proj_dim, c.hidden_dim)
        shapes[f"layer{l}.b_in"] = (c.hidden_dim,)
        shapes[f"layer{l}.v"] = (c.hidden_dim, c.proj_dim)
        shapes[f"layer{l}.memory"] = (c.proj_dim, c.lookback_frames + 1)
    for s in range(c.stages):
        shapes[f"head{s}.weight"] = (c.proj_dim, c.head_dim(s))
        shapes[f"head{s}.bias"] = (c.head_dim(s),)
    return shapes


def norm_shapes(config: DfsmnConfig) -> dict[str, tuple[int, ...]]:
    return {"norm.mean": (config.input_dim,), "norm.std": (config.input_dim,)}


def count_params(config: DfsmnConfig) -> int:
    """Trainable parameter count; normalisation statistics are not included."""
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


@dataclass(frozen=True)
class DfsmnModel:
    config: DfsmnConfig
    params: dict[str, np.ndarray]
    feat_mean: np.ndarray
    feat_std: np.ndarray

    def __post_init__(self):
        shapes = param_shapes(self.config)
        if list(self.params) != list(shapes):
            missing = set(shapes) ^ set(self.params)
            raise ValueError(f"parameter set does not match config: {sorted(missing) or 'order differs'}")
        for name, arr in self.params.items():
            if arr.shape != shapes[name]:
                raise ValueError(f"{name}: expected shape {shapes[name]}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite weights")
        for name, arr in (("norm.mean", self.feat_mean), ("norm.std", self.feat_std)):
            if arr.shape != (self.config.input_dim,):
                raise ValueError(f"{name}: expected shape ({self.config.input_dim},), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite values")
        if not np.all(self.feat_std > 0):
            raise ValueError("norm.std must be strictly positive")
        for arr in (*self.params.values(), self.feat_mean, self.feat_std):
            arr.setflags(write=False)

    @property
    def dtype(self):
        return self.params["input.weight"].dtype

    def tensors(self) -> dict[str, np.ndarray]:
        return {**self.params, "norm.mean": self.feat_mean, "norm.std": self.feat_std}

    def new_state(self) -> "ResState":
        return ResState(self.config, self.dtype)


def init_model(config: DfsmnConfig, rng: np.random.Generator | int | None = None,
               dtype=np.float32, zero: bool = False) -> DfsmnModel:
    """Randomly initialised model (Glorot-style weights, small memory taps)."""
    rng = np.random.default_rng(rng)
    params = {}
    for name, shape in param_shapes(config).items():
        if zero or name.endswith("bias") or name.endswith("b_in"):
            arr = np.zeros(shape)
        elif name.endswith("memory"):
            arr = rng.uniform(-0.5, 0.5, shape) / shape[1]
        else:
            arr = rng.standard_normal(shape) * np.sqrt(2.0 / sum(shape))
        params[name] = arr.astype(dtype)
    return DfsmnModel(config, params, np.zeros(config.input_dim, dtype=dtype),
                      np.ones(config.input_dim, dtype=dtype))


@dataclass
class MaskSet:
    stage_masks: list[np.ndarray]
    m_x: np.ndarray
    m_r: np.ndarray

    def all_masks(self) -> list[np.ndarray]:
        return [*self.stage_masks, self.m_x, self.m_r]


class ResState:
    """Per-layer history of the last ``lookback_frames`` projections (row 0 = t-1)."""

    def __init__(self, config: DfsmnConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.reset()

    def reset(self) -> None:
        c = self.config
        self.history = [np.zeros((c.lookback_frames, c.proj_dim), dtype=self.dtype)
                        for _ in range(c.n_layers)]


def sigmoid(z):
    # split form avoids overflow in exp for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def frame_features(ref_f, mic_f, laec_f) -> np.ndarray:
    return np.concatenate([log_magnitude(ref_f), log_magnitude(mic_f), log_magnitude(laec_f)])


def res_forward_features(model: DfsmnModel, state: ResState, features) -> MaskSet:
    """One streaming step from a raw (un-normalised) feature vector."""
    c = model.config
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape != (c.input_dim,):
        raise ValueError(f"feature vector has shape {feats.shape}, model expects ({c.input_dim},)")
    P = model.params
    dt = model.dtype
    f = ((feats - model.feat_mean) / model.feat_std).astype(dt)
    m = f @ P["input.weight"] + P["input.bias"]
    stage_masks = []
    for l in range(c.n_layers):
        h = np.maximum(m @ P[f"layer{l}.w_in"] + P[f"layer{l}.b_in"], 0)
        p = h @ P[f"layer{l}.v"]
        a = P[f"layer{l}.memory"]
        past = state.history[l]
        mem = a[:, 0] * p
        if c.lookback_frames:
            mem = mem + np.sum(a[:, 1:].T * past, axis=0)
            past[1:] = past[:-1]
            past[0] = p
        m = m + p + mem
        if (l + 1) % c.layers_per_stage == 0:
            s = l // c.layers_per_stage
            out = sigmoid(m @ P[f"head{s}.weight"] + P[f"head{s}.bias"])
            if s < c.stages - 1:
                stage_masks.append(out)
            else:
                return MaskSet(stage_masks, out[:c.bins], out[c.bins:])
    raise AssertionError("unreachable: final head always returns")


def res_forward(model: DfsmnModel, state: ResState, ref_f, mic_f, laec_f) -> MaskSet:
    """Masks for one frame given the reference, mic and LAEC-output spectra."""
    bins = model.config.bins
    for name, fr in (("reference", ref_f), ("mic", mic_f), ("laec", laec_f)):
        if np.shape(fr) != (bins,):
            raise ValueError(f"{name} frame has shape {np.shape(fr)}, model expects ({bins},)")
    if 3 * bins != model.config.input_dim:
        raise ValueError(f"model input_dim {model.config.input_dim} != 3 x {bins} bins")
    return res_forward_features(model, state, frame_features(ref_f, mic_f, laec_f))


def res_forward_sequence(model: DfsmnModel, state: ResState, features) -> list[MaskSet]:
    """Frame-by-frame pass over a ``(frames, input_dim)`` feature matrix."""
    return [res_forward_features(model, state, f) for f in np.asarray(features)]


def stack_masks(masks: list[MaskSet]) -> MaskSet:
    if not masks:
        raise ValueError("no frames")
    n_stages = len(masks[0].stage_masks)
    return MaskSet([np.stack([m.stage_masks[k] for m in masks]) for k in range(n_stages)],
                   np.stack([m.m_x for m in masks]), np.stack([m.m_r for m in masks]))
