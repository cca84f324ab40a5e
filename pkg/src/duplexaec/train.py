"""Desk-scale training of the DFSMN mask estimator with progressive-learning targets.

The loss is a weighted sum over stages of the mean squared error between
predicted and ideal ratio masks.  Forward and backward passes run over a
whole utterance at once in float64; the streaming engine in
:mod:`duplexaec.res` is the inference path.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, sosfilt

from .datagen import PlTargetSpec, SpecAugmentParams, draw_masks, make_pl_targets
from .dsp import SAMPLE_RATE, analyze, log_magnitude, synthesize
from .metrics import ser
from .res.dfsmn import DfsmnConfig, DfsmnModel, init_model, sigmoid

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 8
    rng_seed: int = 0
    stage_loss_weights: tuple[float, ...] | None = None
    augment: SpecAugmentParams | None = None

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainingExample:
    """Raw features ``(T, input_dim)`` and ideal masks ``(T, bins)``.

    ``stage_targets`` holds one mask per intermediate stage; the final stage
    is supervised by ``speech_mask`` (m_x) and ``echo_mask`` (m_r).
    """

    features: np.ndarray
    stage_targets: list[np.ndarray]
    speech_mask: np.ndarray
    echo_mask: np.ndarray

    def __post_init__(self):
        for m in (*self.stage_targets, self.speech_mask, self.echo_mask):
            if np.any(m < 0) or np.any(m > 1):
                raise ValueError("mask targets must lie in [0, 1]")


def stage_weights(config: DfsmnConfig, weights=None) -> np.ndarray:
    if weights is None:
        return np.full(config.stages, 1.0 / config.stages)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (config.stages,):
        raise ValueError(f"need {config.stages} stage weights, got {w.shape}")
    return w


def params64(model: DfsmnModel) -> dict[str, np.ndarray]:
    return {k: np.array(v, dtype=np.float64) for k, v in model.params.items()}


def normalize(model_or_stats, features) -> np.ndarray:
    mean, std = model_or_stats.feat_mean, model_or_stats.feat_std
    return (np.asarray(features, dtype=np.float64) - mean) / std


def _shift_down(x: np.ndarray, i: int) -> np.ndarray:
    """Row t of the result is row t-i of ``x`` (zeros before the start)."""
    if i == 0:
        return x
    out = np.zeros_like(x)
    out[i:] = x[:-i]
    return out


def _shift_up(x: np.ndarray, i: int) -> np.ndarray:
    if i == 0:
        return x
    out = np.zeros_like(x)
    out[:-i] = x[i:]
    return out


def forward(config: DfsmnConfig, params: dict, feats: np.ndarray, cache: bool = False):
    """Batched forward over one utterance of normalised features.

    Returns the list of per-stage head outputs (``(T, bins)`` for
    intermediate stages, ``(T, 2*bins)`` for the last) and, with ``cache``,
    the activations needed by :func:`backward_from_cache`.
    """
    c = config
    m = feats @ params["input.weight"] + params["input.bias"]
    acts = {"f": feats, "m": [m]}
    layer_acts = []
    heads = []
    for l in range(c.n_layers):
        z = m @ params[f"layer{l}.w_in"] + params[f"layer{l}.b_in"]
        h = np.maximum(z, 0.0)
        p = h @ params[f"layer{l}.v"]
        a = params[f"layer{l}.memory"]
        mem = np.zeros_like(p)
        for i in range(c.lookback_frames + 1):
            mem += a[:, i] * _shift_down(p, i)
        m = m + p + mem
        layer_acts.append((z, h, p))
        acts["m"].append(m)
        if (l + 1) % c.layers_per_stage == 0:
            s = l // c.layers_per_stage
            heads.append(sigmoid(m @ params[f"head{s}.weight"] + params[f"head{s}.bias"]))
    acts["layers"] = layer_acts
    return (heads, acts) if cache else heads


def head_targets(example: TrainingExample) -> list[np.ndarray]:
    return [*example.stage_targets, np.concatenate([example.speech_mask, example.echo_mask], axis=1)]


def loss_from_heads(heads, targets, weights) -> float:
    return float(sum(w * np.mean((h - t) ** 2) for h, t, w in zip(heads, targets, weights)))


def compute_loss(model: DfsmnModel, example: TrainingExample, weights=None, params=None) -> float:
    params = params if params is not None else params64(model)
    w = stage_weights(model.config, weights)
    heads = forward(model.config, params, normalize(model, example.features))
    return loss_from_heads(heads, head_targets(example), w)


def backward_from_cache(config: DfsmnConfig, params: dict, heads, acts, targets, weights) -> dict:
    c = config
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    ms = acts["m"]
    # gradient flowing into m_l, filled in from heads as we walk back
    dm = np.zeros_like(ms[-1])
    for l in reversed(range(c.n_layers)):
        if (l + 1) % c.layers_per_stage == 0:
            s = l // c.layers_per_stage
            y, t = heads[s], targets[s]
            dy = weights[s] * 2.0 * (y - t) / y.size
            dz = dy * y * (1.0 - y)
            grads[f"head{s}.weight"] += ms[l + 1].T @ dz
            grads[f"head{s}.bias"] += dz.sum(axis=0)
            dm = dm + dz @ params[f"head{s}.weight"].T
        z, h, p = acts["layers"][l]
        a = params[f"layer{l}.memory"]
        dp = dm.copy()
        da = grads[f"layer{l}.memory"]
        for i in range(c.lookback_frames + 1):
            da[:, i] += np.sum(dm * _shift_down(p, i), axis=0)
            dp += a[:, i] * _shift_up(dm, i)
        grads[f"layer{l}.v"] += h.T @ dp
        dh = dp @ params[f"layer{l}.v"].T
        dz = dh * (z > 0)
        grads[f"layer{l}.w_in"] += ms[l].T @ dz
        grads[f"layer{l}.b_in"] += dz.sum(axis=0)
        dm = dm + dz @ params[f"layer{l}.w_in"].T
    grads["input.weight"] += acts["f"].T @ dm
    grads["input.bias"] += dm.sum(axis=0)
    return grads


def backward(model: DfsmnModel, examples, weights=None, params=None,
             augment: SpecAugmentParams | None = None, rng=None) -> tuple[dict, float]:
    """Summed gradients (and summed loss) over a batch of examples."""
    if isinstance(examples, TrainingExample):
        examples = [examples]
    c = model.config
    params = params if params is not None else params64(model)
    w = stage_weights(c, weights)
    total = {k: np.zeros_like(v) for k, v in params.items()}
    total_loss = 0.0
    for ex in examples:
        feats = normalize(model, ex.features)
        if augment is not None:
            feats = augment_reference(feats, c.bins, augment, rng)
        heads, acts = forward(c, params, feats, cache=True)
        targets = head_targets(ex)
        total_loss += loss_from_heads(heads, targets, w)
        g = backward_from_cache(c, params, heads, acts, targets, w)
        for k in total:
            total[k] += g[k]
    return total, total_loss


def augment_reference(feats: np.ndarray, bins: int, params: SpecAugmentParams, rng) -> np.ndarray:
    """SpecAugment on the reference block (first ``bins`` columns) of normalised features.

    Masked cells are set to 0, i.e. the training mean.
    """
    out = feats.copy()
    freq, time = draw_masks(len(feats), bins, params, rng)
    ref = out[:, :bins]
    for start, width in freq:
        ref[:, start:start + width] = 0.0
    for start, width in time:
        ref[start:start + width, :] = 0.0
    return out


def fit_normalization(examples, min_std: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.concatenate([ex.features for ex in examples], axis=0)
    return stacked.mean(axis=0), np.maximum(stacked.std(axis=0), min_std)


def model_from_params(model: DfsmnModel, params: dict, dtype=None) -> DfsmnModel:
    dtype = dtype or model.dtype
    return DfsmnModel(model.config, {k: np.array(v, dtype=dtype) for k, v in params.items()},
                      np.array(model.feat_mean, dtype=dtype), np.array(model.feat_std, dtype=dtype))


def dataset_loss(model: DfsmnModel, params: dict, examples, weights) -> float:
    return float(np.mean([compute_loss(model, ex, weights, params) for ex in examples]))


@dataclass
class TrainResult:
    model: DfsmnModel
    losses: list[float] = field(default_factory=list)

    def write_curve(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss"])
            for epoch, loss in enumerate(self.losses):
                writer.writerow([epoch, f"{loss:.10g}"])


def train(model: DfsmnModel, dataset, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch SGD with momentum.

    ``losses[0]`` is the mean dataset loss before training and
    ``losses[e]`` the loss after epoch ``e``.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training dataset is empty")
    weights = stage_weights(model.config, config.stage_loss_weights)
    rng = np.random.default_rng(config.rng_seed)
    params = params64(model)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    losses = [dataset_loss(model, params, dataset, weights)]
    logger.info("epoch 0 loss %.6f", losses[0])
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[start:start + config.batch_size]]
            grads, _ = backward(model, batch, weights, params, config.augment, rng)
            for k in params:
                velocity[k] = config.momentum * velocity[k] - config.learning_rate * grads[k] / len(batch)
                params[k] = params[k] + velocity[k]
        loss = dataset_loss(model, params, dataset, weights)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at epoch {epoch}; lower the learning rate")
        losses.append(loss)
        logger.info("epoch %d loss %.6f", epoch, loss)
    return TrainResult(model_from_params(model, params), losses)


# ---------------------------------------------------------------------------
# Ideal masks and the tone-vs-echo toy corpus
# ---------------------------------------------------------------------------

def ideal_mask(target_spec, mix_spec, eps: float = 1e-10) -> np.ndarray:
    return np.clip(np.abs(target_spec) / np.maximum(np.abs(mix_spec), eps), 0.0, 1.0)


def features_from_spectra(R, Y, X) -> np.ndarray:
    return np.concatenate([log_magnitude(R), log_magnitude(Y), log_magnitude(X)], axis=1)


def example_from_signals(reference, mic, laec_out, speech, residual_echo,
                         pl: PlTargetSpec = PlTargetSpec()) -> TrainingExample:
    """Features and ideal masks from time-domain components (X_laec = speech + residual)."""
    R, Y, X = analyze(reference), analyze(mic), analyze(laec_out)
    targets = make_pl_targets(speech, residual_echo, pl)
    stage = [ideal_mask(analyze(t), X) for t in targets[:-1]]
    return TrainingExample(features_from_spectra(R, Y, X), stage,
                           ideal_mask(analyze(speech), X), ideal_mask(analyze(residual_echo), X))


def example_from_manifest_record(record: dict, read=None) -> TrainingExample:
    """Training example from a synthesised-corpus record (paths already resolved)."""
    if read is None:
        from .wavio import read_wav as read
    mix, ref, laec_out, resid = (read(record[k]) for k in
                                 ("mixture_path", "reference_path", "laec_out_path", "residual_echo_path"))
    targets = [read(p) for p in record["target_paths"]]
    X = analyze(laec_out)
    return TrainingExample(features_from_spectra(analyze(ref), analyze(mix), X),
                           [ideal_mask(analyze(t), X) for t in targets[:-1]],
                           ideal_mask(analyze(targets[-1]), X), ideal_mask(analyze(resid), X))


@dataclass
class ToyItem:
    """A toy mixture with its known components (kept for evaluation)."""

    example: TrainingExample
    speech: np.ndarray
    echo: np.ndarray


ECHO_BAND_HZ = (3000.0, 6000.0)


def toy_item(rng: np.random.Generator, duration_s: float = 0.6, ser_range=(-10.0, 0.0),
             pl: PlTargetSpec = PlTargetSpec()) -> ToyItem:
    """Sine "speech" (two harmonics below 2.4 kHz) against band-limited noise echo.

    The linear stage is bypassed, so the mic signal doubles as X_laec and
    the whole echo counts as residual.
    """
    n = int(duration_s * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    f0 = rng.uniform(300.0, 1200.0)
    speech = np.sin(2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi))
    speech += 0.5 * np.sin(2 * np.pi * 2 * f0 * t + rng.uniform(0, 2 * np.pi))
    sos = butter(6, list(ECHO_BAND_HZ), btype="bandpass", fs=SAMPLE_RATE, output="sos")
    reference = sosfilt(sos, rng.standard_normal(n)) * 0.1
    echo = np.convolve(reference, rng.standard_normal(4) * np.array([1.0, 0.5, 0.25, 0.125]))[:n]
    ser_db = rng.uniform(*ser_range)
    gain = math.sqrt(np.dot(echo, echo) / np.dot(speech, speech) * 10 ** (ser_db / 10))
    speech = gain * speech
    mic = speech + echo
    return ToyItem(example_from_signals(reference, mic, mic, speech, echo, pl), speech, echo)


def toy_corpus(n: int, seed: int = 0, **kwargs) -> list[ToyItem]:
    rng = np.random.default_rng(seed)
    return [toy_item(rng, **kwargs) for _ in range(n)]


TOY_MODEL_CONFIG = DfsmnConfig(hidden_dim=32, proj_dim=16, lookback_frames=5)
# the loss is a per-element mean, so useful step sizes are far above TrainConfig's default
TOY_TRAIN_CONFIG = TrainConfig(learning_rate=0.5, epochs=50)


def toy_model(config: DfsmnConfig = TOY_MODEL_CONFIG, items=None, seed: int = 0) -> DfsmnModel:
    model = init_model(config, seed, dtype=np.float64)
    if items:
        mean, std = fit_normalization([it.example for it in items])
        model = DfsmnModel(config, dict(model.params), mean, std)
    return model


def stage_ser_gains(model: DfsmnModel, item: ToyItem) -> list[float]:
    """SER improvement (dB) from applying each stage's speech mask to X_laec.

    Entries follow the stages; the last one uses m_x.
    """
    heads = forward(model.config, params64(model), normalize(model, item.example.features))
    S, E = analyze(item.speech), analyze(item.echo)
    n = len(item.speech)
    base = ser(item.speech, item.echo)
    bins = model.config.bins
    gains = []
    for h in heads:
        mask = h[:, :bins]
        gains.append(ser(synthesize(mask * S, n), synthesize(mask * E, n)) - base)
    return gains


