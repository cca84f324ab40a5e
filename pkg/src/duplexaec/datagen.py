"""Training-corpus synthesis: mixing, reference augmentation, merged
utterances, synthetic room responses and progressive-learning targets."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .dsp import SAMPLE_RATE, as_samples
from .laec import LaecConfig, laec_residual, laec_run
from .wavio import write_wav

logger = logging.getLogger(__name__)

DECAY_60DB = 3.0 * math.log(10.0)  # ln(1000): amplitude falls 60 dB at t = rt60
MAX_JITTER_MS = 20.0


# ---------------------------------------------------------------------------
# SpecAugment on the reference feature stream
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpecAugmentParams:
    max_freq_masks: int = 2
    max_freq_width_bins: int = 20
    max_time_masks: int = 2
    max_time_width_frames: int = 10
    rng_seed: int | None = None

    def __post_init__(self):
        for name in ("max_freq_masks", "max_freq_width_bins", "max_time_masks", "max_time_width_frames"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def apply_masks(features, freq_masks=(), time_masks=()) -> np.ndarray:
    """Zero the given ``(start, width)`` bands of a frames x bins matrix."""
    out = np.array(features, dtype=np.float64, copy=True)
    for start, width in freq_masks:
        out[:, start:start + width] = 0.0
    for start, width in time_masks:
        out[start:start + width, :] = 0.0
    return out


def draw_masks(n_frames: int, n_bins: int, params: SpecAugmentParams,
               rng: np.random.Generator) -> tuple[list, list]:
    """Random mask rectangles within the configured count/width bounds."""
    if params.max_freq_width_bins > n_bins or params.max_time_width_frames > n_frames:
        raise ValueError("mask width exceeds feature dimensions")

    def draw(max_count, max_width, size):
        masks = []
        for _ in range(int(rng.integers(0, max_count + 1))):
            width = int(rng.integers(0, max_width + 1))
            start = int(rng.integers(0, size - width + 1))
            masks.append((start, width))
        return masks

    freq = draw(params.max_freq_masks, params.max_freq_width_bins, n_bins)
    time = draw(params.max_time_masks, params.max_time_width_frames, n_frames)
    return freq, time


def spec_augment(features, params: SpecAugmentParams, rng: np.random.Generator | None = None) -> np.ndarray:
    """Frequency and time masking of the reference features only.

    Deterministic for a given ``params.rng_seed`` unless an explicit
    generator is passed.
    """
    features = np.asarray(features, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(params.rng_seed)
    n_frames, n_bins = features.shape
    freq, time = draw_masks(n_frames, n_bins, params, rng)
    return apply_masks(features, freq, time)


# ---------------------------------------------------------------------------
# Reference jitter, merging, mixing
# ---------------------------------------------------------------------------

def jitter_reference(reference, shift_ms: float | None = None,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Advance the reference by 0-20 ms (drawn from ``rng`` when ``shift_ms`` is None)."""
    ref = as_samples(reference, "reference")
    if shift_ms is None:
        rng = rng if rng is not None else np.random.default_rng()
        shift_ms = float(rng.uniform(0.0, MAX_JITTER_MS))
    if not 0.0 <= shift_ms <= MAX_JITTER_MS:
        raise ValueError(f"shift_ms must lie in [0, {MAX_JITTER_MS:g}], got {shift_ms}")
    shift = int(round(shift_ms * SAMPLE_RATE / 1000))
    out = np.zeros_like(ref)
    out[:len(ref) - shift] = ref[shift:]
    return out


@dataclass
class MergeSpec:
    """Utterances with a signed gap after each one (negative = overlap)."""

    utterances: list[np.ndarray]
    gaps: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.utterances:
            raise ValueError("need at least one utterance")
        if len(self.gaps) != len(self.utterances) - 1:
            raise ValueError(f"expected {len(self.utterances) - 1} gaps, got {len(self.gaps)}")
        for k, gap in enumerate(self.gaps):
            shorter = min(len(self.utterances[k]), len(self.utterances[k + 1]))
            if gap < 0 and -gap > shorter:
                raise ValueError(f"overlap of {-gap} samples at gap {k} exceeds the shorter utterance ({shorter})")

    def offsets(self) -> list[int]:
        offs = [0]
        for utt, gap in zip(self.utterances[:-1], self.gaps):
            offs.append(offs[-1] + len(utt) + gap)
        return offs


def merge_utterances(spec: MergeSpec) -> np.ndarray:
    offs = spec.offsets()
    n = max(o + len(u) for o, u in zip(offs, spec.utterances))
    out = np.zeros(n)
    for o, u in zip(offs, spec.utterances):
        out[o:o + len(u)] += u
    peak = np.max(np.abs(out)) if n else 0.0
    if peak > 1.0:
        out /= peak
    return out


def random_merge_spec(utterances, rng: np.random.Generator, max_overlap_s: float = 0.5,
                      max_gap_s: float = 1.0) -> MergeSpec:
    utts = [as_samples(u) for u in utterances]
    gaps = []
    for a, b in zip(utts[:-1], utts[1:]):
        lo = -min(int(max_overlap_s * SAMPLE_RATE), len(a), len(b))
        gaps.append(int(rng.integers(lo, int(max_gap_s * SAMPLE_RATE) + 1)))
    return MergeSpec(utts, gaps)


def mix_at_ser(speech, echo, ser_db: float) -> tuple[np.ndarray, float]:
    """Scale the speech (echo untouched) so the mixture has the requested SER."""
    speech = as_samples(speech, "speech")
    echo = as_samples(echo, "echo")
    if len(speech) != len(echo):
        raise ValueError(f"length mismatch: speech {len(speech)} vs echo {len(echo)}")
    e_s, e_e = float(np.dot(speech, speech)), float(np.dot(echo, echo))
    if e_s == 0.0 or e_e == 0.0:
        raise ValueError("speech and echo must both be non-silent")
    gain = math.sqrt(e_e / e_s * 10.0 ** (ser_db / 10.0))
    return gain * speech + echo, gain


# ---------------------------------------------------------------------------
# Room responses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoomImpulseResponse:
    taps: np.ndarray
    rt60_s: float
    sample_rate_hz: int = SAMPLE_RATE


def rir_envelope(t, rt60_s: float):
    """Amplitude envelope reaching -60 dB at ``t == rt60_s``."""
    return np.exp(-DECAY_60DB * np.asarray(t) / rt60_s)


def synth_rir(rt60_s: float, rng: np.random.Generator, length_s: float | None = None) -> RoomImpulseResponse:
    """Exponentially decaying white noise with unit energy."""
    if not 0.1 <= rt60_s <= 0.8:
        raise ValueError(f"rt60 must lie in [0.1, 0.8] s, got {rt60_s}")
    n = int(round((length_s if length_s is not None else rt60_s) * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    taps = rng.standard_normal(n) * rir_envelope(t, rt60_s)
    taps /= np.sqrt(np.dot(taps, taps))
    return RoomImpulseResponse(taps, rt60_s)


def convolve(x, rir: RoomImpulseResponse | np.ndarray) -> np.ndarray:
    """Linear convolution truncated to the input length."""
    h = rir.taps if isinstance(rir, RoomImpulseResponse) else np.asarray(rir)
    return fftconvolve(np.asarray(x, dtype=np.float64), h)[:len(x)]


# ---------------------------------------------------------------------------
# Progressive-learning targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlTargetSpec:
    stage_ser_db: tuple[float, ...] = (10.0, 20.0, math.inf)

    def __post_init__(self):
        s = self.stage_ser_db
        if not s or s[-1] != math.inf:
            raise ValueError("last stage target must be +inf (echo-free)")
        if any(b <= a for a, b in zip(s[:-1], s[1:])):
            raise ValueError("stage SERs must be strictly increasing")


def make_pl_targets(speech_rev, residual_echo, spec: PlTargetSpec = PlTargetSpec()) -> list[np.ndarray]:
    """Stage targets ``speech + alpha_k * residual`` at absolute SERs; the last is clean speech."""
    speech = as_samples(speech_rev, "speech")
    resid = as_samples(residual_echo, "residual_echo")
    if len(speech) != len(resid):
        raise ValueError(f"length mismatch: speech {len(speech)} vs residual {len(resid)}")
    e_s, e_r = float(np.dot(speech, speech)), float(np.dot(resid, resid))
    if e_s == 0.0:
        raise ValueError("speech is silent; SER targets undefined")
    targets = []
    for ser_db in spec.stage_ser_db:
        if math.isinf(ser_db) or e_r == 0.0:
            targets.append(speech.copy())
        else:
            alpha = math.sqrt(e_s / (e_r * 10.0 ** (ser_db / 10.0)))
            targets.append(speech + alpha * resid)
    return targets


# ---------------------------------------------------------------------------
# Synthetic sources and corpus building
# ---------------------------------------------------------------------------

def speech_like(n: int, rng: np.random.Generator, level: float = 0.1) -> np.ndarray:
    """Voiced-ish placeholder: AR-coloured noise plus a harmonic stack, syllable-gated."""
    t = np.arange(n) / SAMPLE_RATE
    f0 = rng.uniform(100.0, 250.0)
    voiced = sum(np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 8))
    colored = lfilter([1.0], [1.0, -0.9], rng.standard_normal(n)) * 0.1
    rate = rng.uniform(3.0, 5.0)
    gate = np.clip(np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)), 0.0, None) ** 0.5
    x = (voiced + colored) * gate
    return level * x / (np.sqrt(np.mean(x ** 2)) + 1e-12)


def loudspeaker_nonlinearity(x, drive: float = 2.0) -> np.ndarray:
    """Soft clipping standing in for small-loudspeaker distortion."""
    return np.tanh(drive * x) / drive


@dataclass
class CorpusConfig:
    n_examples: int = 8
    duration_s: float = 4.0
    ser_grid_db: tuple[float, ...] = (-20.0, -10.0, 0.0, 10.0)
    utterances_per_example: int = 2
    pl_targets: PlTargetSpec = field(default_factory=PlTargetSpec)
    laec: LaecConfig = field(default_factory=LaecConfig)
    seed: int = 0


def synth_example(rng: np.random.Generator, cfg: CorpusConfig) -> dict[str, np.ndarray | float]:
    n = int(cfg.duration_s * SAMPLE_RATE)
    far = speech_like(n, rng, level=0.2)
    h_r = synth_rir(float(rng.uniform(0.1, 0.8)), rng)
    echo = 0.5 * convolve(loudspeaker_nonlinearity(far), h_r)

    utt_len = n // cfg.utterances_per_example
    utts = [speech_like(int(rng.integers(utt_len // 2, utt_len + 1)), rng)
            for _ in range(cfg.utterances_per_example)]
    near = merge_utterances(random_merge_spec(utts, rng))
    near = np.pad(near, (0, max(n - len(near), 0)))[:n]
    h_x = synth_rir(float(rng.uniform(0.1, 0.8)), rng)
    speech_rev = convolve(near, h_x)

    ser_db = float(rng.choice(cfg.ser_grid_db))
    mixture, gain = mix_at_ser(speech_rev, echo, ser_db)
    reference = jitter_reference(far, rng=rng)
    laec_out = laec_run(reference, mixture, cfg.laec)
    residual = laec_residual(echo, reference, cfg.laec)
    targets = make_pl_targets(gain * speech_rev, residual, cfg.pl_targets)
    return {"mixture": mixture, "reference": reference, "laec_out": laec_out,
            "residual_echo": residual, "targets": targets, "ser_db": ser_db}


def build_corpus(out_dir, cfg: CorpusConfig) -> Path:
    """Write WAVs plus a JSON-lines manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.jsonl"
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_examples)
    with manifest.open("w") as fh:
        for k, ss in enumerate(seeds):
            rng = np.random.default_rng(ss)
            ex = synth_example(rng, cfg)
            stem = f"ex{k:05d}"
            paths = {}
            for key in ("mixture", "reference", "laec_out", "residual_echo"):
                p = out / f"{stem}_{key}.wav"
                write_wav(p, ex[key])
                paths[f"{key}_path"] = p.name
            target_paths = []
            for s, tgt in enumerate(ex["targets"]):
                p = out / f"{stem}_target{s}.wav"
                write_wav(p, tgt)
                target_paths.append(p.name)
            record = {**paths, "target_paths": target_paths, "ser_db": ex["ser_db"],
                      "seed": int(ss.generate_state(1)[0])}
            fh.write(json.dumps(record) + "\n")
            logger.info("wrote example %s (SER %.0f dB)", stem, ex["ser_db"])
    return manifest


def read_manifest(path) -> list[dict]:
    """Records with paths resolved relative to the manifest's directory."""
    path = Path(path)
    base = path.parent
    records = []
    for line_no, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        missing = {"mixture_path", "reference_path", "laec_out_path", "residual_echo_path",
                   "target_paths", "ser_db", "seed"} - set(rec)
        if missing:
            raise ValueError(f"{path}:{line_no}: manifest record missing {sorted(missing)}")
        for key in ("mixture_path", "reference_path", "laec_out_path", "residual_echo_path"):
            rec[key] = str(base / rec[key])
        rec["target_paths"] = [str(base / p) for p in rec["target_paths"]]
        records.append(rec)
    return records
