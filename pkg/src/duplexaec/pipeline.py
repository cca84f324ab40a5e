"""End-to-end streaming canceller: delay alignment, LAEC, DFSMN masks, post-filter."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dsp import StftAnalyzer, StftConfig, StftSynthesizer, as_samples
from .laec import LaecConfig, LaecState, laec_process
from .pwf import PwfConfig, apply_pwf, wiener_mask
from .res.dfsmn import DfsmnModel, MaskSet, ResState, res_forward
from .tde import DelayEstimate, align, estimate_delay

logger = logging.getLogger(__name__)

OUTPUTS = ("vad", "asr")


@dataclass
class PipelineConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    laec: LaecConfig = field(default_factory=LaecConfig)
    pwf: PwfConfig = field(default_factory=PwfConfig)
    model_path: str | None = None
    max_delay_ms: int = 500
    outputs: tuple[str, ...] = OUTPUTS
    run_tde: bool = True

    def __post_init__(self):
        self.outputs = tuple(self.outputs)
        bad = set(self.outputs) - set(OUTPUTS)
        if bad or not self.outputs:
            raise ValueError(f"outputs must be a non-empty subset of {OUTPUTS}, got {self.outputs}")
        if self.laec.bins != self.stft.bins:
            raise ValueError(f"LAEC bins {self.laec.bins} != STFT bins {self.stft.bins}")

    def betas(self) -> dict[str, float]:
        table = {"vad": self.pwf.beta_vad, "asr": self.pwf.beta_asr}
        return {name: table[name] for name in self.outputs}


# A mask estimator is created once per stream and called once per frame.
MaskEstimator = Callable[[np.ndarray, np.ndarray, np.ndarray], MaskSet]


class ModelMasks:
    """Adapts a DFSMN model (plus its per-stream state) to the estimator interface."""

    def __init__(self, model: DfsmnModel):
        self.model = model
        self.state = ResState(model.config, model.dtype)

    def __call__(self, ref_f, mic_f, laec_f) -> MaskSet:
        return res_forward(self.model, self.state, ref_f, mic_f, laec_f)

    def reset(self) -> None:
        self.state.reset()


class StreamProcessor:
    """All mutable state of one (reference, mic) stream after alignment.

    Input is primed with one hop of zeros so every sample is covered by two
    frames; outputs are sample-aligned with the input and lag it by
    ``latency_samples``.  :meth:`flush` drains the tail.
    """

    def __init__(self, config: PipelineConfig, masks: MaskEstimator | DfsmnModel):
        self.config = config
        if isinstance(masks, DfsmnModel):
            if masks.config.bins != config.stft.bins:
                raise ValueError(f"model has {masks.config.bins} bins, STFT produces {config.stft.bins}")
            masks = ModelMasks(masks)
        self.masks = masks
        self.betas = config.betas()
        self.reset()

    @property
    def latency_samples(self) -> int:
        return self.config.stft.latency_samples

    def reset(self) -> None:
        cfg = self.config
        self.ref_stft = StftAnalyzer(cfg.stft)
        self.mic_stft = StftAnalyzer(cfg.stft)
        self.laec = LaecState(cfg.laec)
        self.synth = {name: StftSynthesizer(cfg.stft) for name in self.betas}
        if hasattr(self.masks, "reset"):
            self.masks.reset()
        self._pending_skip = {name: cfg.stft.hop for name in self.betas}
        self.samples_in = 0
        self.samples_out = 0
        self.ref_stft.push(np.zeros(cfg.stft.hop))
        self.mic_stft.push(np.zeros(cfg.stft.hop))

    def _process_frame(self, r, y) -> dict[str, np.ndarray]:
        x_laec = laec_process(self.laec, r, y, adapt=True)
        ms = self.masks(r, y, x_laec)
        m_pwf = wiener_mask(ms.m_x, ms.m_r, self.config.pwf.denom_floor)
        return {name: self.synth[name].push(apply_pwf(m_pwf, beta, x_laec))
                for name, beta in self.betas.items()}

    def push(self, reference, mic) -> dict[str, np.ndarray]:
        ref = as_samples(reference, "reference")
        mic = as_samples(mic, "mic")
        if len(ref) != len(mic):
            raise ValueError("reference and mic chunks must have equal length")
        self.samples_in += len(mic)
        return self._run(ref, mic)

    def _run(self, ref, mic) -> dict[str, np.ndarray]:
        R = self.ref_stft.push(ref)
        Y = self.mic_stft.push(mic)
        chunks = {name: [] for name in self.betas}
        for r, y in zip(R, Y):
            for name, out in self._process_frame(r, y).items():
                chunks[name].append(out)
        result = {}
        for name, parts in chunks.items():
            out = np.concatenate(parts) if parts else np.zeros(0)
            skip = min(self._pending_skip[name], len(out))
            self._pending_skip[name] -= skip
            result[name] = out[skip:]
        if result:
            self.samples_out += len(next(iter(result.values())))
        return result

    def flush(self) -> dict[str, np.ndarray]:
        """Push enough trailing zeros to emit every remaining input sample."""
        hop = self.config.stft.hop
        tail = self.latency_samples + (-self.samples_in) % hop
        out = self._run(np.zeros(tail), np.zeros(tail))
        keep = self.samples_in - (self.samples_out - len(next(iter(out.values()))))
        return {name: v[:keep] for name, v in out.items()}


def process_aligned(config: PipelineConfig, masks, reference, mic,
                    chunk: int | None = None) -> dict[str, np.ndarray]:
    """Stream already-aligned buffers through the canceller (optionally in fixed chunks)."""
    ref = as_samples(reference, "reference")
    mic = as_samples(mic, "mic")
    if len(ref) != len(mic):
        raise ValueError("reference and mic must have equal length")
    proc = StreamProcessor(config, masks)
    parts = {name: [] for name in proc.betas}
    step = chunk or max(len(mic), 1)
    for start in range(0, len(mic), step):
        for name, out in proc.push(ref[start:start + step], mic[start:start + step]).items():
            parts[name].append(out)
    for name, out in proc.flush().items():
        parts[name].append(out)
    return {name: np.concatenate(p) for name, p in parts.items()}


@dataclass
class ProcessResult:
    outputs: dict[str, np.ndarray]
    delay: DelayEstimate | None

    @property
    def vad_out(self) -> np.ndarray | None:
        return self.outputs.get("vad")

    @property
    def asr_out(self) -> np.ndarray | None:
        return self.outputs.get("asr")


def stream_process(config: PipelineConfig, masks, reference, mic,
                   chunk: int | None = None) -> ProcessResult:
    """Delay-compensate then cancel; outputs have the (aligned) mic length."""
    ref = as_samples(reference, "reference")
    mic = as_samples(mic, "mic")
    delay = None
    if config.run_tde:
        delay = estimate_delay(ref, mic, config.max_delay_ms)
        logger.info("estimated delay %d samples (confidence %.2f)", delay.delay_samples, delay.confidence)
        ref, mic = align(ref, mic, delay)
    else:
        n = min(len(ref), len(mic))
        ref, mic = ref[:n], mic[:n]
    return ProcessResult(process_aligned(config, masks, ref, mic, chunk), delay)
