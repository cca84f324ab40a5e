"""Plain-text ``key=value`` configuration with dotted section prefixes.

Example::

    # comments and blank lines are ignored
    pwf.beta_vad = 0.6
    laec.taps = 12
    tde.max_delay_ms = 300
    pipeline.outputs = vad,asr
"""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .laec import LaecConfig
from .pipeline import PipelineConfig
from .pwf import PwfConfig


class ConfigError(ValueError):
    pass


KEYS = {
    "laec.taps": int,
    "laec.step_size": float,
    "laec.regularization": float,
    "pwf.beta_vad": float,
    "pwf.beta_asr": float,
    "pwf.denom_floor": float,
    "tde.max_delay_ms": int,
    "tde.enabled": lambda v: v.strip().lower() in ("1", "true", "yes", "on"),
    "pipeline.model_path": str,
    "pipeline.outputs": lambda v: tuple(s.strip() for s in v.split(",") if s.strip()),
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{line_no}: unknown key {key!r}")
        try:
            values[key] = KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{line_no}: bad value for {key}: {value!r}") from exc
    return values


def load_config_file(path) -> dict:
    p = Path(path)
    return parse_config_text(p.read_text(), str(p))


def build_pipeline_config(values: dict, overrides: dict | None = None) -> PipelineConfig:
    """Merge file values with overrides (flags win; ``None`` overrides are ignored)."""
    merged = dict(values)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(merged) - set(KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    try:
        laec = replace(LaecConfig(), **{k[5:]: v for k, v in merged.items() if k.startswith("laec.")})
        pwf = replace(PwfConfig(), **{k[4:]: v for k, v in merged.items() if k.startswith("pwf.")})
        cfg = PipelineConfig(laec=laec, pwf=pwf)
        if "tde.max_delay_ms" in merged:
            cfg.max_delay_ms = merged["tde.max_delay_ms"]
        if "tde.enabled" in merged:
            cfg.run_tde = merged["tde.enabled"]
        if "pipeline.model_path" in merged:
            cfg.model_path = merged["pipeline.model_path"]
        if "pipeline.outputs" in merged:
            cfg = replace(cfg, outputs=merged["pipeline.outputs"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg
