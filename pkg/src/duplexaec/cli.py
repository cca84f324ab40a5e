"""Command-line entry point: ``duplexaec <subcommand> ...``.

Exit status is 0 on success, 1 for usage errors and 2 for data errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import datagen, metrics
from .config import ConfigError, build_pipeline_config, load_config_file
from .pipeline import stream_process
from .res import DfsmnConfig, ModelFileError, count_params, init_model, load_model, save_model
from .train import (TOY_MODEL_CONFIG, TOY_TRAIN_CONFIG, TrainConfig, TrainingDivergedError,
                    example_from_manifest_record, fit_normalization, toy_corpus, train)
from .wavio import WavFormatError, read_wav, write_wav

logger = logging.getLogger("duplexaec")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def cmd_process(args) -> int:
    values = load_config_file(args.config) if args.config else {}
    outputs = tuple(name for name, path in (("vad", args.out_vad), ("asr", args.out_asr)) if path)
    if not outputs:
        raise UsageError("give at least one of --out-vad / --out-asr")
    overrides = {
        "pwf.beta_vad": args.beta_vad, "pwf.beta_asr": args.beta_asr,
        "tde.max_delay_ms": args.max_delay_ms, "pipeline.model_path": args.model,
        "pipeline.outputs": outputs,
    }
    if args.no_tde:
        overrides["tde.enabled"] = False
    cfg = build_pipeline_config(values, overrides)
    if not cfg.model_path:
        raise UsageError("no model given (--model or pipeline.model_path)")
    model = load_model(cfg.model_path)
    ref, mic = read_wav(args.ref), read_wav(args.mic)
    result = stream_process(cfg, model, ref, mic, chunk=args.chunk)
    for name, path in (("vad", args.out_vad), ("asr", args.out_asr)):
        if path:
            out = np.zeros(len(mic))
            y = result.outputs[name][:len(mic)]
            out[:len(y)] = y
            write_wav(path, out, pcm16=args.pcm16)
    if result.delay is not None:
        logger.info("delay %.1f ms", result.delay.delay_ms)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = datagen.CorpusConfig(n_examples=args.count, duration_s=args.duration, seed=args.seed)
    manifest = datagen.build_corpus(args.out, cfg)
    print(manifest)
    return EXIT_OK


def _pairs(a: list[str], b: list[str], what: str) -> list[tuple[str, str]]:
    if len(a) != len(b):
        raise UsageError(f"{what}: got {len(a)} and {len(b)} files; lists must pair up")
    return list(zip(a, b))


def cmd_eval_erle(args) -> int:
    rows = []
    for mic_path, out_path in _pairs(args.mic, args.processed, "eval-erle"):
        mic, out = read_wav(mic_path), read_wav(out_path)
        n = min(len(mic), len(out))
        rows.append((f"{mic_path}|{out_path}", metrics.EvalReport(erle_db=metrics.erle(mic[:n], out[:n]))))
    _write_json([{"pair": name, **r.to_dict()} for name, r in rows], args.report)
    return EXIT_OK


def read_labels(path: str, threshold_db: float, hangover: int) -> np.ndarray:
    """0/1 frame labels from a text file, or energy-VAD decisions for a ``.wav``."""
    if path.lower().endswith(".wav"):
        return metrics.energy_vad(read_wav(path), threshold_db, hangover)
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    tokens = p.read_text().split()
    if any(t not in ("0", "1") for t in tokens):
        raise ValueError(f"{p}: label files must contain only 0/1 tokens")
    return np.array([t == "1" for t in tokens], dtype=bool)


def cmd_eval_dcf(args) -> int:
    rows = []
    for dec_path, truth_path in _pairs(args.decisions, args.truth, "eval-dcf"):
        dec = read_labels(dec_path, args.threshold_db, args.hangover)
        truth = read_labels(truth_path, args.threshold_db, 0)
        r = metrics.dcf_rates(dec, truth)
        rows.append({"pair": f"{dec_path}|{truth_path}",
                     **metrics.EvalReport(dcf=r.dcf, p_false=r.p_false, p_miss=r.p_miss).to_dict()})
    _write_json(rows, args.report)
    return EXIT_OK


def cmd_train_toy(args) -> int:
    base = TOY_TRAIN_CONFIG
    tcfg = replace(base, learning_rate=args.lr if args.lr is not None else base.learning_rate,
                   momentum=args.momentum, epochs=args.epochs, batch_size=args.batch_size,
                   rng_seed=args.seed, augment=datagen.SpecAugmentParams() if args.augment else None)
    mcfg = replace(TOY_MODEL_CONFIG, hidden_dim=args.hidden, proj_dim=args.proj,
                   lookback_frames=args.lookback)
    if args.manifest:
        examples = [example_from_manifest_record(r) for r in datagen.read_manifest(args.manifest)]
    else:
        examples = [it.example for it in toy_corpus(args.examples, seed=args.seed)]
    if not examples:
        raise ValueError("no training examples")
    model = init_model(mcfg, args.seed, dtype=np.float64)
    mean, std = fit_normalization(examples)
    model = replace(model, params=dict(model.params), feat_mean=mean, feat_std=std)
    result = train(model, examples, tcfg)
    save_model(result.model, args.out)
    if args.curve:
        result.write_curve(args.curve)
    print(json.dumps({"initial_loss": result.losses[0], "final_loss": result.losses[-1],
                      "epochs": tcfg.epochs, "params": count_params(mcfg)}))
    return EXIT_OK


def cmd_info(args) -> int:
    cfg = load_model(args.model).config if args.model else DfsmnConfig()
    _write_json({"config": asdict(cfg), "params": count_params(cfg)}, None)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="duplexaec", description="Two-stage streaming echo canceller toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("process", help="cancel echo in a (reference, mic) WAV pair")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--mic", required=True)
    sp.add_argument("--model")
    sp.add_argument("--config")
    sp.add_argument("--out-vad")
    sp.add_argument("--out-asr")
    sp.add_argument("--beta-vad", type=float)
    sp.add_argument("--beta-asr", type=float)
    sp.add_argument("--max-delay-ms", type=int)
    sp.add_argument("--no-tde", action="store_true", help="inputs are already aligned")
    sp.add_argument("--chunk", type=int, help="stream in chunks of this many samples")
    sp.add_argument("--pcm16", action="store_true", help="write 16-bit PCM instead of float32")
    sp.set_defaults(func=cmd_process)

    sp = sub.add_parser("synth", help="synthesise a training corpus and manifest")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, default=8)
    sp.add_argument("--duration", type=float, default=4.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("eval-erle", help="ERLE over paired mic/processed WAVs")
    sp.add_argument("--mic", nargs="+", required=True)
    sp.add_argument("--processed", nargs="+", required=True)
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_eval_erle)

    sp = sub.add_parser("eval-dcf", help="DCF over paired decision/truth label files (or WAVs)")
    sp.add_argument("--decisions", nargs="+", required=True)
    sp.add_argument("--truth", nargs="+", required=True)
    sp.add_argument("--threshold-db", type=float, default=-30.0)
    sp.add_argument("--hangover", type=int, default=0)
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_eval_dcf)

    sp = sub.add_parser("train-toy", help="desk-scale progressive-learning training")
    sp.add_argument("--out", required=True, help="model file to write")
    sp.add_argument("--curve", help="loss curve CSV")
    sp.add_argument("--manifest", help="train on a synth manifest instead of the tone corpus")
    sp.add_argument("--examples", type=int, default=200)
    sp.add_argument("--epochs", type=int, default=TOY_TRAIN_CONFIG.epochs)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--momentum", type=float, default=TOY_TRAIN_CONFIG.momentum)
    sp.add_argument("--batch-size", type=int, default=TOY_TRAIN_CONFIG.batch_size)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--hidden", type=int, default=TOY_MODEL_CONFIG.hidden_dim)
    sp.add_argument("--proj", type=int, default=TOY_MODEL_CONFIG.proj_dim)
    sp.add_argument("--lookback", type=int, default=TOY_MODEL_CONFIG.lookback_frames)
    sp.add_argument("--augment", action="store_true", help="SpecAugment the reference features")
    sp.set_defaults(func=cmd_train_toy)

    sp = sub.add_parser("info", help="print model config and parameter count")
    sp.add_argument("--model")
    sp.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"duplexaec {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, WavFormatError, ModelFileError, TrainingDivergedError,
            ValueError, OSError) as exc:
        print(f"duplexaec {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
