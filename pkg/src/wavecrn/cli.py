"""Command-line entry point: ``wavecrn <subcommand> ...``.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from wavecrn import audio, bench as bench_mod, metrics
from wavecrn.errors import (
    CheckpointError,
    ConfigError,
    DegenerateInputError,
    DimensionError,
    FormatError,
    NumericError,
)
from wavecrn.model import ModelConfig, load_checkpoint
from wavecrn.train import GRADCHECK_SCOPES, TrainConfig, gradcheck, train

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4
RUN_CONFIG_SECTIONS = ("model", "train")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def load_run_config(path) -> dict:
    """Read a run config ``{"model": {...}, "train": {...}}``; unknown keys are errors."""
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = set(doc) - set(RUN_CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown run config sections: {sorted(unknown)}")
    ModelConfig.from_dict(doc.get("model", {}))
    TrainConfig.from_dict(doc.get("train", {}))
    return doc


def _inputs(path, suffix):
    p = Path(path)
    if p.is_dir():
        return sorted(p.glob(f"*{suffix}"))
    if not p.exists():
        raise FileNotFoundError(f"no such file or directory: {p}")
    return [p]


def _output_for(src: Path, out, many: bool, suffix: str) -> Path:
    out = Path(out)
    if many or out.is_dir() or not out.suffix:
        out.mkdir(parents=True, exist_ok=True)
        return out / (src.stem + suffix)
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


# subcommands ------------------------------------------------------------------


def cmd_train(args) -> int:
    doc = load_run_config(args.config) if args.config else {}
    model_d = dict(doc.get("model", {}))
    train_d = dict(doc.get("train", {}))
    for flag, key in (("channels", "channels"), ("kernel", "kernel"), ("depth", "sru_depth"), ("cell", "cell")):
        if getattr(args, flag) is not None:
            model_d[key] = getattr(args, flag)
    for flag, key in (
        ("clean", "clean_dir"), ("noisy", "noisy_dir"), ("noise", "noise_dir"), ("task", "task"),
        ("epochs", "epochs"), ("lr", "lr"), ("batch_size", "batch_size"), ("seed", "seed"),
        ("snr", "snr_db"),
    ):
        if getattr(args, flag) is not None:
            train_d[key] = getattr(args, flag)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_d["checkpoint"] = str(out / "model.wcrn")
    train_d["loss_log"] = str(out / "loss.csv")
    model_cfg = ModelConfig.from_dict(model_d)
    train_cfg = TrainConfig.from_dict(train_d)
    with open(out / "run_config.json", "w") as fh:
        json.dump({"model": asdict(model_cfg), "train": asdict(train_cfg)}, fh, indent=2, sort_keys=True)
    res = train(train_cfg, model_cfg)
    print(f"trained {train_cfg.epochs} epochs, best mean l1 {res.best_loss:.6f} -> {train_cfg.checkpoint}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    model = load_checkpoint(args.ckpt)
    files = _inputs(args.inp, ".wav")
    for f in files:
        clip = audio.read_wav(f)
        y = model.enhance(clip.samples)
        audio.write_wav(y, _output_for(f, args.out, len(files) > 1 or Path(args.inp).is_dir(), ".wav"))
    print(f"enhanced {len(files)} file(s)")
    return EXIT_OK


def cmd_compress(args) -> int:
    files = _inputs(args.inp, ".wav")
    many = len(files) > 1 or Path(args.inp).is_dir()
    for f in files:
        signs = audio.compress_2bit(audio.read_wav(f))
        _output_for(f, args.out, many, ".wc2b").write_bytes(audio.pack(signs))
        if args.wav:
            audio.write_wav(signs, _output_for(f, args.wav, many, ".wav"))
    print(f"compressed {len(files)} file(s)")
    return EXIT_OK


def cmd_restore(args) -> int:
    model = load_checkpoint(args.ckpt)
    files = _inputs(args.inp, ".wc2b")
    many = len(files) > 1 or Path(args.inp).is_dir()
    for f in files:
        signs = audio.unpack(f.read_bytes())
        audio.write_wav(model.enhance(signs), _output_for(f, args.out, many, ".wav"))
    print(f"restored {len(files)} file(s)")
    return EXIT_OK


def cmd_eval(args) -> int:
    rep = metrics.report(args.clean, args.test)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    rep.write_csv(args.out)
    m = rep.means()
    print(f"{len(rep.rows)} pairs: mean ssnr {m.ssnr_db:.3f} dB, mean stoi {m.stoi:.4f}, mean l1 {m.l1:.6f}")
    for name, msg in rep.errors:
        print(f"error: {name}: {msg}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    channels = tuple(int(c) for c in args.channels.split(","))
    passes = ("forward",) if args.forward_only else ("forward", "backward")
    res = bench_mod.bench(
        channels=channels, n=args.n, t=args.t, depth=args.depth, passes=passes,
        reps=args.reps, threads=args.threads, seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.write_csv(out / "bench.csv")
    summary = res.summary_markdown()
    (out / "bench.md").write_text(summary)
    print(summary, end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    scopes = GRADCHECK_SCOPES if args.scope == "all" else (args.scope,)
    failed = False
    print(f"{'scope':<18} {'worst tensor':<22} {'rel error':>10}")
    for scope in scopes:
        errs = gradcheck(scope, eps=args.eps)
        worst = max(errs, key=errs.get)
        ok = errs[worst] < GRADCHECK_TOL
        failed |= not ok
        print(f"{scope:<18} {worst:<22} {errs[worst]:>10.2e} {'ok' if ok else 'FAIL'}")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_synth(args) -> int:
    out = audio.synth_corpus(args.out, args.count, args.seconds, args.snr, args.seed)
    print(f"wrote {args.count} clean/noise/noisy triples under {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="wavecrn", description="WaveCRN speech enhancement toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model with the l1 objective")
    p.add_argument("--config", help="run config JSON with 'model' and 'train' sections")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--task", choices=("denoise", "restore"))
    p.add_argument("--clean")
    p.add_argument("--noisy")
    p.add_argument("--noise")
    p.add_argument("--snr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--kernel", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--cell", choices=("sru", "lstm"))
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("enhance", help="enhance WAV files with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("compress", help="2-bit sign compression into .wc2b containers")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--wav", help="also write the +-1/0 signal as WAV here")
    p.set_defaults(fn=cmd_compress)

    p = sub.add_parser("restore", help="restore .wc2b containers to WAV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_restore)

    p = sub.add_parser("eval", help="SSNR/STOI/l1 report over matching WAV directories")
    p.add_argument("--clean", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="SRU vs LSTM timing study")
    p.add_argument("--out", required=True)
    p.add_argument("--channels", default="64,128,256,512")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--t", type=int, default=335)
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--reps", type=int, default=bench_mod.MIN_REPS)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--forward-only", action="store_true")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gradcheck", help="central-difference gradient audit")
    p.add_argument("--scope", default="all", choices=("all", *GRADCHECK_SCOPES))
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("synth-data", help="write a seeded synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seconds", type=float, default=1.0)
    p.add_argument("--snr", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    np.seterr(over="ignore")
    try:
        return args.fn(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, CheckpointError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, DimensionError, DegenerateInputError, ValueError, json.JSONDecodeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
