"""Command-line entry point.

Subcommands: ``mask-dump``, ``verify``, ``train``, ``infer``, ``bench``.
Exit codes: 0 success, 1 verification failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
import torch

from . import io, masks, verify
from .layout import StreamConfig, build_layout
from .streaming import benchmark, stream_encode
from .training import DTYPES, ModelConfig, PretrainingModel, TrainConfig, Trainer

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

METRIC_COLUMNS = ["step", "L_off", "L_on", "L_d", "L_fp", "L_total", "accuracy"]
CHECKPOINT = "model.ckpt"
MODEL_CFG = "model.cfg"


class UsageError(Exception):
    pass


def _write_text(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")


def cmd_mask_dump(args) -> int:
    try:
        layout = build_layout(StreamConfig(T=args.T, C=args.C, L=args.L, R=args.R))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    mask = masks.build_online_mask(layout)
    render = {
        "ascii": lambda: masks.render_ascii(mask, layout),
        "csv": lambda: masks.render_csv(mask),
        "bits": lambda: masks.render_bits(mask),
        "layout": layout.dump,
    }[args.format]
    _write_text(render(), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    names = list(verify.SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        kwargs = {"steps": args.steps} if name == "training" and args.steps else {}
        report = verify.run_suite(name, seed=args.seed, **kwargs)
        print(report.render(), flush=True)
        ok &= report.ok
    print("verification", "passed" if ok else "FAILED")
    return EXIT_OK if ok else EXIT_FAIL


def split_config(values: dict[str, str]) -> tuple[ModelConfig, TrainConfig]:
    """Route ``key = value`` pairs to the model or training config; ``seed`` goes to both."""
    model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(values) - model_keys - train_keys
    if unknown:
        raise io.FormatError(f"unknown config keys: {sorted(unknown)}")
    mc = io.dataclass_from_kv(ModelConfig, {k: v for k, v in values.items() if k in model_keys})
    tc = io.dataclass_from_kv(TrainConfig, {k: v for k, v in values.items() if k in train_keys})
    return mc, tc


def cmd_train(args) -> int:
    values = io.parse_kv(Path(args.config).read_text()) if args.config else {}
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if args.steps is not None:
        values["steps"] = str(args.steps)
    mc, tc = split_config(values)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(mc, tc)
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for _ in range(tc.steps):
            row = trainer.train_step()
            writer.writerow(row)
            if args.verbose and row["step"] % 50 == 0:
                print(f"step {row['step']:4d}  L_total {row['L_total']:.4f}  L_on {row['L_on']:.4f}  acc {row['accuracy']:.3f}")
    io.save_module(out / CHECKPOINT, trainer.model)
    (out / MODEL_CFG).write_text(io.dataclass_to_kv(mc))
    (out / "train.cfg").write_text(io.dataclass_to_kv(tc))
    print(f"wrote {out / CHECKPOINT}, {out / MODEL_CFG}, {out / 'metrics.csv'}")
    return EXIT_OK


def load_model(model_dir) -> PretrainingModel:
    model_dir = Path(model_dir)
    mc = io.dataclass_from_kv(ModelConfig, io.parse_kv((model_dir / MODEL_CFG).read_text()))
    model = PretrainingModel(mc)
    io.load_module(model_dir / CHECKPOINT, model)
    return model.eval()


def infer(model: PretrainingModel, frames: np.ndarray, chunk: int, lookahead: int = 0):
    """Streamed frame outputs ``(T, d)`` and register outputs flattened to ``(N*R, d)``."""
    x = torch.as_tensor(frames, dtype=model.dtype)
    y, u = stream_encode(model.encoder, x, chunk, lookahead)
    return y.numpy(), u.reshape(-1, u.shape[-1]).numpy()


def cmd_infer(args) -> int:
    model = load_model(args.model)
    if args.registers is not None and args.registers != model.encoder.n_registers:
        raise UsageError(f"--registers {args.registers} does not match the checkpoint's {model.encoder.n_registers}")
    frames = io.read_matrix(args.input)
    expected = model.config.input_dim or model.config.d_model
    if frames.shape[1] != expected:
        raise UsageError(f"{args.input} has {frames.shape[1]} columns, model expects {expected}")
    try:
        y, u = infer(model, frames, args.chunk, args.lookahead)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".csv" if args.format == "csv" else ".f32"
    io.write_matrix(out / f"frames{suffix}", y)
    io.write_matrix(out / f"registers{suffix}", u)
    print(f"encoded {frames.shape[0]} frames in {-(-frames.shape[0] // args.chunk)} chunks -> {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.model:
        model = load_model(args.model)
    else:
        model = PretrainingModel(ModelConfig(seed=args.seed, n_registers=args.registers if args.registers is not None else 1))
    rows = benchmark(model.encoder, chunks=tuple(args.chunks), L=args.lookahead, n_chunks=args.n_chunks,
                     frame_ms=args.frame_ms, seed=args.seed)
    print(f"{'C':>4} {'L':>4} {'latency_ms':>11} {'+lookahead_ms':>14} {'ms/chunk':>9} {'cache_bytes':>12}")
    for r in rows:
        print(f"{r.C:>4} {r.L:>4} {r.latency_ms:>11.1f} {r.with_lookahead_ms:>14.1f} {r.ms_per_chunk:>9.3f} {r.cache_bytes:>12}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="online-registers", description="Dual-mode streaming encoder with online registers.")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mask-dump", help="render the online attention mask or the slot layout")
    m.add_argument("--T", type=int, required=True)
    m.add_argument("--C", type=int, required=True)
    m.add_argument("--L", type=int, default=0)
    m.add_argument("--R", type=int, default=0)
    m.add_argument("--format", choices=["ascii", "csv", "bits", "layout"], default="ascii")
    m.add_argument("--out", help="write to this file instead of stdout")
    m.set_defaults(func=cmd_mask_dump)

    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("suite", choices=list(verify.SUITES) + ["all"])
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--steps", type=int, default=0, help="training-suite steps (default 500)")
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("train", help="toy pre-training on synthetic data")
    t.add_argument("config", nargs="?", help="key = value config file")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="stream a frame matrix through a trained encoder")
    i.add_argument("input", help="matrix file (.f32 binary or .csv)")
    i.add_argument("--model", required=True, help="directory written by train")
    i.add_argument("--chunk", type=int, required=True)
    i.add_argument("--lookahead", type=int, default=0)
    i.add_argument("--registers", type=int, help="expected register count (checked against the checkpoint)")
    i.add_argument("--format", choices=["f32", "csv"], default="f32")
    i.add_argument("--out", required=True, help="output directory")
    i.set_defaults(func=cmd_infer)

    b = sub.add_parser("bench", help="streaming latency and throughput table")
    b.add_argument("--model", help="directory written by train (default: fresh model)")
    b.add_argument("--chunks", type=int, nargs="+", default=[8, 16, 32])
    b.add_argument("--lookahead", type=int, default=0)
    b.add_argument("--registers", type=int, help="register count for a fresh model")
    b.add_argument("--n-chunks", type=int, default=8)
    b.add_argument("--frame-ms", type=float, default=20.0)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING)
    torch.set_num_threads(1)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.FormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
