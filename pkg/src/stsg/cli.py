"""Command-line interface: gen-data, train, eval, predict, ablate, gradcheck.

Exit codes: 0 success, 1 gradcheck failure, 2 config error, 3 I/O error,
4 numeric abort, 5 checkpoint/config mismatch.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError, CheckpointMismatch, apply_checkpoint, load_checkpoint
from .config import KEY_HELP, SEED_ENV, ConfigError, all_keys, load_config
from .data import (DatasetFormatError, GenerationError, ImageFormatError, Dataset, export_pgm,
                   generate_dataset, load_dataset, overlay, pgm_to_image, read_pgm, save_dataset,
                   split_indices, write_pgm, write_ppm)
from .gradcheck import format_table, run_suite
from .network import build, predict
from .training import NumericAbort, ablation_configs, ablation_csv, evaluate_model, train, train_and_evaluate

EXIT_OK, EXIT_GRADCHECK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_MISMATCH = 0, 1, 2, 3, 4, 5

CHECKPOINT_NAME = "model.ckpt"
LOG_NAME = "log.csv"
CONFIG_NAME = "config.txt"


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _keys_epilog():
    lines = ["config keys (config file lines or --set key=value):"]
    lines += [f"  {key:<28} {KEY_HELP[key]}" for key in all_keys()]
    lines.append(f"environment: {SEED_ENV} overrides seed, train_seed and data_seed")
    lines.append("exit codes: 0 ok, 1 gradcheck failure, 2 config, 3 I/O, 4 numeric abort, 5 checkpoint mismatch")
    return "\n".join(lines)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: error: {message}", EXIT_CONFIG)


def _config_args(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable, last wins)")


def make_parser():
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="stsg", description="Triple-encoder spatiospectral segmentation",
                     epilog=_keys_epilog(), formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset", epilog=_keys_epilog(), formatter_class=fmt)
    _config_args(p)
    p.add_argument("--out", required=True, help="dataset file to write")
    p.add_argument("--export-pgm", metavar="DIR", help="also write sample images as PGM")
    p.add_argument("--export-count", type=int, default=8)

    p = sub.add_parser("train", help="train a network", epilog=_keys_epilog(), formatter_class=fmt)
    _config_args(p)
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out", required=True, help="output directory (checkpoint, log CSV, config)")
    p.add_argument("--resume", help="checkpoint to start from")

    p = sub.add_parser("eval", help="per-class Dice of a checkpoint", epilog=_keys_epilog(), formatter_class=fmt)
    _config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")

    p = sub.add_parser("predict", help="segment one PGM image", epilog=_keys_epilog(), formatter_class=fmt)
    _config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="input P5 PGM")
    p.add_argument("--out", required=True, help="class-map PGM to write")
    p.add_argument("--overlay", help="color PPM overlay (default: OUT with .ppm suffix)")

    p = sub.add_parser("ablate", help="baseline vs. the two cross-attention ablations",
                       epilog=_keys_epilog(), formatter_class=fmt)
    _config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="also write the CSV here")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    return parser


# -- helpers -------------------------------------------------------------------------

def _load_cfg(args, checkpoint=None):
    path = args.config
    if path is None and checkpoint is not None:
        beside = Path(checkpoint).with_name(CONFIG_NAME)
        if beside.exists():
            path = str(beside)
    try:
        return load_config(path, args.set)
    except ConfigError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None


def _load_data(path, cfg) -> Dataset:
    try:
        ds = load_dataset(path)
    except OSError as exc:
        raise CliError(f"cannot read dataset {path}: {exc}", EXIT_IO) from None
    except DatasetFormatError as exc:
        raise CliError(f"bad dataset {path}: {exc}", EXIT_IO) from None
    if ds.size != cfg.net.input_size:
        raise CliError(f"dataset size {ds.size} does not match input_size {cfg.net.input_size}", EXIT_CONFIG)
    return ds


def _load_model(cfg, checkpoint):
    model = build(cfg.net)
    try:
        params = load_checkpoint(checkpoint)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {checkpoint}: {exc}", EXIT_IO) from None
    except CheckpointError as exc:
        raise CliError(f"bad checkpoint {checkpoint}: {exc}", EXIT_IO) from None
    try:
        apply_checkpoint(model, params)
    except CheckpointMismatch as exc:
        raise CliError(f"checkpoint mismatch: {exc}", EXIT_MISMATCH) from None
    return model


def _split(ds, cfg, name):
    if name == "all":
        return ds
    tr, va, te = split_indices(len(ds), cfg.train.fractions)
    return ds.subset({"train": tr, "val": va, "test": te}[name])


def _write(path, data: bytes | str):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        mode = "wb" if isinstance(data, bytes) else "w"
        with open(path, mode) as fh:
            fh.write(data)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from None


# -- commands ------------------------------------------------------------------------

def cmd_gen_data(args):
    cfg = _load_cfg(args)
    try:
        ds = generate_dataset(cfg.synth)
    except GenerationError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        save_dataset(args.out, ds)
        if args.export_pgm:
            export_pgm(args.export_pgm, ds, args.export_count)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from None
    print(f"wrote {len(ds)} samples size {ds.size}")


def cmd_train(args):
    cfg = _load_cfg(args)
    ds = _load_data(args.data, cfg)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out}: {exc}", EXIT_IO) from None
    model = _load_model(cfg, args.resume) if args.resume else build(cfg.net)
    cfg.train.checkpoint_path = str(out / CHECKPOINT_NAME)
    _write(out / CONFIG_NAME, cfg.to_text())
    tr, va, _ = split_indices(len(ds), cfg.train.fractions)
    try:
        log = train(model, ds.subset(tr), cfg.train, ds.subset(va))
    except NumericAbort as exc:
        raise CliError(f"numeric abort: {exc}", EXIT_NUMERIC) from None
    except OSError as exc:
        raise CliError(f"cannot write checkpoint: {exc}", EXIT_IO) from None
    _write(out / LOG_NAME, log.to_csv())
    print(f"best epoch {log.best_epoch} val_mean_dice {log.best_val_dice:.4f}; wrote {out / CHECKPOINT_NAME}")


def cmd_eval(args):
    cfg = _load_cfg(args, args.checkpoint)
    ds = _load_data(args.data, cfg)
    model = _load_model(cfg, args.checkpoint)
    part = _split(ds, cfg, args.split)
    if len(part) == 0:
        raise CliError(f"split {args.split!r} is empty", EXIT_CONFIG)
    sys.stdout.write(evaluate_model(model, part).to_csv())


def predict_image(model, image: np.ndarray) -> np.ndarray:
    """Label map (S, S) for one (S, S) image; the same path cmd_eval uses."""
    return predict(model, image[None, None])[0]


def cmd_predict(args):
    cfg = _load_cfg(args, args.checkpoint)
    try:
        values, maxval = read_pgm(args.image)
    except (OSError, ImageFormatError) as exc:
        raise CliError(f"cannot read image {args.image}: {exc}", EXIT_IO) from None
    s = cfg.net.input_size
    if values.shape != (s, s):
        raise CliError(f"image is {values.shape[1]}x{values.shape[0]}, model expects {s}x{s}", EXIT_IO)
    model = _load_model(cfg, args.checkpoint)
    image = pgm_to_image(values, maxval)
    labels = predict_image(model, image)
    try:
        write_pgm(args.out, labels.astype(np.uint8))
        write_ppm(args.overlay or str(Path(args.out).with_suffix(".ppm")), overlay(image, labels))
    except OSError as exc:
        raise CliError(f"cannot write prediction: {exc}", EXIT_IO) from None
    print(f"wrote {args.out}")


def cmd_ablate(args):
    cfg = _load_cfg(args)
    ds = _load_data(args.data, cfg)
    results = {}
    try:
        for name, net_cfg in ablation_configs(cfg.net):
            results[name] = train_and_evaluate(net_cfg, cfg.train, ds)
    except NumericAbort as exc:
        raise CliError(f"numeric abort: {exc}", EXIT_NUMERIC) from None
    text = ablation_csv(results)
    if args.out:
        _write(args.out, text)
    sys.stdout.write(text)


def cmd_gradcheck(args):
    if args.corrupt:
        with T.corrupt_backward(args.corrupt):
            rows = run_suite(args.seed)
    else:
        rows = run_suite(args.seed)
    sys.stdout.write(format_table(rows))
    failed = [r.block for r in rows if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed), file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args) or EXIT_OK
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
