"""Command-line entry point: ``marsseg <command> [options]``.

Exit codes: 0 success, 1 gradient check failure, 2 bad config or input file,
3 non-finite loss, 4 empty dataset or split, 5 image extents not divisible by 16.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from PIL import Image

from .checkpoint import load_checkpoint, restore_model
from .checks import format_rows, run_gradcheck_suite
from .config import load_config, to_text
from .data import (
    class_frequency,
    convert_masks,
    load_manifest,
    overlay,
    read_image,
    save_mask,
    write_dataset,
)
from .errors import ConfigError, DataError, FormatError, ManifestError, NonFiniteLossError
from .network import MarsSegNet
from .synthetic import SYNTHETIC_CLASSES, make_synthetic_samples
from .trainer import evaluate, predict_logits, train

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NONFINITE, EXIT_EMPTY, EXIT_GEOMETRY = 0, 1, 2, 3, 4, 5

class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def parse_overrides(extra: List[str]) -> Dict[str, str]:
    """``--optim.lr 0.01`` / ``--optim.lr=0.01`` pairs -> ``{"optim.lr": "0.01"}``."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) < 3:
            raise CliError(f"unexpected argument {tok!r}", EXIT_CONFIG)
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(extra):
            value = extra[i + 1]
            i += 2
        else:
            raise CliError(f"override {tok} needs a value", EXIT_CONFIG)
        out[key] = value
    return out


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except (OSError, FormatError) as exc:
        raise CliError(f"cannot load checkpoint {path}: {exc}", EXIT_CONFIG) from exc


def _manifest(root, split_ratio=0.8, seed=0):
    try:
        return load_manifest(root, split_ratio=split_ratio, seed=seed)
    except (ManifestError, DataError, OSError) as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc


# -- commands -----------------------------------------------------------------

def cmd_train(args, extra: List[str]) -> int:
    overrides = parse_overrides(extra)
    cfg = load_config(args.config, overrides)
    base = Path(args.config).resolve().parent
    if cfg.train.checkpoint is None:
        cfg.train.checkpoint = str(base / "checkpoint.mseg")
    if cfg.train.history is None:
        cfg.train.history = str(base / "history.csv")
    if not cfg.data.root:
        raise ConfigError("data.root must be set")
    print("# resolved config")
    print(to_text(cfg), end="")
    print("# end config", flush=True)

    manifest = _manifest(cfg.data.root, cfg.data.split_ratio, cfg.train.seed)
    samples = manifest.samples("train")
    if not samples:
        raise CliError("training split is empty", EXIT_EMPTY)
    if manifest.num_classes != cfg.network.num_classes:
        raise ConfigError(
            f"network.num_classes = {cfg.network.num_classes} but {manifest.root} defines {manifest.num_classes} classes"
        )
    resume = _load_ckpt(args.resume) if args.resume else None
    result = train(cfg, samples, manifest.class_names, resume=resume)
    last = result.history[-1] if result.history else {}
    print(f"trained to epoch {result.checkpoint.epoch}, step {result.checkpoint.step}; "
          f"final train loss {last.get('train_loss', float('nan')):.4f}, val mIoU {last.get('val_miou', float('nan')):.4f}")
    print(f"checkpoint: {cfg.train.checkpoint}")
    print(f"history: {cfg.train.history}")
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    cfg = ckpt.config
    manifest = _manifest(args.data, cfg.data.split_ratio, cfg.train.seed)
    try:
        ids = manifest.ids(args.split)
    except KeyError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    if not ids:
        raise CliError(f"split {args.split!r} is empty", EXIT_EMPTY)
    report = evaluate(ckpt, manifest.samples(args.split), manifest.class_names)
    print(report.to_text())
    csv_path = Path(args.csv) if args.csv else Path(f"{args.checkpoint}.{args.split}.csv")
    csv_path.write_text(report.to_csv())
    print(f"csv: {csv_path}")
    return EXIT_OK


def cmd_infer(args, extra) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    try:
        image = read_image(args.image)
    except OSError as exc:
        raise CliError(f"cannot read image {args.image}: {exc}", EXIT_CONFIG) from exc
    h, w = image.shape[1:]
    if h % 16 or w % 16:
        if not args.auto_pad:
            raise CliError(f"image extents {h}x{w} are not divisible by 16 (use --auto-pad)", EXIT_GEOMETRY)
        ph, pw = -h % 16, -w % 16
        padded = np.pad(image, ((0, 0), (0, ph), (0, pw)), mode="edge")
    else:
        padded = image
    model = MarsSegNet(ckpt.config.network)
    restore_model(ckpt, model)
    logits = predict_logits(model, padded[None])
    mask = logits[0].argmax(axis=0)[:h, :w].astype(np.uint8)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mask(out, mask)
    overlay_path = out.with_name(out.stem + "_overlay.png")
    Image.fromarray(overlay(image, mask), mode="RGB").save(overlay_path)
    print(f"mask: {out}")
    print(f"overlay: {overlay_path}")
    return EXIT_OK


def cmd_gradcheck(args, extra) -> int:
    rows = run_gradcheck_suite(seed=args.seed, tol=args.tol)
    print(format_rows(rows))
    failed = [r.name for r in rows if not r.passed]
    print(f"{len(rows) - len(failed)}/{len(rows)} checks passed at tol {args.tol:g}")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_stats(args, extra) -> int:
    manifest = _manifest(args.data, args.split_ratio, args.seed)
    ids = manifest.ids("all")
    if not ids:
        raise CliError(f"no image/mask pairs under {args.data}", EXIT_EMPTY)
    freq = class_frequency(manifest, "all")
    sizes = []
    for i in ids:
        with Image.open(manifest.pairs[i][0]) as im:
            sizes.append(im.size)
    heights, widths = [s[1] for s in sizes], [s[0] for s in sizes]
    width = max(len(n) for n in manifest.class_names)
    print(f"{'class':<{width}}  fraction")
    for name, f in zip(manifest.class_names, freq):
        print(f"{name:<{width}}  {f:.6f}")
    print(f"images: {len(ids)} (train {len(manifest.ids('train'))}, test {len(manifest.ids('test'))})")
    print(f"height: min {min(heights)} max {max(heights)}")
    print(f"width: min {min(widths)} max {max(widths)}")
    return EXIT_OK


def cmd_convert_masks(args, extra) -> int:
    try:
        n = convert_masks(args.src, args.dst, args.palette)
    except (OSError, DataError) as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    print(f"converted {n} masks into {args.dst}")
    return EXIT_OK


def cmd_synth(args, extra) -> int:
    samples = make_synthetic_samples(args.n, args.size, seed=args.seed, rare_share=args.rare_share)
    root = write_dataset(args.out, samples, SYNTHETIC_CLASSES)
    print(f"wrote {len(samples)} samples to {root}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="marsseg", description="Train, evaluate and run the MarsSeg segmentation network.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a key = value config file",
                       description="Train from a config file. Any --section.key VALUE flag overrides the file.")
    p.add_argument("--config", required=True, help="flat key = value config file")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train, allow_extra=True)

    p = sub.add_parser("eval", help="per-class IoU report for a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset root (classes.txt, images/, masks/)")
    p.add_argument("--split", default="test", choices=["train", "test", "all"])
    p.add_argument("--csv", help="CSV output path (default: <checkpoint>.<split>.csv)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict an index mask and colorized overlay for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="index mask PNG; the overlay goes next to it as <stem>_overlay.png")
    p.add_argument("--auto-pad", action="store_true", help="pad to a multiple of 16 and crop the result back")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference checks for every primitive and block")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("stats", help="class frequencies, split counts and image extents")
    p.add_argument("--data", required=True)
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("convert-masks", help="map RGB color masks to index masks")
    p.add_argument("--src", required=True, help="directory of RGB mask PNGs")
    p.add_argument("--dst", required=True, help="output directory for index masks")
    p.add_argument("--palette", required=True, help="text file of 'R G B index' lines")
    p.set_defaults(func=cmd_convert_masks)

    p = sub.add_parser("synth", help="write a synthetic 4-class dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rare-share", type=float, default=0.02)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and not getattr(args, "allow_extra", False):
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, extra)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        # non-finite norms first, then the largest
        worst = sorted(exc.param_norms.items(), key=lambda kv: (bool(np.isfinite(kv[1])), -np.nan_to_num(kv[1])))
        for name, norm in worst[:5]:
            print(f"  {name}: norm {norm:.4g}", file=sys.stderr)
        return EXIT_NONFINITE


if __name__ == "__main__":
    sys.exit(main())
