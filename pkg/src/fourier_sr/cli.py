"""Command-line entry point: ``fourier-sr <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import gradcheck, losses, metrics, trainer
from .errors import FormatError, NumericError, ShapeError
from .nets import build_feature_extractor, load_generator
from .spectral import log_amplitude_image, windowed_spectrum
from .tensor_core import bicubic_resample, degrade, load_ppm, save_ppm

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


# --------------------------------------------------------------------------
# Commands


def cmd_degrade(args):
    img = load_ppm(args.input)
    save_ppm(degrade(img, args.scale), args.output)


def loss_report(pred, target, feature_seed=0):
    amp, phase = losses.fourier_loss_terms(pred, target)
    extractor = build_feature_extractor(pred.shape[2], feature_seed)
    return {
        "l1": losses.l1_loss(pred, target).value,
        "fourier_amp": amp.value,
        "fourier_phase": phase.value,
        "fourier": 0.5 * amp.value + 0.5 * phase.value,
        "feature": losses.feature_loss(pred, target, extractor).value,
    }


def cmd_loss(args):
    pred, target = load_ppm(args.pred), load_ppm(args.target)
    if pred.shape != target.shape:
        raise ShapeError(f"{args.pred} is {pred.shape[:2]}, {args.target} is {target.shape[:2]}")
    report = loss_report(pred, target, args.feature_seed)
    for name, value in report.items():
        print(f"{name}={_fmt(value)}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(report, f, indent=2)


def cmd_spectrum(args):
    spec = windowed_spectrum(load_ppm(args.input))
    save_ppm(log_amplitude_image(spec), args.output)


def _load_dir(path):
    names = sorted(n for n in os.listdir(path) if n.lower().endswith(".ppm"))
    if not names:
        raise FormatError(f"no .ppm files in {path}")
    return [load_ppm(os.path.join(path, n)) for n in names]


_OVERRIDES = ["iters", "lr", "batch", "seed", "crop_lr", "scale", "pretrain_iters",
              "alpha", "beta", "gamma", "fourier_disc_layers", "threads"]


def resolve_config(args):
    file_values = {}
    if args.config:
        with open(args.config) as f:
            file_values = trainer.parse_config_text(f.read())
    chosen = args.preset if args.preset is not None else file_values.pop("preset", None)
    file_values.pop("preset", None)
    base = trainer.preset(int(chosen)) if chosen is not None else trainer.TrainConfig()
    cfg = trainer.config_from_mapping(file_values, base)
    flags = {k: getattr(args, k) for k in _OVERRIDES if getattr(args, k) is not None}
    return dataclasses.replace(cfg, **flags).validate()


def cmd_train(args):
    try:
        cfg = resolve_config(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(trainer.format_config(cfg))
    sys.stdout.flush()
    if args.data_dir:
        dataset = _load_dir(args.data_dir)
    else:
        dataset = trainer.toy_dataset(4, cfg.hr_crop * 2, cfg.channels, cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.txt"), "w") as f:
        f.write(trainer.format_config(cfg) + "\n")
    log_path = os.path.join(args.out, "train_log.tsv")
    columns = trainer.log_columns(cfg)
    with open(log_path, "w") as log:
        log.write("\t".join(columns) + "\n")

        def on_row(row):
            log.write(trainer.format_row(columns, row) + "\n")

        result = trainer.train(cfg, dataset, on_row=on_row)
    trainer.save_result(result, os.path.join(args.out, "generator.fsrc"))


def cmd_eval(args):
    names = metrics.matching_ppm_names(args.pred_dir, args.ref_dir)
    if not names:
        raise FormatError("no matching .ppm files in the two directories")
    header = ["name", "psnr", "ssim"]
    if args.baseline:
        header += ["bicubic_psnr", "bicubic_ssim"]
    print("\t".join(header))
    cols = {k: [] for k in header[1:]}
    for name in names:
        pred = load_ppm(os.path.join(args.pred_dir, name))
        ref = load_ppm(os.path.join(args.ref_dir, name))
        row = {"psnr": metrics.psnr(pred, ref), "ssim": metrics.ssim(pred, ref)}
        if args.baseline:
            lr = degrade(ref, args.scale)
            base = bicubic_resample(lr, ref.shape[0], ref.shape[1])
            row["bicubic_psnr"] = metrics.psnr(base, ref)
            row["bicubic_ssim"] = metrics.ssim(base, ref)
        for k, v in row.items():
            cols[k].append(v)
        print("\t".join([name] + [_fmt(row[k]) for k in header[1:]]))
    print("\t".join(["mean"] + [_fmt(float(np.mean(cols[k]))) for k in header[1:]]))


def cmd_gradcheck(args):
    if args.size < 8 or args.size % 2:
        raise UsageError(f"--size must be even and >= 8, got {args.size}")
    results = gradcheck.run_all(args.seed, args.size, corrupt=args.corrupt)
    print("component\tmax_rel_error\tfraction_ok\tkinks_skipped\tstatus")
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name}\t{r.max_rel_error:.3e}\t{r.fraction_ok:.4f}\t{r.excluded}\t{status}")
    if not all(r.passed for r in results):
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_upscale(args):
    gen, _ = load_generator(args.checkpoint)
    img = load_ppm(args.input)
    if img.shape[2] != gen.config.channels:
        img = img[:, :, : gen.config.channels]
    out = gen.forward(img)
    save_ppm(np.clip(out, 0.0, 1.0), args.output)


# --------------------------------------------------------------------------
# Parser


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="fourier-sr", description=__doc__.splitlines()[0],
                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("degrade", help="bicubic-downscale an HR image", formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True, help="input PPM")
    p.add_argument("--out", dest="output", required=True, help="output PPM")
    p.add_argument("--scale", type=int, default=4, help="integer scale factor")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("loss", help="report every loss term for an image pair",
                       formatter_class=fmt)
    p.add_argument("--pred", required=True, help="predicted PPM")
    p.add_argument("--target", required=True, help="target PPM")
    p.add_argument("--feature-seed", type=int, default=0, help="seed of the feature extractor")
    p.add_argument("--json", default=None, help="also write the report to this JSON file")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("spectrum", help="write the log-amplitude half-spectrum as PPM",
                       formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True, help="input PPM")
    p.add_argument("--out", dest="output", required=True, help="output PPM")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("train", help="train a generator", formatter_class=fmt)
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--data-dir", default=None,
                   help="directory of HR PPM images (synthetic toy set if omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--preset", type=int, choices=range(1, 9), default=None,
                   help="loss configuration preset 1-8")
    defaults = trainer.TrainConfig()
    for name in _OVERRIDES:
        kind = type(getattr(defaults, name))
        p.add_argument("--" + name.replace("_", "-"), type=kind, default=None,
                       help=f"override {name} (built-in default {getattr(defaults, name)})")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PSNR/SSIM over two directories of PPMs",
                       formatter_class=fmt)
    p.add_argument("--pred-dir", required=True, help="directory of predictions")
    p.add_argument("--ref-dir", required=True, help="directory of references")
    p.add_argument("--baseline", choices=["bicubic"], default=None,
                   help="also score a bicubic down/up-scaled reference")
    p.add_argument("--scale", type=int, default=4, help="scale factor for the baseline")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients",
                       formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--size", type=int, default=8, help="image side length (even, >= 8)")
    p.add_argument("--corrupt", default=None,
                   help="test hook: skew the analytic gradient of this component")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("upscale", help="super-resolve an image with a checkpoint",
                       formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="FSRC generator checkpoint")
    p.add_argument("--in", dest="input", required=True, help="LR PPM")
    p.add_argument("--out", dest="output", required=True, help="output PPM")
    p.set_defaults(func=cmd_upscale)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except UsageError as exc:
        print(f"fourier-sr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"fourier-sr {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ShapeError, FormatError, OSError, ValueError) as exc:
        print(f"fourier-sr {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
