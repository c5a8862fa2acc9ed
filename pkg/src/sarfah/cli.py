"""Command-line interface.

Exit codes: 0 success, 1 user error (bad flags, invalid input), 2 internal
error.  Every subcommand accepts ``--config FILE`` with ``key=value`` lines;
flags given on the command line take precedence over the file.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import traceback
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .autodiff.checkpoint import CheckpointError
from .speckle import DomainError

log = logging.getLogger("sarfah")

USER_ERRORS = (ValueError, CheckpointError, FileNotFoundError, IsADirectoryError, PermissionError, KeyError)


class UsageError(Exception):
    """Bad command-line usage."""


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def read_config_file(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment; blank lines ignored."""
    out = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise DomainError(f"{path}:{n}: expected key=value, got {raw!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config(args, parser, exclude=()):
    """Fill flags left unset on the command line from ``--config``."""
    if not getattr(args, "config", None):
        return {}
    values = read_config_file(args.config)
    extra = {}
    for key, value in values.items():
        if key in exclude:
            extra[key] = value
            continue
        if not hasattr(args, key) or key in ("command", "config", "func"):
            raise DomainError(f"unknown configuration key {key!r} for '{args.command}'")
        if getattr(args, key) is None:
            action = next((a for a in parser._actions if a.dest == key), None)
            conv = action.type if action is not None and action.type else str
            if action is not None and action.const is not None and action.nargs == 0:
                conv = _parse_bool
            setattr(args, key, conv(value))
    return extra


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise DomainError(f"not a boolean: {text!r}")


def _default(value, fallback):
    return fallback if value is None else value


def _writer(path):
    fh = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
    return fh, csv.writer(fh, lineterminator="\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synthesize(args, parser):
    _apply_config(args, parser)
    from .data import read_image, write_image, write_synthetic_corpus
    from .speckle import synthesize_speckle

    if args.procedural is not None:
        if args.output is None:
            raise DomainError("--output DIR is required with --procedural")
        paths = write_synthetic_corpus(args.output, args.procedural, _default(args.size, 256), _default(args.seed, 0))
        print(f"wrote {len(paths)} images to {args.output}")
        return 0
    if args.input is None or args.output is None:
        raise DomainError("--input and --output are required")
    noisy = synthesize_speckle(read_image(args.input), _default(args.looks, 1.0), _default(args.seed, 0))
    write_image(args.output, noisy)
    return 0


def cmd_fit_dist(args, parser):
    _apply_config(args, parser)
    from .data import read_image
    from .speckle import fit_gamma, fit_ggd
    from .wavelet import dwt2_haar

    if args.input is None:
        raise DomainError("--input is required")
    path = Path(args.input)
    x = np.load(path) if path.suffix == ".npy" else read_image(path)
    band = _default(args.subband, "none").upper()
    if band != "NONE":
        sb = dwt2_haar(x)
        x = {"LL": sb.ll, "LH": sb.lh, "HL": sb.hl, "HH": sb.hh}[band]
    if _default(args.dist, "gamma") == "gamma":
        p = fit_gamma(x)
        table = [["shape_a", repr(float(p.shape_a))], ["scale_b", repr(float(p.scale_b))]]
    else:
        p = fit_ggd(x)
        table = [["alpha", repr(float(p.alpha))], ["beta", repr(float(p.beta))]]
    fh, w = _writer(args.output)
    w.writerow(["param", "value"])
    w.writerows(table)
    if fh is not sys.stdout:
        fh.close()
    return 0


def cmd_theorem_check(args, parser):
    _apply_config(args, parser)
    from .speckle import GammaParams, verify_theorem1

    min_samples = _default(args.min_samples, 10**6)
    report = verify_theorem1(
        GammaParams(_default(args.shape, 1.0), _default(args.scale, 1.0)),
        _default(args.level, 1),
        field_size=_default(args.field_size, 1024),
        seed=_default(args.seed, 0),
        moment_tol=_default(args.moment_tol, 0.02),
        skew_tol=_default(args.skew_tol, 0.02),
        min_samples=min_samples if min_samples > 0 else None,
    )
    fh, w = _writer(args.output)
    w.writerow(["key", "value"])
    w.writerows([[k, v if isinstance(v, str) else repr(v)] for k, v in report.rows()])
    if fh is not sys.stdout:
        fh.close()
    return 0


# flags shared by train and param-count: argparse dest -> config key
_MODEL_FLAGS = {
    "channels": "channels_C",
    "ode_steps": "ode_N",
    "ode_horizon": "ode_T",
    "ode_randomized": "ode_randomized",
    "shared_hfde": "shared_hfde",
    "deforconv": "deforconv_placement",
    "dass_in_lfsp": "dass_in_lfsp",
    "dass_in_hfde": "dass_in_hfde",
    "use_dynamic": "use_dynamic",
    "use_node": "use_node",
    "model_seed": "model_seed",
}
_TRAIN_FLAGS = {
    "preset": "preset",
    "epochs": "epochs",
    "lr_start": "lr_start",
    "lr_end": "lr_end",
    "batch_size": "batch_size",
    "patch_size": "patch_size",
    "looks": "looks",
    "seed": "seed",
    "max_patches": "max_patches",
    "val_images": "val_images",
    "out": "out_dir",
}


def _train_config(args, flags: dict[str, str], paths=()):
    """Merge ``--config`` and flags into a TrainConfig.

    Keys listed in ``paths`` are data locations, not hyperparameters; they
    fill the matching unset attributes of ``args``.
    """
    from .train import build_train_config

    values = read_config_file(args.config) if args.config else {}
    for key in paths:
        value = values.pop(key, None)
        if value is not None and getattr(args, key) is None:
            setattr(args, key, value)
    for dest, key in flags.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[key] = str(v)
    model_seed = values.pop("model_seed", None)
    cfg = build_train_config(values)
    if model_seed is not None:
        cfg = replace(cfg, model=replace(cfg.model, seed=int(model_seed)))
    return cfg


def cmd_train(args, parser):
    from .data import ingest_corpus
    from .train import train

    cfg = _train_config(args, {**_TRAIN_FLAGS, **_MODEL_FLAGS}, paths=("corpus", "val_corpus"))
    if args.corpus is None:
        raise DomainError("--corpus DIR is required")
    val = ingest_corpus(args.val_corpus) if args.val_corpus else None
    result = train(cfg, ingest_corpus(args.corpus), val)
    print(f"final checkpoint: {result.final_checkpoint}")
    print(f"best checkpoint: {result.best_checkpoint}")
    print(f"log: {result.log_path}")
    return 0


def cmd_param_count(args, parser):
    from .model import param_count

    cfg = _train_config(args, {"preset": "preset", **_MODEL_FLAGS})
    print(param_count(cfg.model))
    return 0


def cmd_despeckle(args, parser):
    _apply_config(args, parser)
    from .data import read_image, write_image
    from .model import SARFAH, despeckle
    from .wavelet import dwt2_haar

    if not (args.model and args.input and args.output):
        raise DomainError("--model, --input and --output are required")
    model = SARFAH.load(args.model)
    noisy = read_image(args.input)
    out = despeckle(model, noisy)
    write_image(args.output, out)
    if args.dump_subbands:
        d = Path(args.dump_subbands)
        d.mkdir(parents=True, exist_ok=True)
        for tag, img in (("input", noisy), ("output", out)):
            for name, plane in zip(("LL", "LH", "HL", "HH"), dwt2_haar(img).planes()):
                np.save(d / f"{tag}_{name}.npy", plane)
    return 0


def cmd_evaluate(args, parser):
    _apply_config(args, parser)
    from . import metrics as M
    from .data import read_image

    if args.denoised is None or (args.clean is None and args.noisy is None):
        raise DomainError("--denoised and at least one of --clean/--noisy are required")
    den = read_image(args.denoised)
    region = M.Region.parse(args.region) if args.region else None
    report = M.MetricReport()

    def add(name, fn, reg=None):
        try:
            report.add(name, fn(), reg)
        except M.MetricError as exc:
            warnings.warn(f"{name} skipped: {exc}", stacklevel=2)

    if args.clean is not None:
        clean = read_image(args.clean)
        add("PSNR", lambda: M.psnr(den, clean))
        add("SSIM", lambda: M.ssim(den, clean))
        add("GSSIM", lambda: M.gssim(den, clean))
        add("MAE", lambda: M.mae(den, clean))
        add("IICC", lambda: M.iicc(den, clean))
    if args.noisy is not None:
        noisy = read_image(args.noisy)
        reg = region or M.Region.full(den)
        add("ENL", lambda: M.enl(den, reg), reg)
        add("MoI", lambda: M.moi(den, noisy, reg), reg)
        add("MoR", lambda: M.mor(den, noisy))
        add("EPD-ROA-HD", lambda: M.epd_roa(den, noisy, reg, "HD"), reg)
        add("EPD-ROA-VD", lambda: M.epd_roa(den, noisy, reg, "VD"), reg)
    fh, w = _writer(args.output)
    w.writerow(["image", "metric", "region", "value"])
    w.writerows(report.rows(Path(args.denoised).name))
    if fh is not sys.stdout:
        fh.close()
    return 0


# ---------------------------------------------------------------------------
# parser


def _model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--preset", choices=["desk", "smoke", "full"], help="base configuration (default desk)")
    g.add_argument("--channels", type=int, help="feature channels C (even)")
    g.add_argument("--ode-steps", type=int, help="Euler steps N")
    g.add_argument("--ode-horizon", type=float, help="integration horizon T")
    g.add_argument("--no-ode-randomized", dest="ode_randomized", action="store_const", const=False,
                   help="plain Euler during training")
    g.add_argument("--shared-hfde", action="store_const", const=True, help="one HFDE for LH/HL/HH")
    g.add_argument("--deforconv", choices=["none", "encoder", "decoder", "both"], help="deformable conv placement")
    g.add_argument("--no-dass-lfsp", dest="dass_in_lfsp", action="store_const", const=False)
    g.add_argument("--no-dass-hfde", dest="dass_in_hfde", action="store_const", const=False)
    g.add_argument("--no-dynamic", dest="use_dynamic", action="store_const", const=False,
                   help="plain 1x1 fusion conv in DASS")
    g.add_argument("--no-node", dest="use_node", action="store_const", const=False,
                   help="apply the LFSP field once instead of integrating")
    g.add_argument("--model-seed", type=int, help="parameter initialisation seed")


def build_parser() -> Parser:
    parser = Parser(prog="sarfah", description="Frequency-adaptive SAR despeckling toolkit.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", parser_class=Parser, metavar="COMMAND")
    sub.required = True

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key=value configuration file")
        p.set_defaults(func=func)
        return p

    p = add("synthesize", cmd_synthesize, "Apply Gamma speckle to an image or write a procedural corpus.")
    p.add_argument("--input", help="clean image")
    p.add_argument("--output", help="output image, or directory with --procedural")
    p.add_argument("--looks", type=float, help="number of looks L (default 1)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--procedural", type=int, metavar="COUNT", help="write COUNT synthetic clean scenes")
    p.add_argument("--size", type=int, help="procedural scene size (default 256)")

    p = add("fit-dist", cmd_fit_dist, "Fit a Gamma or GGD law to image or array samples.")
    p.add_argument("--input", help="image or .npy samples")
    p.add_argument("--dist", choices=["gamma", "ggd"], help="distribution (default gamma)")
    p.add_argument("--subband", choices=["none", "LL", "LH", "HL", "HH", "ll", "lh", "hl", "hh"],
                   help="fit one Haar sub-band of the input")
    p.add_argument("--output", help="CSV path (default stdout)")

    p = add("theorem-check", cmd_theorem_check, "Monte-Carlo check of Haar statistics of Gamma fields.")
    p.add_argument("--shape", type=float, help="Gamma shape a (default 1)")
    p.add_argument("--scale", type=float, help="Gamma scale b (default 1)")
    p.add_argument("--level", type=int, help="decomposition level j (default 1)")
    p.add_argument("--field-size", type=int, help="field side, a power of two (default 1024)")
    p.add_argument("--min-samples", type=int, help="pool fields up to this many coefficients per band (default 1e6; 0 = one field)")
    p.add_argument("--moment-tol", type=float, help="relative LL moment tolerance (default 0.02)")
    p.add_argument("--skew-tol", type=float, help="detail-band skewness tolerance (default 0.02)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--output", help="CSV path (default stdout)")

    p = add("train", cmd_train, "Train the despeckling network on a grayscale corpus.")
    p.add_argument("--corpus", help="directory of PGM/PNG clean images")
    p.add_argument("--val-corpus", help="held-out validation images (default: last images of the corpus)")
    p.add_argument("--out", help="output directory for checkpoints and log")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr-start", type=float)
    p.add_argument("--lr-end", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--looks", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-patches", type=int)
    p.add_argument("--val-images", type=int)
    _model_flags(p)

    p = add("despeckle", cmd_despeckle, "Despeckle an image with a trained checkpoint.")
    p.add_argument("--model", help="checkpoint file")
    p.add_argument("--input", help="noisy image (sides divisible by 4)")
    p.add_argument("--output", help="output image")
    p.add_argument("--dump-subbands", metavar="DIR", help="also save input/output Haar sub-bands as .npy")

    p = add("evaluate", cmd_evaluate, "Compute quality metrics as CSV rows image,metric,region,value.")
    p.add_argument("--denoised", help="despeckled image")
    p.add_argument("--clean", help="reference image (full-reference metrics)")
    p.add_argument("--noisy", help="speckled image (no-reference metrics)")
    p.add_argument("--region", help="x0,y0,w,h box for ENL, MoI and EPD-ROA")
    p.add_argument("--output", help="CSV path (default stdout)")

    p = add("param-count", cmd_param_count, "Print the trainable parameter count of a configuration.")
    _model_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        return args.func(args, sub)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
