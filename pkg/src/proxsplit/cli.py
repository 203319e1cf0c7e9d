"""Command-line entry point: degrade, train, restore, eval, selfcheck, synth.

Exit codes: 0 on success, 1 when a selfcheck check fails, 2 for usage errors,
missing files and malformed inputs. Diagnostics go to stderr, results to stdout.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from . import io, selfcheck
from .degradation import DegradationSpec, apply_forward_model
from .metrics import EvalReport
from .neural import TrainConfig
from .psn import PsnConfig, init_model, restore, train_psn
from .synthetic import make_image
from .tensor import ConfigError, ShapeError, bicubic_resample, resize

log = logging.getLogger("proxsplit")

TASK_NAMES = {"denoise": "denoise", "sr": "superres", "superres": "superres"}
DATA_KEYS = {"patch_size": int, "samples_per_image": int, "patch_seed": int, "model_seed": int,
             "flips": bool, "rotations": bool}


class UsageError(Exception):
    pass


def _parser():
    p = argparse.ArgumentParser(prog="proxsplit", description="Learned proximal-splitting image restoration.")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("degrade", help="apply the forward model to a directory of images")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--task", choices=sorted(TASK_NAMES), default="denoise")
    d.add_argument("--sigma", type=float, default=0.0, help="noise std in 8-bit units (0-255)")
    d.add_argument("--scale", type=int, default=1)
    d.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train a model on patches from a directory")
    t.add_argument("--data", required=True)
    t.add_argument("--task", choices=sorted(TASK_NAMES), default="denoise")
    t.add_argument("--config", help="key = value file with model, optimizer and data settings")
    t.add_argument("--out", required=True)
    t.add_argument("--sigma", type=float, help="fixed noise std in 8-bit units")
    t.add_argument("--sigma-range", type=float, nargs=2, metavar=("LO", "HI"),
                   help="noise-blind training range in 8-bit units")
    t.add_argument("--scale", type=int, help="super-resolution factor")
    t.add_argument("--loss-csv", help="loss curve path (default: OUT.loss.csv)")

    r = sub.add_parser("restore", help="restore every image in a directory")
    r.add_argument("--model", required=True)
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="PSNR/SSIM of restored (or baseline) images against clean ones")
    e.add_argument("--model", help="omit to score the degraded input (bicubic-upsampled for SR)")
    e.add_argument("--clean", required=True)
    e.add_argument("--degraded", required=True)
    e.add_argument("--report", required=True)

    sub.add_parser("selfcheck", help="run numerical self-checks")

    s = sub.add_parser("synth", help="write procedural grayscale test images")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=6)
    s.add_argument("--size", type=int, default=96)
    s.add_argument("--seed", type=int, default=0)
    return p


def _require_dir(path):
    if not os.path.isdir(path):
        raise FileNotFoundError(f"no such directory: {path}")
    files = io.list_images(path)
    if not files:
        raise FileNotFoundError(f"no .pgm/.ppm images in {path}")
    return files


def _degradation_spec(task, sigma, scale, seed):
    kind = TASK_NAMES[task]
    if kind == "superres":
        if sigma:
            raise UsageError("--sigma is not used for super-resolution")
        return DegradationSpec("superres", scale=scale if scale and scale > 1 else 2, seed=seed)
    if scale not in (None, 1):
        raise UsageError("--scale only applies to super-resolution")
    return DegradationSpec("denoise", sigma=sigma / 255.0, seed=seed)


def cmd_degrade(args):
    files = _require_dir(args.inp)
    spec = _degradation_spec(args.task, args.sigma, args.scale, args.seed)
    os.makedirs(args.out, exist_ok=True)
    for i, path in enumerate(files):
        x = io.read_image(path)
        per = DegradationSpec(spec.kind, spec.sigma, spec.scale, spec.seed + i)
        io.write_image(apply_forward_model(x, per), os.path.join(args.out, os.path.basename(path)))
    with open(os.path.join(args.out, "degradation.cfg"), "w") as fh:
        fh.write(spec.to_text())
    print(f"degraded {len(files)} images into {args.out}")
    return 0


def _coerce(kind, raw, key):
    try:
        if kind is bool:
            s = raw.strip().lower()
            if s not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return s in ("true", "1", "yes")
        return kind(raw)
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {raw!r}") from err


def split_train_config(values: dict):
    """Split a flat key = value mapping into model, optimizer and data settings.

    Keys matching none of the three groups are a hard error.
    """
    model_keys = {f.name for f in fields(PsnConfig)}
    train_types = {f.name: type(f.default) for f in fields(TrainConfig)}
    model, train, data = {}, {}, {}
    unknown = []
    for key, raw in values.items():
        if key in model_keys:
            model[key] = raw
        elif key in train_types:
            train[key] = _coerce(train_types[key], raw, key)
        elif key in DATA_KEYS:
            data[key] = _coerce(DATA_KEYS[key], raw, key)
        else:
            unknown.append(key)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return model, train, data


def cmd_train(args):
    files = _require_dir(args.data)
    values = io.read_config(args.config) if args.config else {}
    model_kw, train_kw, data_kw = split_train_config(values)
    kind = TASK_NAMES[args.task]

    images = [io.read_image(p)[0] for p in files]
    patch_src = io.PatchSource(args.data, data_kw.get("patch_size", 32), data_kw.get("samples_per_image", 100),
                               data_kw.get("patch_seed", 0), data_kw.get("flips", False),
                               data_kw.get("rotations", False))
    patches = list(io.sample_patches(patch_src, images))
    if not patches:
        raise UsageError(f"no image in {args.data} is at least {patch_src.patch_size} pixels")
    patches = np.stack(patches)

    model_kw["task"] = kind
    if kind == "superres":
        if args.scale is not None:
            model_kw["sr_scale"] = str(args.scale)
        model_kw.setdefault("sr_scale", "2")
    elif args.scale not in (None, 1):
        raise UsageError("--scale only applies to super-resolution")
    parsed = PsnConfig.from_mapping(model_kw)
    mc = dict(PsnConfig.desk().__dict__)
    mc.update({key: getattr(parsed, key) for key in model_kw})
    if "input_channels" not in model_kw:
        mc["input_channels"] = patches.shape[1]
    if kind == "superres":
        degradation = DegradationSpec("superres", scale=mc["sr_scale"])
    elif args.sigma_range is not None:
        lo, hi = args.sigma_range
        mc["sigma_range"], mc["known_sigma"] = (lo / 255.0, hi / 255.0), None
        degradation = mc["sigma_range"]
    else:
        sigma = (args.sigma if args.sigma is not None else 25.0) / 255.0
        mc["known_sigma"], mc["sigma_range"] = sigma, None
        degradation = DegradationSpec("denoise", sigma=sigma)
    config = PsnConfig(**mc)
    tc = TrainConfig(**train_kw)
    model = init_model(config, data_kw.get("model_seed", 0))
    log.info("training on %d patches of %dx%d for %d epochs", len(patches), *patches.shape[2:], tc.epochs)
    result = train_psn(model, patches, degradation, tc,
                       log=lambda ep, loss: log.info("epoch %d loss %.6g", ep + 1, loss))
    io.save_checkpoint(result.model, args.out)
    loss_path = args.loss_csv or args.out + ".loss.csv"
    with open(loss_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for ep, loss in enumerate(result.losses, 1):
            w.writerow([ep, repr(loss)])
    print(f"saved {args.out} and {loss_path}")
    return 0


def _model_spec(model):
    cfg = model.config
    if cfg.task == "superres":
        return DegradationSpec("superres", scale=cfg.sr_scale)
    return DegradationSpec("denoise")


def cmd_restore(args):
    model = io.load_checkpoint(args.model)
    files = _require_dir(args.inp)
    spec = _model_spec(model)
    os.makedirs(args.out, exist_ok=True)
    for path in files:
        y = io.read_image(path)
        io.write_image(restore(model, y, spec), os.path.join(args.out, os.path.basename(path)))
    print(f"restored {len(files)} images into {args.out}")
    return 0


def _baseline(y, clean_shape):
    h, w = clean_shape[-2:]
    if y.shape[-2:] == (h, w):
        return y
    fy, fx = h // y.shape[-2], w // y.shape[-1]
    if fy == fx and fy * y.shape[-2] == h and fx * y.shape[-1] == w and fy in (2, 3, 4):
        return bicubic_resample(y, fy, "up")
    return resize(y, h, w)


def cmd_eval(args):
    clean_files = _require_dir(args.clean)
    _require_dir(args.degraded)
    model = io.load_checkpoint(args.model) if args.model else None
    spec = _model_spec(model) if model is not None else None
    report = EvalReport()
    for path in clean_files:
        name = os.path.basename(path)
        other = os.path.join(args.degraded, name)
        if not os.path.exists(other):
            raise FileNotFoundError(f"{name} missing from {args.degraded}")
        x = io.read_image(path)
        y = io.read_image(other)
        out = restore(model, y, spec) if model is not None else _baseline(y, x.shape)
        if out.shape != x.shape:
            raise ShapeError(f"{name}: output {out.shape} does not match clean {x.shape}")
        report.add(name, x, out)
    report.write_csv(args.report)
    print(report.to_table())
    return 0


def cmd_selfcheck(args):
    failed = 0
    for name, ok, detail in selfcheck.run_all():
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        failed += not ok
    return 1 if failed else 0


def cmd_synth(args):
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        io.write_image(make_image(args.size, args.seed * 1000 + i), os.path.join(args.out, f"img{i:03d}.pgm"))
    print(f"wrote {args.count} images into {args.out}")
    return 0


COMMANDS = {"degrade": cmd_degrade, "train": cmd_train, "restore": cmd_restore, "eval": cmd_eval,
            "selfcheck": cmd_selfcheck, "synth": cmd_synth}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as err:
        print(f"proxsplit: {err}", file=sys.stderr)
        return 2
    except (UsageError, ConfigError, io.DecodeError, ShapeError, ValueError) as err:
        print(f"proxsplit {args.command}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
