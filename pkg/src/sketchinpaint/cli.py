"""Command-line entry point: ``sketchinpaint <command> [options]``.

Exit codes: 0 success, 2 input error, 3 checkpoint error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import GenerationError, MaskGenConfig, SyntheticSceneConfig, generate_mask_sample, synth_scene
from .io import read_gray, read_mask, read_rgb, write_png
from .metrics import edge_line_prf, psnr, ssim
from .mpe import MPEConfig, compute_mpe, masking_direction, masking_distance, resize_mpe, resize_nearest_hw
from .sketch import SSU, LineSegmentSet, SSUConfig, canny, rasterize_lines, rgb_to_gray, upsample_iterative
from .tensor import ContractError, DimensionError
from .tensor.nn import CheckpointError, Module
from .tensor.serialize import FormatError, load_checkpoint, save_checkpoint, save_tensor
from .texture import FTR, SFE, FTRConfig, SFEConfig
from .train import (
    CurveLog,
    GANTrainConfig,
    NumericError,
    SSUTrainConfig,
    TSRTrainConfig,
    finetune_zerora,
    pretrain_ftr,
    reports_log,
    train_ssu,
    train_tsr_toy,
    write_json,
)
from .tsr import TSR, SketchInput, TSRConfig, mask_predict

EXIT_OK, EXIT_INPUT, EXIT_CHECKPOINT, EXIT_NUMERIC = 0, 2, 3, 4


class InputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def parse_band(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo,hi, got {text!r}") from None
    return lo, hi


def _load_into(model: Module, path) -> Module:
    try:
        state = load_checkpoint(path)
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    model.load_state_dict(state)
    return model


def _tsr_config(preset: str, size: int) -> TSRConfig:
    return TSRConfig(image_size=size) if preset == "paper-shape" else TSRConfig.tiny(image_size=size)


def _ftr_config(preset: str) -> FTRConfig:
    return FTRConfig() if preset == "paper-shape" else FTRConfig.tiny()


def _sfe_config(preset: str) -> SFEConfig:
    return SFEConfig() if preset == "paper-shape" else SFEConfig.tiny()


def _ssu_config(preset: str, gamma: float = 2.0, beta: float = 2.0) -> SSUConfig:
    base = SSUConfig(gamma=gamma, beta=beta)
    return base if preset == "paper-shape" else SSUConfig.tiny(gamma=gamma, beta=beta)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _format_value(v) -> str:
    # tuples are written back in the syntax their option parses: HxW sizes, lo,hi bands
    if isinstance(v, tuple):
        return ("x" if all(isinstance(e, int) for e in v) else ",").join(str(e) for e in v)
    return str(v)


def dump_config(args, directory: Path, name: str = "effective_config.ini") -> Path:
    cp = configparser.ConfigParser()
    cp["global"] = {k: str(getattr(args, k)) for k in ("seed", "preset")}
    cp[args.command] = {k: _format_value(v) for k, v in sorted(vars(args).items())
                        if k not in ("seed", "preset", "command", "func", "config") and v is not None}
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / name
    with open(path, "w") as fh:
        cp.write(fh)
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_mpe(args) -> int:
    mask = read_mask(args.mask)
    cfg = MPEConfig(d_max=args.dmax, d=args.d)
    out = _out_dir(args)
    ftr = FTR(replace(_ftr_config(args.preset), mpe=cfg), np.random.default_rng(args.seed))
    if args.ckpt:
        _load_into(ftr, args.ckpt)
    enc = compute_mpe(mask, ftr.w_dir, cfg)
    dist = masking_distance(mask).astype(np.float32)
    direction = masking_direction(mask).astype(np.float32)
    if args.resize:
        h, w = args.resize
        enc = resize_mpe(enc, h, w)
        dist, direction = resize_nearest_hw(dist, (h, w)), resize_nearest_hw(direction, (h, w))
    save_tensor(out / "distance.zten", dist)
    save_tensor(out / "direction.zten", direction)
    save_tensor(out / "p_dis.zten", enc.p_dis.astype(np.float32))
    save_tensor(out / "p_dir.zten", enc.p_dir.data)
    write_png(out / "distance.png", dist / dist.max() if dist.max() > 0 else dist)
    for k, name in enumerate(("up", "down", "left", "right")):
        write_png(out / f"direction_{name}.png", direction[..., k])
    dump_config(args, out)
    return EXIT_OK


def _sketch_inputs(args) -> SketchInput:
    image = read_rgb(args.image)
    h, w = image.shape[1:]
    mask = read_mask(args.mask)
    if mask.shape != (h, w):
        raise InputError(f"mask {mask.shape} does not match image {(h, w)}")
    edge = read_gray(args.edge) if args.edge else canny(rgb_to_gray(image)).astype(np.float64)
    line = (rasterize_lines(LineSegmentSet.load(args.lines), h, w) if args.lines else np.zeros((h, w)))
    if edge.shape != (h, w):
        raise InputError(f"edge map {edge.shape} does not match image {(h, w)}")
    return SketchInput((image * 2 - 1)[None], edge[None, None], line[None, None], mask[None, None].astype(np.float64))


def cmd_tsr(args) -> int:
    inp = _sketch_inputs(args)
    size = inp.image.shape[2]
    if inp.image.shape[3] != size or size % 8:
        raise InputError(f"structure inference needs square inputs divisible by 8, got {inp.image.shape[2:]}")
    model = TSR(_tsr_config(args.preset, size), np.random.default_rng(args.seed))
    if args.ckpt:
        _load_into(model, args.ckpt)
    else:
        print("warning: no --ckpt given, using seed-initialized weights", file=sys.stderr)
    model.eval()
    res = mask_predict(inp, model, iters=args.iters)
    out = _out_dir(args)
    write_png(out / "edge.png", res.edge[0, 0])
    write_png(out / "line.png", res.line[0, 0])
    save_tensor(out / "structure.zten", res.probs[0].astype(np.float32))
    if args.debug:
        for t, conf in enumerate(res.confidences, start=1):
            write_png(out / f"confidence_edge_{t}.png", conf[0, 0])
            write_png(out / f"confidence_line_{t}.png", conf[0, 1])
    dump_config(args, out)
    return EXIT_OK


def cmd_upsample(args) -> int:
    src = read_gray(args.map)
    h, w = args.target
    if h < src.shape[0] or w < src.shape[1]:
        raise InputError(f"target {h}x{w} is smaller than the source {src.shape[0]}x{src.shape[1]}")
    cfg = _ssu_config(args.preset, args.gamma, args.beta)
    model = SSU(cfg, np.random.default_rng(args.seed))
    if args.ckpt:
        _load_into(model, args.ckpt)
    out = upsample_iterative(src, model, h, w, cfg)
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".zten":
        save_tensor(path, out)
    else:
        write_png(path, out)
    dump_config(args, path.parent, f"{path.stem}.config.ini")
    return EXIT_OK


def _shape_summary(model: Module) -> dict:
    return {"parameters": model.num_parameters(),
            "shapes": {k: list(v.shape) for k, v in model.named_parameters()}}


def cmd_train(args) -> int:
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    size = args.size
    if args.model == "tsr":
        model = TSR(_tsr_config(args.preset, size), rng)
    elif args.model == "ssu":
        model = SSU(_ssu_config(args.preset), rng)
    else:
        model = FTR(_ftr_config(args.preset), rng)
    summary = {"model": args.model, "preset": args.preset, "steps": args.steps, **_shape_summary(model)}
    dump_config(args, out)
    if args.preset == "paper-shape":
        summary["note"] = "paper-shape builds the full parameter tree for shape validation only; no training"
        write_json(out / "summary.json", summary)
        print(json.dumps({k: summary[k] for k in ("model", "parameters")}))
        return EXIT_OK
    save_checkpoint(out / "initial.ckpt", model.state_dict())
    if args.steps == 0:
        write_json(out / "summary.json", summary)
        return EXIT_OK
    scene = SyntheticSceneConfig(size=size)
    masks = MaskGenConfig(size=size)
    # unset --batch/--lr fall back to each model's training defaults
    kw = {k: v for k, v in (("batch", args.batch), ("lr", args.lr)) if v is not None}
    if args.model == "tsr":
        log = train_tsr_toy(model, TSRTrainConfig(steps=args.steps, seed=args.seed, ckpt_every=args.ckpt_every,
                                                  scene=scene, mask=masks, **kw),
                            ckpt_dir=out / "checkpoints" if args.ckpt_every else None).log
    elif args.model == "ssu":
        log = train_ssu(model, SSUTrainConfig(steps=args.steps, seed=args.seed, **kw)).log
    else:
        if "lr" in kw:
            kw["lr_g"] = kw.pop("lr")
        res = pretrain_ftr(model, GANTrainConfig(steps=args.steps, seed=args.seed, scene=scene, mask=masks, **kw))
        log = reports_log(res.reports)
        summary["val_psnr"] = res.val_psnr
        save_checkpoint(out / "disc.ckpt", res.disc.state_dict())
    log.write_csv(out / "curve.csv")
    save_checkpoint(out / "model.ckpt", model.state_dict())
    write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_finetune(args) -> int:
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    ftr = _load_into(FTR(_ftr_config(args.preset), rng), args.ftr_ckpt)
    sfe = SFE(_sfe_config(args.preset), rng)
    if args.sfe_ckpt:
        _load_into(sfe, args.sfe_ckpt)
    dump_config(args, out)
    cfg = GANTrainConfig(steps=args.steps, batch=args.batch, seed=args.seed, lr_g=args.lr or 3e-4,
                         scene=SyntheticSceneConfig(size=args.size), mask=MaskGenConfig(size=args.size))
    res = finetune_zerora(ftr, sfe, cfg, with_zerora=not args.no_zerora)
    reports_log(res.reports).write_csv(out / "curve.csv")
    CurveLog([{"step": s, "psnr": p} for s, p in res.val_psnr]).write_csv(out / "val_psnr.csv")
    save_checkpoint(out / "ftr.ckpt", ftr.state_dict())
    save_checkpoint(out / "sfe.ckpt", sfe.state_dict())
    write_json(out / "summary.json", {"alphas": res.alphas, "val_psnr": res.val_psnr, "zerora": not args.no_zerora})
    return EXIT_OK


def cmd_genmask(args) -> int:
    out = _out_dir(args)
    cfg = MaskGenConfig(size=args.size, rate=args.rate, blob_prob=args.blob_prob)
    log = CurveLog()
    for i in range(args.count):
        seed = args.seed + i
        s = generate_mask_sample(cfg, seed)
        write_png(out / f"mask_{i:04d}.png", s.mask.astype(np.float64))
        log.add(index=i, seed=seed, rate=s.rate, blob=int(s.blob), attempts=s.attempts)
    log.write_csv(out / "masks.csv")
    dump_config(args, out)
    return EXIT_OK


def cmd_metrics(args) -> int:
    if args.kind == "image":
        pred, gt = read_rgb(args.pred), read_rgb(args.gt)
        if pred.shape != gt.shape:
            raise InputError(f"shape mismatch: {pred.shape} vs {gt.shape}")
        result = {"psnr": psnr(pred, gt), "ssim": ssim(pred, gt)}
    else:
        pred, gt = read_gray(args.pred), read_gray(args.gt)
        mask = read_mask(args.mask) if args.mask else None
        result = edge_line_prf(pred, gt, mask, args.threshold).as_dict()
    print(json.dumps(result, sort_keys=True))
    if args.out:
        out = _out_dir(args)
        write_json(out / "metrics.json", result)
        dump_config(args, out)
    return EXIT_OK


def cmd_synth(args) -> int:
    out = _out_dir(args)
    cfg = SyntheticSceneConfig(size=args.size)
    for i in range(args.count):
        sc = synth_scene(cfg, args.seed + i)
        write_png(out / f"scene_{i:04d}_image.png", sc.image)
        write_png(out / f"scene_{i:04d}_edge.png", sc.edge)
        write_png(out / f"scene_{i:04d}_line.png", sc.line)
        sc.lines.save(out / f"scene_{i:04d}_lines.txt")
    dump_config(args, out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--preset", choices=("tiny", "paper-shape"), default="tiny")
    common.add_argument("--config", help="key = value file with [global] and per-command sections")

    p = argparse.ArgumentParser(prog="sketchinpaint", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("mpe", parents=[common], help="masking positional encoding maps")
    s.add_argument("--mask", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--d", type=int, default=64)
    s.add_argument("--dmax", type=int, default=128)
    s.add_argument("--resize", type=parse_size)
    s.add_argument("--ckpt", help="texture-restorer checkpoint providing the direction embedding")
    s.set_defaults(func=cmd_mpe)

    s = sub.add_parser("tsr", parents=[common], help="structure inference with iterative re-masking")
    s.add_argument("--image", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--edge", help="edge PNG (default: Canny of the image)")
    s.add_argument("--lines", help="line-segment text file")
    s.add_argument("--ckpt")
    s.add_argument("--iters", type=int, default=5)
    s.add_argument("--out", required=True)
    s.add_argument("--debug", action="store_true")
    s.set_defaults(func=cmd_tsr)

    s = sub.add_parser("upsample", parents=[common], help="iterative structure upsampling")
    s.add_argument("--map", required=True)
    s.add_argument("--ckpt")
    s.add_argument("--target", type=parse_size, required=True)
    s.add_argument("--gamma", type=float, default=2.0)
    s.add_argument("--beta", type=float, default=2.0)
    s.add_argument("--out", required=True, help="PNG, or .zten for the raw float map")
    s.set_defaults(func=cmd_upsample)

    s = sub.add_parser("train", parents=[common], help="toy training on synthetic data")
    s.add_argument("--model", choices=("tsr", "ssu", "ftr"), default="tsr")
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--batch", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--ckpt-every", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("finetune", parents=[common], help="structure finetuning of a texture checkpoint")
    s.add_argument("--ftr-ckpt", required=True)
    s.add_argument("--sfe-ckpt")
    s.add_argument("--steps", type=int, default=300)
    s.add_argument("--batch", type=int, default=2)
    s.add_argument("--lr", type=float)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--no-zerora", action="store_true", help="start the fusion scales at 1 (ablation)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("genmask", parents=[common], help="free-form masks")
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--rate", type=parse_band, default=(0.1, 0.5))
    s.add_argument("--blob-prob", type=float, default=0.2)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_genmask)

    s = sub.add_parser("metrics", parents=[common], help="PSNR/SSIM or structure P/R/F1")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--kind", choices=("image", "map"), default="image")
    s.add_argument("--mask")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("synth", parents=[common], help="synthetic scenes with edge/line ground truth")
    s.add_argument("--count", type=int, default=4)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def _config_defaults(path: str, command: str) -> dict[str, str]:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise InputError(f"cannot read config file {path}")
    values: dict[str, str] = {}
    for section in ("global", command):
        if cp.has_section(section):
            values.update({k.replace("-", "_"): v for k, v in cp[section].items()})
    return values


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        # file values become defaults, so explicit flags still win; argparse
        # applies each option's type to string defaults
        sub = parser._subparsers._group_actions[0].choices[args.command]
        values = _config_defaults(args.config, args.command)
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise InputError(f"unknown config keys for '{args.command}': {unknown}")
        for action in sub._actions:
            if action.dest in values and isinstance(action, argparse._StoreTrueAction):
                values[action.dest] = configparser.ConfigParser.BOOLEAN_STATES[values[action.dest].lower()]
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return args.func(args)
    except (CheckpointError, FormatError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, GenerationError, DimensionError, ContractError, OSError, ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
