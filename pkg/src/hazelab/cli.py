"""Command-line entry point: ``hazelab <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 argument error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import aodnet, classical, domain, haze
from .detection import EvalConfig, load_detections, load_ground_truth, mean_ap
from .image import load_image, quantize, save_image
from .losses import LOSS_NAMES, finite_diff_check
from .metrics import ms_ssim, psnr, ssim

IMAGE_EXTS = (".png", ".ppm", ".pgm")

# max relative error allowed per loss by the gradient check
GRADCHECK_TOL = {"l2": 1e-4, "l1": 1e-3, "ssim": 1e-3, "msssim": 1e-3, "msssim_l1": 1e-3, "msssim_l2": 1e-3}


class CliError(Exception):
    """Runtime failure reported with exit code 1."""


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from None
    if lo > hi:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return lo, hi


def _image_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise CliError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_EXTS and not p.name.startswith("."))


def _write_text(path, text: str) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.4f}"


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> None:
    out = Path(args.out)
    for sub in ("hazy", "clean", "meta"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    if args.input:
        sources = [(p.stem, load_image(p)) for p in _image_files(args.input)]
    else:
        sources = [(f"scene{i:04d}", haze.gen_scene(args.size, args.size, int(rng.integers(2**31))))
                   for i in range(args.count)]
    if not sources:
        raise CliError("no input images")
    for name, clean in sources:
        if clean.shape[2] != 3:
            clean = np.repeat(clean, 3, axis=2)
        s = int(rng.integers(2**31))
        params = haze.random_haze_params(s, args.a_range, args.beta_range)
        kind = args.depth or haze.DEPTH_KINDS[int(rng.integers(len(haze.DEPTH_KINDS)))]
        h, w = clean.shape[:2]
        t = haze.transmission_from_depth(haze.gen_depth(kind, w, h, s + 1), params.beta)
        hazy = haze.synthesize_haze(clean, t, params.A)
        save_image(hazy, out / "hazy" / f"{name}.png")
        save_image(clean, out / "clean" / f"{name}.png")
        save_image(t, out / "meta" / f"{name}_t.pgm")
        sidecar = {
            "A": list(params.A), "beta": params.beta, "t_min": params.t_min,
            "depth": kind, "depth_seed": s + 1, "width": w, "height": h,
            "t_stats": {"min": float(t.min()), "max": float(t.max()), "mean": float(t.mean())},
        }
        _write_text(out / "meta" / f"{name}.json", json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(f"synth: wrote {len(sources)} hazy images to {out / 'hazy'}")


def _true_inversion(meta_dir: Path):
    def stage(img, name):
        side = json.loads((meta_dir / f"{name}.json").read_text())
        depth = haze.gen_depth(side["depth"], side["width"], side["height"], side["depth_seed"])
        t = haze.transmission_from_depth(depth, side["beta"])
        return haze.invert_haze(img, t, side["A"], side["t_min"])
    return stage


def parse_stages(method: str):
    """Turn ``dcp,clahe,aodnet:CKPT,invert:META`` into ``(name, callable(img, stem))`` stages."""
    stages = []
    for item in filter(None, (s.strip() for s in method.split(","))):
        kind, _, arg = item.partition(":")
        if kind == "dcp":
            stages.append((kind, lambda img, name: classical.dcp_dehaze(img)))
        elif kind == "clahe":
            stages.append((kind, lambda img, name: classical.clahe(img)))
        elif kind == "aodnet":
            if not arg:
                raise CliError("aodnet stage needs a checkpoint: aodnet:PATH")
            net = aodnet.load_checkpoint(arg)
            stages.append((kind, lambda img, name, net=net: aodnet.dehaze(net, img)))
        elif kind == "invert":
            if not arg:
                raise CliError("invert stage needs the synth meta directory: invert:DIR")
            stages.append((kind, _true_inversion(Path(arg))))
        else:
            raise CliError(f"unknown dehaze method {kind!r}")
    return stages


def cmd_dehaze(args) -> None:
    stages = parse_stages(args.method)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = _image_files(args.input)
    for path in files:
        img = load_image(path)
        for _, stage in stages:
            # 8-bit between stages, as if each stage had been written to disk
            img = quantize(stage(img, path.stem)).astype(np.float64) / 255.0
        save_image(img, out / f"{path.stem}.png")
    print(f"dehaze: {len(files)} images through [{args.method}] -> {out}")


def load_pairs(data_dir) -> list[haze.Pair]:
    data = Path(data_dir)
    pairs = []
    for hp in _image_files(data / "hazy"):
        cp = data / "clean" / hp.name
        if not cp.exists():
            raise CliError(f"no clean counterpart for {hp.name}")
        hazy, clean = load_image(hp), load_image(cp)
        if hazy.shape != clean.shape:
            raise CliError(f"size mismatch for {hp.name}")
        pairs.append(haze.Pair(hazy, clean, hp.stem))
    if not pairs:
        raise CliError(f"no training pairs under {data}")
    return pairs


def cmd_train(args, overrides: dict) -> None:
    pairs = load_pairs(args.data)
    preset = {"learning_rate": 0.002, "batch_size": 16} if args.finetune else {}
    cfg = aodnet.TrainConfig.from_dict({**preset, **overrides})
    net = aodnet.load_checkpoint(args.finetune) if args.finetune else aodnet.init(cfg.seed)
    print("train config: " + json.dumps(vars(cfg), sort_keys=True), file=sys.stderr)
    result = aodnet.train(net, pairs, cfg)
    aodnet.save_checkpoint(result.net, args.out)
    _write_text(f"{args.out}.history.json", json.dumps({"config": vars(cfg), "loss": result.history}) + "\n")
    first, last = result.history[0], result.history[-1]
    print(f"train: {len(result.history)} iterations, loss {first:.5f} -> {last:.5f}; saved {args.out}")


def quality_rows(pred_dir, ref_dir) -> list[dict]:
    rows = []
    for rp in _image_files(ref_dir):
        pp = Path(pred_dir) / rp.name
        if not pp.exists():
            raise CliError(f"missing prediction for {rp.name}")
        x, y = load_image(pp), load_image(rp)
        if x.shape != y.shape:
            raise CliError(f"size mismatch for {rp.name}")
        rows.append({"image": rp.name, "psnr_db": psnr(x, y), "ssim": ssim(x, y), "ms_ssim": ms_ssim(x, y)})
    if not rows:
        raise CliError(f"no reference images in {ref_dir}")
    return rows


def cmd_eval_quality(args) -> None:
    rows = quality_rows(args.pred, args.ref)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image", "psnr_db", "ssim", "ms_ssim"])
    for r in rows:
        w.writerow([r["image"], _fmt(r["psnr_db"]), _fmt(r["ssim"]), _fmt(r["ms_ssim"])])
    means = {k: float(np.mean([r[k] for r in rows])) for k in ("psnr_db", "ssim", "ms_ssim")}
    w.writerow(["mean", _fmt(means["psnr_db"]), _fmt(means["ssim"]), _fmt(means["ms_ssim"])])
    _write_text(args.out, buf.getvalue())
    print(buf.getvalue(), end="")


def cmd_eval_map(args, overrides: dict) -> None:
    cfg = EvalConfig(**overrides)
    dets = load_detections(args.det)
    gts = load_ground_truth(args.gt)
    result = mean_ap(dets, gts, cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "ap"])
    for c, ap in result.per_class.items():
        w.writerow([c, _fmt(ap)])
    w.writerow(["mAP", _fmt(result.mAP)])
    _write_text(args.out, buf.getvalue())
    print(buf.getvalue(), end="")


def cmd_grl_demo(args) -> None:
    report = domain.run_adaptation_experiment(args.seed, args.lam, args.iters, args.target_variant)
    keys = ("seed", "lambda", "iters", "baseline_target_acc", "adapted_target_acc", "domain_acc_final",
            "target_variant")
    text = json.dumps({k: report[k] for k in keys}, indent=2) + "\n"
    _write_text(args.out, text)
    print(text, end="")


def gradcheck_pairs(seed: int, n: int = 4, size: int = 8):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        y = rng.random((size, size, 3))
        x = np.clip(0.5 * y + 0.5 * rng.random((size, size, 3)), 0.0, 1.0)
        yield x, y


def run_gradcheck(losses, seed: int = 0, n_pairs: int = 4, n_samples: int = 32) -> dict[str, float]:
    worst = {}
    for name in losses:
        errs = [finite_diff_check(name, x, y, 1e-4, n_samples, seed + i, skip_below=1e-3)
                for i, (x, y) in enumerate(gradcheck_pairs(seed, n_pairs))]
        worst[name] = max(errs)
    return worst


def cmd_gradcheck(args) -> int:
    names = args.loss.split(",") if args.loss else list(LOSS_NAMES)
    for n in names:
        if n not in LOSS_NAMES:
            raise CliError(f"unknown loss {n!r}")
    worst = run_gradcheck(names, args.seed)
    ok = True
    for name, err in worst.items():
        passed = err < GRADCHECK_TOL[name]
        ok &= passed
        print(f"{name}: max rel. error {err:.3e} ({'ok' if passed else 'FAIL'} < {GRADCHECK_TOL[name]:g})")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hazelab", description="Haze synthesis, removal and evaluation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize hazy images")
    p.add_argument("--in", dest="input", help="directory of clean images (default: generate scenes)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta-range", type=_range, default=(0.5, 2.0))
    p.add_argument("--a-range", type=_range, default=(0.7, 1.0))
    p.add_argument("--depth", choices=("ramp", "radial", "blob"))
    p.add_argument("--count", type=int, default=20, help="scenes to generate without --in")
    p.add_argument("--size", type=int, default=64, help="generated scene size")

    p = sub.add_parser("dehaze", help="apply a dehazing cascade")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", required=True, help="comma list of dcp, clahe, aodnet:CKPT, invert:METADIR")

    p = sub.add_parser("train", help="train the AOD-style network")
    p.add_argument("--data", required=True, help="directory with hazy/ and clean/ subdirectories")
    p.add_argument("--loss", choices=LOSS_NAMES)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--finetune", help="checkpoint to warm-start from (lr 0.002, batch 16)")
    for flag, typ in (("learning-rate", float), ("momentum", float), ("weight-decay", float),
                      ("grad-clip-norm", float), ("batch-size", int), ("epochs", int), ("seed", int),
                      ("crop-size", int)):
        p.add_argument(f"--{flag}", type=typ)

    p = sub.add_parser("eval-quality", help="PSNR / SSIM / MS-SSIM against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-map", help="mAP of detections against ground truth")
    p.add_argument("--det", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", dest="iou_threshold", type=float)
    p.add_argument("--classes", type=lambda s: tuple(filter(None, s.split(","))))
    p.add_argument("--interpolation", choices=("all-point", "11-point"))
    p.add_argument("--config", help="JSON file with EvalConfig fields")
    p.add_argument("--out", required=True)

    p = sub.add_parser("grl-demo", help="gradient-reversal domain adaptation experiment")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--target-variant", type=int, choices=(1, 2), default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    p.add_argument("--loss", help=f"comma list from {', '.join(LOSS_NAMES)} (default: all)")
    p.add_argument("--seed", type=int, default=0)
    return parser


TRAIN_KEYS = ("learning_rate", "momentum", "weight_decay", "grad_clip_norm", "batch_size", "epochs", "seed",
              "crop_size", "loss")
EVAL_KEYS = ("iou_threshold", "classes", "interpolation")


def _merge_config(args, keys) -> dict:
    """Config-file values overlaid by explicitly given flags."""
    merged = {}
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text())
        unknown = set(data) - set(keys)
        if unknown:
            raise CliError(f"unknown config fields: {sorted(unknown)}")
        merged.update(data)
    for k in keys:
        if getattr(args, k, None) is not None:
            merged[k] = getattr(args, k)
    if "classes" in merged and merged["classes"] is not None:
        merged["classes"] = tuple(merged["classes"])
    return merged


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    resolved = {k: v for k, v in vars(args).items() if k != "command"}
    print(f"{args.command} config: " + json.dumps(resolved, sort_keys=True, default=str), file=sys.stderr)
    try:
        if args.command == "synth":
            cmd_synth(args)
        elif args.command == "dehaze":
            cmd_dehaze(args)
        elif args.command == "train":
            cmd_train(args, _merge_config(args, TRAIN_KEYS))
        elif args.command == "eval-quality":
            cmd_eval_quality(args)
        elif args.command == "eval-map":
            cmd_eval_map(args, _merge_config(args, EVAL_KEYS))
        elif args.command == "grl-demo":
            cmd_grl_demo(args)
        elif args.command == "gradcheck":
            return cmd_gradcheck(args)
    except Exception as exc:  # every runtime failure maps to exit code 1
        print(f"hazelab {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
