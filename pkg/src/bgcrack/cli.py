"""Command-line surface: train, eval, predict, gradcam, profile, synth.

Every verb exits 0 on success; failures print one machine-readable JSON line
to stderr and exit nonzero.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import figures
from .data import DatasetManifest, SynthConfig, generate_synthetic
from .decoder import BGCrack
from .engine import TrainConfig, evaluate, load_model, predict_image, overlay_rgb, train
from .gradcam import GradCam, list_layers
from .metrics import MACS_NOTE, count_macs, count_params


def build_parser():
    parser = argparse.ArgumentParser(prog="bgcrack",
                                     description="boundary-guided crack segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_overrides(p):
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--no-edge", action="store_true", help="ablate the edge stream")
        p.add_argument("--no-hfie", action="store_true", help="ablate high-frequency enhancement")
        p.add_argument("--no-gip", action="store_true", help="ablate global perception")
        p.add_argument("--no-grad-loss", action="store_true", help="drop the gradient loss term")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--batch", type=int, default=None)
        p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("train", help="train a model")
    add_overrides(p)
    p.add_argument("--data", type=str, default=None, help="dataset root directory")
    p.add_argument("--out", type=str, default=None, help="run directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", type=str, default=None, help="manifest JSON path")
    p.add_argument("--data", type=str, default=None, help="dataset root (with --split)")
    p.add_argument("--split", type=str, default="test")
    p.add_argument("--out", type=str, default=None, help="report directory")

    p = sub.add_parser("predict", help="write mask and overlay PNGs for images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("images", nargs="+")

    p = sub.add_parser("gradcam", help="render an activation heatmap")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--target", choices=("body", "edge"), default="body")
    p.add_argument("--layer", required=True, help="named module, see --layer list")
    p.add_argument("--out", required=True, help="output PNG path")

    p = sub.add_parser("profile", help="parameter and MAC accounting")
    add_overrides(p)
    p.add_argument("--size", type=int, default=512, help="square input geometry")
    p.add_argument("--out", type=str, default=None, help="JSON output path")

    p = sub.add_parser("synth", help="generate a synthetic crack dataset")
    p.add_argument("--root", required=True)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--val", type=int, default=50)
    p.add_argument("--test", type=int, default=50)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    return parser


def load_train_config(args) -> TrainConfig:
    if args.config:
        with open(args.config) as fh:
            cfg = TrainConfig.from_dict(json.load(fh))
    else:
        cfg = TrainConfig()
    if getattr(args, "data", None):
        cfg.data_root = args.data
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.lr is not None:
        cfg.lr = args.lr
    if args.batch is not None:
        cfg.batch_size = args.batch
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if args.no_edge:
        cfg.model.use_edge = False
    if args.no_hfie:
        cfg.model.use_hfie = False
    if args.no_gip:
        cfg.model.use_gip = False
    if args.no_grad_loss:
        cfg.loss.use_grad = False
    return cfg


def run_train(args):
    cfg = load_train_config(args)
    _, log = train(cfg)
    figures.save_loss_curve(log.of_kind("step"), Path(cfg.out_dir) / "loss_curve.png")
    vals = log.of_kind("val")
    if vals:
        best = max(vals, key=lambda e: e["mi_iou"])
        print(json.dumps({"best_epoch": best["epoch"], "mi_iou": best["mi_iou"],
                          "mi_dice": best["mi_dice"], "out_dir": cfg.out_dir}))
    else:
        print(json.dumps({"out_dir": cfg.out_dir, "epochs": cfg.epochs}))


def run_eval(args):
    if args.manifest:
        manifest = DatasetManifest.from_json(args.manifest)
    elif args.data:
        manifest = DatasetManifest(root=args.data, split=args.split)
    else:
        raise ValueError("eval needs --manifest or --data")
    report, per_image = evaluate(args.checkpoint, manifest)
    payload = report.to_json(macs_note=MACS_NOTE)
    print(payload)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(payload + "\n")
        with open(out / "per_image.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "mi_iou", "mi_dice"])
            for row in zip(per_image["id"], per_image["mi_iou"], per_image["mi_dice"]):
                writer.writerow(row)
        figures.save_score_histogram(per_image["mi_iou"], "image-wise IoU",
                                     out / "iou_histogram.png")


def _save_mask(mask, path):
    Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(path)


def run_predict(args):
    model, _ = load_model(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for image_path in args.images:
        arr = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.float32) / 255.0
        chw = arr.transpose(2, 0, 1)
        maps = predict_image(model, chw)
        stem = Path(image_path).stem
        _save_mask(maps["body_mask"], out / f"{stem}_body.png")
        edge_mask = maps.get("edge_mask")
        if edge_mask is not None:
            _save_mask(edge_mask, out / f"{stem}_edge.png")
        blended = overlay_rgb(chw, maps["body_mask"], edge_mask)
        Image.fromarray(np.round(blended * 255).astype(np.uint8)).save(
            out / f"{stem}_overlay.png")
        written.append(stem)
    print(json.dumps({"out_dir": str(out), "images": written}))


def run_gradcam(args):
    model, _ = load_model(args.checkpoint)
    if args.layer == "list":
        print(json.dumps({"layers": list_layers(model)}))
        return
    arr = np.asarray(Image.open(args.image).convert("RGB"), dtype=np.float32) / 255.0
    tensor = torch.from_numpy(arr.transpose(2, 0, 1))[None]
    cam = GradCam(model, args.layer)
    try:
        heatmap = cam(tensor, target=args.target)
    finally:
        cam.close()
    figures.save_heatmap_overlay(arr.transpose(2, 0, 1), heatmap.numpy(), args.out)
    print(json.dumps({"out": args.out, "target": args.target, "layer": args.layer}))


def run_profile(args):
    cfg = load_train_config(args)
    torch.manual_seed(cfg.seed)
    model = BGCrack(cfg.model)
    macs = count_macs(model, (args.size, args.size))
    payload = {
        "params": count_params(model),
        "macs": macs["total"],
        "macs_conv": macs["conv"],
        "macs_spectral": macs["spectral"],
        "macs_linear": macs["linear"],
        "macs_attention": macs["attention"],
        "macs_note": macs["note"],
        "geometry": [args.size, args.size],
    }
    text = json.dumps(payload, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")


def run_synth(args):
    counts = {"train": args.train, "val": args.val, "test": args.test}
    summary = {}
    for i, (split, n) in enumerate(counts.items()):
        if n <= 0:
            continue
        cfg = SynthConfig(n_images=n, size=args.size, seed=args.seed + 1000 * i)
        records = generate_synthetic(cfg, root=args.root, split=split)
        summary[split] = len(records)
    print(json.dumps({"root": args.root, "counts": summary, "size": args.size}))


COMMANDS = {
    "train": run_train,
    "eval": run_eval,
    "predict": run_predict,
    "gradcam": run_gradcam,
    "profile": run_profile,
    "synth": run_synth,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
