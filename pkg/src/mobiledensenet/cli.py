"""Command-line entry point: train, eval, infer, analyze, anchors.

Every subcommand reads a JSON config (``--config``) plus ``--set KEY=VALUE``
overrides; any failure exits nonzero with a one-line message and removes the
outputs written so far.
"""
import argparse
import json
import logging
import os
import shutil
import sys

import numpy as np
import torch
from PIL import Image

from .config import ModelConfig

log = logging.getLogger("mobiledensenet")

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp")


class CommandError(RuntimeError):
    pass


class Outputs:
    """Tracks files and directories created by one command so they can be rolled back."""

    def __init__(self, out_dir=None):
        self.out_dir = out_dir
        self.created = []

    def prepare(self):
        if self.out_dir is None:
            return
        if not os.path.isdir(self.out_dir):
            os.makedirs(self.out_dir)
            self.created.append(self.out_dir)

    def path(self, name):
        if self.out_dir is None:
            raise CommandError("--out is required for this subcommand")
        p = os.path.join(self.out_dir, name)
        if not os.path.exists(p):
            self.created.append(p)
        return p

    def rollback(self):
        for p in reversed(self.created):
            if os.path.isdir(p):
                shutil.rmtree(p, ignore_errors=True)
            elif os.path.exists(p):
                os.remove(p)


def load_config(args) -> ModelConfig:
    config = ModelConfig.load(args.config) if args.config else ModelConfig()
    if args.set:
        config = config.with_overrides(args.set)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def _explicit_config(args):
    """The flagged config, or ``None`` when neither --config nor --set was given."""
    if not args.config and not args.set:
        return None
    return load_config(args)


def load_dataset(source, image_root=None, check_images=True):
    """``synthetic:N[:SIZE[:SEED]]`` or a COCO annotation path."""
    from .datasets import synth_shapes, load_coco
    if source is None:
        raise CommandError("--dataset is required for this subcommand")
    if source.startswith("synthetic:"):
        parts = source.split(":")[1:]
        try:
            n = int(parts[0])
            size = int(parts[1]) if len(parts) > 1 else 320
            seed = int(parts[2]) if len(parts) > 2 else 0
        except (ValueError, IndexError) as exc:
            raise CommandError(f"bad synthetic dataset {source!r}; expected synthetic:N[:SIZE[:SEED]]") from exc
        return synth_shapes(seed, n, image_size=size)
    if not os.path.isfile(source):
        raise CommandError(f"dataset file not found: {source}")
    return load_coco(source, image_root, check_images=check_images)


def _load_model(args, config_guard=True):
    from .model import load_checkpoint
    if not args.checkpoint:
        raise CommandError("--checkpoint is required for this subcommand")
    expected = _explicit_config(args) if config_guard else None
    model, payload = load_checkpoint(args.checkpoint, expected_config=expected)
    config = model.config
    if expected is not None:
        config = expected
    elif args.seed is not None:
        config = config.replace(seed=args.seed)
    return model, config, payload


def cmd_train(args, out: Outputs):
    from .training import train
    config = load_config(args)
    dataset = load_dataset(args.dataset, args.images)
    if dataset.num_classes != config.num_classes:
        raise CommandError(f"dataset has {dataset.num_classes} classes but config.num_classes="
                           f"{config.num_classes}")
    out.prepare()
    config.save(out.path("config.json"))
    out.path("loss_log.jsonl")
    out.path("checkpoint.pt")
    torch.manual_seed(config.seed)
    state = train(config, dataset.cached(), out_dir=out.out_dir, progress=args.log_every)
    last = state.history[-1] if state.history else {}
    print(json.dumps({"iterations": state.iteration, "final_loss": last.get("total"),
                      "checkpoint": os.path.join(out.out_dir, "checkpoint.pt")}))


def cmd_eval(args, out: Outputs):
    from .inference import evaluate_model
    model, config, _ = _load_model(args)
    dataset = load_dataset(args.dataset, args.images)
    if dataset.num_classes != config.num_classes:
        raise CommandError(f"dataset has {dataset.num_classes} classes, checkpoint has {config.num_classes}")
    report = evaluate_model(model, dataset, config)
    print(report.table())
    if out.out_dir is not None:
        out.prepare()
        with open(out.path("eval_report.json"), "w") as fh:
            fh.write(report.to_json(indent=2))


def _image_paths(path):
    if path is None:
        raise CommandError("--images is required for this subcommand")
    if os.path.isdir(path):
        files = sorted(os.path.join(path, f) for f in os.listdir(path) if f.lower().endswith(IMAGE_SUFFIXES))
        if not files:
            raise CommandError(f"no images found in {path}")
        return files
    if os.path.isfile(path):
        return [path]
    raise CommandError(f"image path not found: {path}")


def cmd_infer(args, out: Outputs):
    from .inference import draw_detections, predict_images
    model, config, payload = _load_model(args)
    names = payload.get("class_names")
    paths = _image_paths(args.images)
    images = []
    for p in paths:
        with Image.open(p) as im:
            images.append(np.asarray(im.convert("RGB")))
    out.prepare()
    results = {}
    for p, image, dets in zip(paths, images, predict_images(model, images, config)):
        stem = os.path.splitext(os.path.basename(p))[0]
        draw_detections(image, dets, names).save(out.path(f"{stem}_detections.png"))
        results[os.path.basename(p)] = [
            {"box": [round(float(v), 3) for v in d.box], "class_id": int(d.class_id),
             "class_name": names[d.class_id] if names else None, "score": float(d.score)}
            for d in dets
        ]
    with open(out.path("detections.json"), "w") as fh:
        json.dump(results, fh, indent=2)
    print(json.dumps({"images": len(paths), "detections": sum(len(v) for v in results.values())}))


def cmd_analyze(args, out: Outputs):
    from .analysis import analyze
    from .model import build_model
    config = load_config(args)
    report = analyze(build_model(config, seed=config.seed), config.input_size)
    print(report.table())
    if out.out_dir is not None:
        out.prepare()
        with open(out.path("cost_report.json"), "w") as fh:
            fh.write(report.to_json(indent=2))
        with open(out.path("cost_report.txt"), "w") as fh:
            fh.write(report.table() + "\n")
    else:
        print(report.to_json())


def _thresholds(text):
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise CommandError(f"bad --thresholds {text!r}: expected comma-separated numbers") from exc
    if not values or any(not 0 < v <= 1 for v in values):
        raise CommandError(f"--thresholds must be numbers in (0, 1], got {text!r}")
    return values


def cmd_anchors(args, out: Outputs):
    from .anchors import coverage_report, generate_anchors
    config = load_config(args)
    dataset = load_dataset(args.dataset, args.images, check_images=False)
    boxes = dataset.boxes_at(config.input_size)
    report = coverage_report(generate_anchors(config, dtype=torch.float64), boxes, _thresholds(args.thresholds))
    report["input_size"] = config.input_size
    for row in report["rows"]:
        print(f"IoU >= {row['iou_threshold']:.2f}: coverage error {row['coverage_error']:.2f}% "
              f"of {report['num_gt']} boxes")
    if out.out_dir is not None:
        out.prepare()
        with open(out.path("coverage_report.json"), "w") as fh:
            json.dump(report, fh, indent=2)
    else:
        print(json.dumps(report))


COMMANDS = {
    "train": (cmd_train, "train a detector and write checkpoints plus a loss log"),
    "eval": (cmd_eval, "evaluate a checkpoint on a dataset (COCO-style AP)"),
    "infer": (cmd_infer, "run detection on images and draw the results"),
    "analyze": (cmd_analyze, "report parameter and multiply-add counts"),
    "anchors": (cmd_anchors, "anchor coverage error on a dataset"),
}

# flags each subcommand accepts, beyond --config/--set/--seed
FLAGS = {
    "train": ("dataset", "images", "out", "log_every"),
    "eval": ("checkpoint", "dataset", "images", "out"),
    "infer": ("checkpoint", "images", "out"),
    "analyze": ("out",),
    "anchors": ("dataset", "images", "out", "thresholds"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobiledensenet", description="MobileDenseNet detection toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", metavar="PATH", help="JSON config file (defaults are used when omitted)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config field; repeatable, values parsed as JSON")
        p.add_argument("--seed", type=int, metavar="N", help="random seed (overrides config.seed)")
        flags = FLAGS[name]
        if "checkpoint" in flags:
            p.add_argument("--checkpoint", metavar="PATH", help="checkpoint written by 'train'")
        if "dataset" in flags:
            p.add_argument("--dataset", metavar="PATH",
                           help="COCO annotation JSON, or synthetic:N[:SIZE[:SEED]] for generated shapes")
        if "images" in flags:
            what = "image file or directory" if name == "infer" else "image root for the COCO file"
            p.add_argument("--images", metavar="PATH", help=what)
        if "out" in flags:
            p.add_argument("--out", metavar="DIR", help="output directory")
        if "thresholds" in flags:
            p.add_argument("--thresholds", default="0.5", metavar="LIST",
                           help="comma-separated IoU thresholds (default 0.5)")
        if "log_every" in flags:
            p.add_argument("--log-every", dest="log_every", type=int, default=100, metavar="N",
                           help="log the running loss every N iterations")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "train" and not getattr(args, "out", None):
        print("error: train requires --out", file=sys.stderr)
        return 2
    out = Outputs(getattr(args, "out", None))
    handler = COMMANDS[args.command][0]
    try:
        handler(args, out)
    except KeyboardInterrupt:
        out.rollback()
        print("error: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # one-line report, no traceback
        out.rollback()
        message = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
