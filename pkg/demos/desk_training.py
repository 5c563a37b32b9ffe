"""Desk-scale training on synthetic shapes, comparing the ssdclite and ssdlite necks.

Each variant trains the half-width detector on 2000 generated images and is
scored on a disjoint 200-image split. Results land in ``demos/results/`` as
``desk_<variant>.json`` (checkpoints alongside as ``.pt``); the acceptance suite reads them back and checks that
the stored configuration still matches ``desk_config``.

    python demos/desk_training.py                 # both variants, about 3 h on one CPU core
    python demos/desk_training.py --variants ssdlite
"""
import argparse
import json
import logging
import os
import platform
import time

import torch

from mobiledensenet import desk_config, save_checkpoint
from mobiledensenet.datasets import synth_shapes
from mobiledensenet.inference import evaluate_model
from mobiledensenet.training import train

HERE = os.path.dirname(os.path.abspath(__file__))
TRAIN_SEED, VAL_SEED = 0, 1
NUM_TRAIN, NUM_VAL = 2000, 200


def result_path(variant, out_dir=None):
    return os.path.join(out_dir or os.path.join(HERE, "results"), f"desk_{variant}.json")


def run_variant(variant, out_dir=None, iterations=None, log_every=100):
    config = desk_config(neck_variant=variant)
    if iterations is not None:
        config = config.replace(total_iterations=iterations)
    size = config.input_size
    train_set = synth_shapes(TRAIN_SEED, NUM_TRAIN, image_size=size).cached()
    val_set = synth_shapes(VAL_SEED, NUM_VAL, image_size=size)
    start = time.time()
    state = train(config, train_set, progress=log_every)
    train_seconds = time.time() - start
    report = evaluate_model(state.model, val_set, config)
    result = {
        "variant": variant,
        "config": config.to_dict(),
        "data": {"train_seed": TRAIN_SEED, "val_seed": VAL_SEED, "num_train": NUM_TRAIN,
                 "num_val": NUM_VAL, "image_size": size},
        "iterations": state.iteration,
        "train_seconds": round(train_seconds, 1),
        "final_loss": sum(r["total"] for r in state.history[-100:]) / min(100, len(state.history)),
        "metrics": {k: getattr(report, k) for k in ("AP", "AP50", "AP75", "APs", "APm", "APl")},
        "torch": torch.__version__,
        "machine": platform.machine(),
        "threads": torch.get_num_threads(),
    }
    path = result_path(variant, out_dir)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    save_checkpoint(state.model, path[:-len(".json")] + ".pt", train_set.class_names)
    with open(path, "w") as fh:
        json.dump(result, fh, indent=2)
    print(report.table())
    return result


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--variants", nargs="+", default=["ssdclite", "ssdlite"])
    parser.add_argument("--iterations", type=int, help="override the desk iteration budget")
    parser.add_argument("--out", help="results directory (default demos/results)")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)
    results = [run_variant(v, args.out, args.iterations) for v in args.variants]
    print()
    print(f"{'variant':10s} {'AP50':>7s} {'AP':>7s} {'APs':>7s} {'minutes':>8s}")
    for r in results:
        m = r["metrics"]
        print(f"{r['variant']:10s} {m['AP50']:7.3f} {m['AP']:7.3f} {m['APs']:7.3f} {r['train_seconds'] / 60:8.1f}")


if __name__ == "__main__":
    main()
