"""SGD training loop with step learning-rate schedule, augmentation and
multi-scale batches."""
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np
import torch
from PIL import Image

from .anchors import generate_anchors, match
from .config import ConfigError, ModelConfig
from .inference import resize_image, to_tensor
from .losses import total_loss
from .model import build_model, save_checkpoint

log = logging.getLogger(__name__)

REFERENCE_TOTAL = 80000  # iteration count the step boundaries are quoted against


class TrainingError(RuntimeError):
    pass


def lr_at(iteration: int, config: ModelConfig) -> float:
    """Piecewise-constant schedule; boundaries sit at fixed fractions of the run.

    With the default 80k-iteration run this gives 1e-3 until 40k, 1e-4 until
    60k and 1e-5 afterwards. An optional linear warmup ramps from 10% of the
    base rate.
    """
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    total = config.total_iterations
    drops = sum(1 for f in config.lr_step_fractions if iteration >= round(f * total))
    # decimal product, so 1e-3 decays to exactly 1e-4 and 1e-5 rather than 1.0000000000000003e-05
    lr = float(Decimal(repr(config.lr_base)) * Decimal(repr(config.lr_decay)) ** drops)
    if iteration < config.warmup_iterations:
        lr *= 0.1 + 0.9 * iteration / config.warmup_iterations
    return lr


def sample_training_scale(rng: np.random.Generator, config: ModelConfig) -> int:
    scales = tuple(config.multi_scale)
    if not scales or any(s % 32 for s in scales):
        raise ConfigError(f"multi_scale must be nonempty multiples of 32, got {scales}")
    return int(scales[int(rng.integers(len(scales)))])


def flip_boxes(boxes: np.ndarray, width: float) -> np.ndarray:
    out = boxes.copy()
    out[:, 0] = width - boxes[:, 2]
    out[:, 2] = width - boxes[:, 0]
    return out


def _color_jitter(image, rng, strength):
    b, c, s = rng.uniform(1 - strength, 1 + strength, size=3)
    img = image.astype(np.float32) * b
    mean = img.mean()
    img = (img - mean) * c + mean
    gray = img.mean(axis=2, keepdims=True)
    img = (img - gray) * s + gray
    return np.clip(img, 0, 255).astype(np.uint8)


def _random_crop(image, boxes, labels, rng, max_tries=50):
    h, w = image.shape[:2]
    centers = (boxes[:, :2] + boxes[:, 2:]) / 2
    for _ in range(max_tries):
        cw = int(w * rng.uniform(0.5, 1.0))
        ch = int(h * rng.uniform(0.5, 1.0))
        if not 0.5 <= cw / ch <= 2.0:
            continue
        x0 = int(rng.integers(0, w - cw + 1))
        y0 = int(rng.integers(0, h - ch + 1))
        inside = ((centers[:, 0] > x0) & (centers[:, 0] < x0 + cw)
                  & (centers[:, 1] > y0) & (centers[:, 1] < y0 + ch))
        if not inside.any():
            continue
        kept = boxes[inside].copy()
        kept[:, [0, 2]] = np.clip(kept[:, [0, 2]] - x0, 0, cw)
        kept[:, [1, 3]] = np.clip(kept[:, [1, 3]] - y0, 0, ch)
        ok = (kept[:, 2] - kept[:, 0] >= 1) & (kept[:, 3] - kept[:, 1] >= 1)
        if not ok.any():
            continue
        crop = image[y0:y0 + ch, x0:x0 + cw]
        zoomed = np.asarray(Image.fromarray(crop).resize((w, h), Image.BILINEAR))
        kept = kept[ok] * np.array([w / cw, h / ch, w / cw, h / ch])
        return zoomed, kept, labels[inside][ok]
    return image, boxes, labels


def augment(image: np.ndarray, boxes: np.ndarray, labels: np.ndarray, rng: np.random.Generator,
            flip_prob=0.5, crop_prob=0.5, color_jitter=0.25):
    """Random horizontal flip, crop-and-zoom, and colour jitter.

    ``boxes`` are xyxy pixel rows. A crop keeps only boxes whose centres fall
    inside it; after 50 failed attempts the sample passes through uncropped.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if rng.random() < flip_prob:
        image = image[:, ::-1].copy()
        boxes = flip_boxes(boxes, image.shape[1])
    if len(boxes) and rng.random() < crop_prob:
        image, boxes, labels = _random_crop(image, boxes, labels, rng)
    if color_jitter > 0:
        image = _color_jitter(image, rng, color_jitter)
    return image, boxes, labels


def prepare_batch(dataset, indices, size, rng, config, train=True):
    images, targets = [], []
    for i in indices:
        image, rec = dataset[int(i)]
        objs = rec.boxes
        boxes = np.array([tuple(o.box) for o in objs], dtype=np.float64).reshape(-1, 4)
        labels = np.array([o.class_id for o in objs], dtype=np.int64)
        if train:
            image, boxes, labels = augment(image, boxes, labels, rng, config.flip_prob,
                                           config.crop_prob, config.color_jitter)
        sy, sx = size / image.shape[0], size / image.shape[1]
        images.append(resize_image(image, size))
        targets.append((boxes * np.array([sx, sy, sx, sy]), labels))
    return to_tensor(images).contiguous(memory_format=torch.channels_last), targets


def build_targets(anchor_boxes, targets, iou_threshold):
    labels, gt_boxes, offsets = [], [], []
    for boxes, cls in targets:
        m = match(anchor_boxes, torch.as_tensor(boxes, dtype=anchor_boxes.dtype), torch.as_tensor(cls),
                  iou_threshold)
        labels.append(m.labels)
        gt_boxes.append(m.gt_boxes)
        offsets.append(m.targets)
    return torch.stack(labels), torch.stack(gt_boxes), torch.stack(offsets)


def param_groups(model, weight_decay):
    """Weight decay on convolution/projection kernels only, not BN or biases."""
    decay, no_decay = [], []
    seen = set()
    for p in model.parameters():
        if id(p) in seen or not p.requires_grad:
            continue
        seen.add(id(p))
        (decay if p.dim() > 1 else no_decay).append(p)
    return [{"params": decay, "weight_decay": weight_decay}, {"params": no_decay, "weight_decay": 0.0}]


@dataclass
class TrainState:
    model: torch.nn.Module
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    iteration: int = 0
    history: list = field(default_factory=list)


def make_state(config: ModelConfig, model=None) -> TrainState:
    torch.manual_seed(config.seed)
    model = model if model is not None else build_model(config)
    opt = torch.optim.SGD(param_groups(model, config.weight_decay), lr=lr_at(0, config),
                          momentum=config.momentum)
    return TrainState(model, opt, np.random.default_rng(config.seed))


def _batches(rng, n, batch_size):
    while True:
        perm = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield perm[start:start + batch_size]
        if n < batch_size:
            yield perm


def train_step(state: TrainState, images, labels, gt_boxes, offsets, anchor_boxes, config):
    model = state.model
    for g in state.optimizer.param_groups:
        g["lr"] = lr_at(state.iteration, config)
    cls, box = model(images)
    loss = total_loss(cls, box, anchor_boxes, labels, gt_boxes, offsets, a=config.balance_a,
                      cls_loss=config.cls_loss, loc_loss=config.loc_loss, pos_neg_ratio=config.pos_neg_ratio,
                      negative_coefficient=config.negative_coefficient, mining_scope=config.mining_scope,
                      focal_alpha=config.focal_alpha, focal_gamma=config.focal_gamma)
    if not torch.isfinite(loss.total):
        return loss
    state.optimizer.zero_grad(set_to_none=True)
    loss.total.backward()
    state.optimizer.step()
    return loss


def train(config: ModelConfig, dataset, out_dir=None, iterations=None, state=None, progress=None,
          class_names=None):
    """Train end to end; returns the final :class:`TrainState`.

    With ``out_dir`` set, writes ``loss_log.jsonl``, ``checkpoint.pt`` and
    periodic ``checkpoint_<iter>.pt`` files.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    iterations = config.total_iterations if iterations is None else iterations
    state = state or make_state(config)
    model = state.model
    model.to(memory_format=torch.channels_last)  # markedly faster depthwise convs on CPU
    model.train()
    anchors = {}
    log_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "loss_log.jsonl"), "w")
    names = class_names or getattr(dataset, "class_names", None)
    cat_ids = getattr(dataset, "category_ids", None)
    batches = _batches(state.rng, len(dataset), config.batch_size)
    t0 = time.time()
    try:
        while state.iteration < iterations:
            idx = next(batches)
            size = sample_training_scale(state.rng, config)
            if size not in anchors:
                anchors[size] = generate_anchors(config, size).boxes
            images, targets = prepare_batch(dataset, idx, size, state.rng, config)
            labels, gt_boxes, offsets = build_targets(anchors[size], targets, config.match_iou_threshold)
            loss = train_step(state, images, labels, gt_boxes, offsets, anchors[size], config)
            if not math.isfinite(float(loss.total.detach())):
                info = {"iteration": state.iteration, "batch_indices": [int(i) for i in idx], "scale": size}
                if out_dir is not None:
                    with open(os.path.join(out_dir, "nonfinite_batch.json"), "w") as fh:
                        json.dump(info, fh)
                raise TrainingError(f"non-finite loss at iteration {state.iteration}: batch {info['batch_indices']}")
            record = {"iteration": state.iteration, "lr": lr_at(state.iteration, config), **loss.as_floats()}
            state.history.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
            state.iteration += 1
            if progress and state.iteration % progress == 0:
                recent = state.history[-progress:]
                log.info("iter %d  loss %.4f  (%.2fs/it)", state.iteration,
                         sum(r["total"] for r in recent) / len(recent), (time.time() - t0) / state.iteration)
            if out_dir is not None and config.checkpoint_every and state.iteration % config.checkpoint_every == 0:
                save_checkpoint(model, os.path.join(out_dir, f"checkpoint_{state.iteration}.pt"), names, cat_ids)
    finally:
        if log_fh is not None:
            log_fh.close()
    if out_dir is not None:
        save_checkpoint(model, os.path.join(out_dir, "checkpoint.pt"), names, cat_ids)
    return state
