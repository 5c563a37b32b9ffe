"""Prior boxes: generation, SSD offset encoding, matching and coverage."""
import math
from dataclasses import dataclass

import torch

from .config import ConfigError, ModelConfig
from .geometry import box_iou, cxcywh_to_xyxy, xyxy_to_cxcywh

VARIANCES = (0.1, 0.2)
# exp() argument cap when decoding sizes: keeps early-training decodes finite
# while leaving every box/anchor size ratio below 1000 exactly invertible
MAX_LOG_SCALE = math.log(1000.0)


def level_sizes(input_size: int) -> list:
    """Feature sizes of P3..P7 for a square input (e.g. 40, 20, 10, 5, 3 at 320)."""
    if input_size % 32:
        raise ConfigError(f"input_size {input_size} is not divisible by 32")
    sizes = [input_size // 8, input_size // 16, input_size // 32]
    sizes.append(math.ceil(sizes[-1] / 2))
    sizes.append(math.ceil(sizes[-1] / 2))
    return sizes


@dataclass(frozen=True)
class AnchorSet:
    boxes: torch.Tensor        # (N, 4) xyxy, input pixels
    level: torch.Tensor        # (N,) 0..4 for P3..P7
    cell: torch.Tensor         # (N,) row-major cell index within the level
    scale_index: torch.Tensor
    ratio_index: torch.Tensor
    input_size: int
    feature_sizes: tuple
    strides: tuple
    anchors_per_cell: int

    def __len__(self):
        return self.boxes.shape[0]

    def level_slice(self, level: int) -> slice:
        counts = [f * f * self.anchors_per_cell for f in self.feature_sizes]
        start = sum(counts[:level])
        return slice(start, start + counts[level])


def anchor_count(input_size: int, anchors_per_cell: int = 10) -> int:
    return sum(f * f for f in level_sizes(input_size)) * anchors_per_cell


def generate_anchors(config: ModelConfig, input_size: int = None, dtype=torch.float32) -> AnchorSet:
    input_size = input_size or config.input_size
    if len(config.anchor_base_sizes) != 5:
        raise ConfigError("anchor_base_sizes needs one entry per pyramid level (5)")
    sizes = level_sizes(input_size)
    strides = tuple(input_size / f for f in sizes)
    # per-cell (w, h) in scale-major, ratio-minor order
    shapes, scale_ids, ratio_ids = [], [], []
    for si, scale in enumerate(config.anchor_scales):
        for ri, ratio in enumerate(config.anchor_ratios):
            shapes.append((scale * math.sqrt(ratio), scale / math.sqrt(ratio)))
            scale_ids.append(si)
            ratio_ids.append(ri)
    a = len(shapes)
    unit = torch.tensor(shapes, dtype=torch.float64)
    boxes, level, cell = [], [], []
    for lvl, (f, stride, base) in enumerate(zip(sizes, strides, config.anchor_base_sizes)):
        centers = (torch.arange(f, dtype=torch.float64) + 0.5) * stride
        cy, cx = torch.meshgrid(centers, centers, indexing="ij")
        cxcy = torch.stack([cx.reshape(-1), cy.reshape(-1)], dim=1)  # (f*f, 2)
        wh = unit * base
        cxcywh = torch.cat([cxcy[:, None, :].expand(-1, a, -1), wh[None].expand(f * f, -1, -1)], dim=2)
        boxes.append(cxcywh_to_xyxy(cxcywh.reshape(-1, 4)))
        level.append(torch.full((f * f * a,), lvl, dtype=torch.long))
        cell.append(torch.arange(f * f).repeat_interleave(a))
    n_cells = sum(f * f for f in sizes)
    return AnchorSet(
        boxes=torch.cat(boxes).to(dtype),
        level=torch.cat(level),
        cell=torch.cat(cell),
        scale_index=torch.tensor(scale_ids).repeat(n_cells),
        ratio_index=torch.tensor(ratio_ids).repeat(n_cells),
        input_size=input_size,
        feature_sizes=tuple(sizes),
        strides=strides,
        anchors_per_cell=a,
    )


def encode(gt: torch.Tensor, anchors: torch.Tensor, variances=VARIANCES) -> torch.Tensor:
    """SSD offsets of ``gt`` boxes relative to ``anchors`` (both xyxy, broadcastable)."""
    g = xyxy_to_cxcywh(gt)
    a = xyxy_to_cxcywh(anchors)
    txy = (g[..., :2] - a[..., :2]) / (a[..., 2:] * variances[0])
    twh = torch.log(g[..., 2:] / a[..., 2:]) / variances[1]
    return torch.cat([txy, twh], dim=-1)


def decode(offsets: torch.Tensor, anchors: torch.Tensor, variances=VARIANCES) -> torch.Tensor:
    """Inverse of :func:`encode`; returns xyxy boxes."""
    a = xyxy_to_cxcywh(anchors)
    cxy = a[..., :2] + offsets[..., :2] * variances[0] * a[..., 2:]
    wh = a[..., 2:] * torch.exp((offsets[..., 2:] * variances[1]).clamp(max=MAX_LOG_SCALE))
    return cxcywh_to_xyxy(torch.cat([cxy, wh], dim=-1))


@dataclass
class MatchResult:
    matched_gt: torch.Tensor    # (N,) long, -1 for background
    labels: torch.Tensor        # (N,) long, 0 background, class_id + 1 otherwise
    targets: torch.Tensor       # (N, 4) encoded offsets (zeros for background)
    gt_boxes: torch.Tensor      # (N, 4) matched gt box (zeros for background)
    forced: torch.Tensor        # (N,) bool, positive through the best-anchor rule
    n_pos: int


def match(anchors, gt_boxes: torch.Tensor, gt_labels: torch.Tensor, iou_threshold: float = 0.5) -> MatchResult:
    """Assign ground truth to anchors.

    1. Each gt, in index order, claims its highest-IoU anchor not already
       claimed by a lower-index gt (lowest anchor index on ties).
    2. Every other anchor whose best IoU reaches ``iou_threshold`` takes its
       best gt (lowest gt index on ties).
    """
    boxes = anchors.boxes if isinstance(anchors, AnchorSet) else anchors
    n = boxes.shape[0]
    gt_boxes = torch.as_tensor(gt_boxes, dtype=boxes.dtype).reshape(-1, 4)
    gt_labels = torch.as_tensor(gt_labels, dtype=torch.long).reshape(-1)
    matched = torch.full((n,), -1, dtype=torch.long)
    forced = torch.zeros(n, dtype=torch.bool)
    if gt_boxes.shape[0]:
        ious = box_iou(boxes, gt_boxes)  # (N, G)
        best_iou, best_gt = ious.max(dim=1)
        above = best_iou >= iou_threshold
        matched[above] = best_gt[above]
        claimable = torch.ones(n, dtype=torch.bool)
        for j in range(gt_boxes.shape[0]):
            if not claimable.any():
                break
            col = torch.where(claimable, ious[:, j], torch.full_like(ious[:, j], -1.0))
            k = int(torch.argmax(col))
            matched[k] = j
            forced[k] = True
            claimable[k] = False
    pos = matched >= 0
    labels = torch.zeros(n, dtype=torch.long)
    targets = torch.zeros(n, 4, dtype=boxes.dtype)
    matched_boxes = torch.zeros(n, 4, dtype=boxes.dtype)
    if pos.any():
        idx = matched[pos]
        labels[pos] = gt_labels[idx] + 1
        matched_boxes[pos] = gt_boxes[idx]
        targets[pos] = encode(gt_boxes[idx], boxes[pos])
    return MatchResult(matched, labels, targets, matched_boxes, forced, int(pos.sum()))


def max_iou_per_gt(anchor_boxes: torch.Tensor, gt_boxes: torch.Tensor, chunk: int = 256) -> torch.Tensor:
    gt_boxes = torch.as_tensor(gt_boxes, dtype=torch.float64).reshape(-1, 4)
    anchor_boxes = anchor_boxes.to(torch.float64)
    out = []
    for start in range(0, gt_boxes.shape[0], chunk):
        out.append(box_iou(gt_boxes[start:start + chunk], anchor_boxes).max(dim=1).values)
    return torch.cat(out) if out else torch.zeros(0, dtype=torch.float64)


def coverage_error(anchors, gt_boxes, iou_threshold: float = 0.5) -> float:
    """Percentage of ground-truth boxes whose best anchor IoU is below ``iou_threshold``."""
    boxes = anchors.boxes if isinstance(anchors, AnchorSet) else anchors
    gt = torch.as_tensor(gt_boxes, dtype=torch.float64).reshape(-1, 4)
    if gt.shape[0] == 0:
        raise ValueError("coverage_error needs at least one ground-truth box")
    best = max_iou_per_gt(boxes, gt)
    return 100.0 * float((best < iou_threshold).sum()) / gt.shape[0]


def coverage_report(anchors, gt_boxes, thresholds=(0.5,)) -> dict:
    """Coverage error at several thresholds, plus the max-IoU distribution."""
    boxes = anchors.boxes if isinstance(anchors, AnchorSet) else anchors
    gt = torch.as_tensor(gt_boxes, dtype=torch.float64).reshape(-1, 4)
    if gt.shape[0] == 0:
        raise ValueError("coverage report needs at least one ground-truth box")
    best = max_iou_per_gt(boxes, gt)
    rows = [
        {"iou_threshold": float(t), "coverage_error": 100.0 * float((best < t).sum()) / gt.shape[0]}
        for t in thresholds
    ]
    return {
        "num_gt": int(gt.shape[0]),
        "num_anchors": int(boxes.shape[0]),
        "mean_best_iou": float(best.mean()),
        "rows": rows,
    }
