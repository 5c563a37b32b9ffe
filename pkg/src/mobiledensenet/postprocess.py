"""Turn raw head outputs into scored, class-labelled, suppressed detections."""
from typing import NamedTuple

import numpy as np
import torch

from .anchors import AnchorSet, decode
from .geometry import BoxXYXY, clip_boxes


class Detection(NamedTuple):
    box: BoxXYXY
    class_id: int
    score: float
    anchor_index: int = -1


def _order(scores, anchor_index, class_ids):
    # descending score, then ascending anchor index, then class
    return np.lexsort((class_ids, anchor_index, -scores))


def decode_predictions(cls_logits: torch.Tensor, box_offsets: torch.Tensor, anchors,
                       image_size=None, score_threshold: float = 0.05, top_k: int = 200) -> list:
    """Per-image candidate detections (before NMS).

    ``cls_logits`` is ``(N, K+1)`` with background in column 0; returned
    ``class_id`` values are foreground ids ``0..K-1``.
    """
    boxes = anchors.boxes if isinstance(anchors, AnchorSet) else anchors
    if image_size is None:
        side = anchors.input_size if isinstance(anchors, AnchorSet) else None
        image_size = (side, side)
    with torch.no_grad():
        probs = torch.softmax(cls_logits.float(), dim=-1)[:, 1:]
        anchor_idx, cls_idx = torch.nonzero(probs > score_threshold, as_tuple=True)
        if anchor_idx.numel() == 0:
            return []
        scores = probs[anchor_idx, cls_idx].numpy().astype(np.float64)
        a_np, c_np = anchor_idx.numpy(), cls_idx.numpy()
        order = _order(scores, a_np, c_np)[:top_k]
        a_sel = anchor_idx[order]
        decoded = decode(box_offsets[a_sel].double(), boxes[a_sel].double())
        if image_size[0] is not None:
            decoded = clip_boxes(decoded, image_size[0], image_size[1])
        decoded = decoded.numpy()
    return [
        Detection(BoxXYXY(*map(float, decoded[i])), int(c_np[j]), float(scores[j]), int(a_np[j]))
        for i, j in enumerate(order)
    ]


def _iou_one_to_many(box, boxes):
    lt = np.maximum(box[:2], boxes[:, :2])
    rb = np.minimum(box[2:], boxes[:, 2:])
    wh = np.clip(rb - lt, 0, None)
    inter = wh[:, 0] * wh[:, 1]
    area = lambda b: np.clip(b[..., 2] - b[..., 0], 0, None) * np.clip(b[..., 3] - b[..., 1], 0, None)
    union = area(box) + area(boxes) - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def nms(dets: list, iou_threshold: float = 0.45, max_detections: int = None) -> list:
    """Greedy per-class suppression; output sorted by descending score."""
    if not dets:
        return []
    boxes = np.array([d.box for d in dets], dtype=np.float64)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    classes = np.array([d.class_id for d in dets])
    anchors = np.array([d.anchor_index for d in dets])
    order = _order(scores, anchors, classes)
    kept = []
    for c in np.unique(classes):
        idx = order[classes[order] == c]
        while idx.size:
            i = idx[0]
            kept.append(i)
            if idx.size == 1:
                break
            rest = idx[1:]
            idx = rest[_iou_one_to_many(boxes[i], boxes[rest]) < iou_threshold]
    kept = np.array(kept)
    kept = kept[_order(scores[kept], anchors[kept], classes[kept])]
    if max_detections is not None:
        kept = kept[:max_detections]
    return [dets[i] for i in kept]


def detect(cls_logits, box_offsets, anchors, image_sizes=None, score_threshold=0.05, top_k=200,
           nms_iou_threshold=0.45) -> list:
    """Batched decode + NMS. Returns one detection list per image."""
    out = []
    for i in range(cls_logits.shape[0]):
        size = image_sizes[i] if image_sizes is not None else None
        cands = decode_predictions(cls_logits[i], box_offsets[i], anchors, size, score_threshold, top_k)
        out.append(nms(cands, nms_iou_threshold, max_detections=top_k))
    return out
