"""COCO-protocol average precision with size buckets.

Greedy score-ordered matching per image at IoU thresholds 0.50:0.05:0.95,
101-point interpolated precision, macro-average over classes that have
ground truth. Crowd boxes are ignore regions, and ground truth outside a
size bucket is ignored for that bucket. Undefined entries (no ground truth
in a bucket) are reported as -1, following the COCO tooling.
"""
import json
from dataclasses import dataclass, field

import numpy as np

IOU_THRESHOLDS = np.linspace(0.5, 0.95, 10)
RECALL_THRESHOLDS = np.linspace(0.0, 1.0, 101)
AREA_RANGES = {
    "all": (0.0, 1e10),
    "small": (0.0, 32.0 ** 2),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, 1e10),
}


@dataclass
class EvalReport:
    AP: float
    AP50: float
    AP75: float
    APs: float
    APm: float
    APl: float
    per_class: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "AP": self.AP, "AP50": self.AP50, "AP75": self.AP75,
            "APs": self.APs, "APm": self.APm, "APl": self.APl,
            "per_class": self.per_class, "counts": self.counts,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def table(self) -> str:
        keys = ("AP", "AP50", "AP75", "APs", "APm", "APl")
        head = "".join(f"{k:>8}" for k in keys)
        row = "".join(f"{100 * getattr(self, k):8.1f}" if getattr(self, k) >= 0 else f"{'-':>8}" for k in keys)
        return head + "\n" + row


def _area(b):
    return np.clip(b[..., 2] - b[..., 0], 0, None) * np.clip(b[..., 3] - b[..., 1], 0, None)


def _ious(dets, gts, crowd):
    """IoU matrix (D, G); crowd columns use intersection over detection area."""
    if len(dets) == 0 or len(gts) == 0:
        return np.zeros((len(dets), len(gts)))
    lt = np.maximum(dets[:, None, :2], gts[None, :, :2])
    rb = np.minimum(dets[:, None, 2:], gts[None, :, 2:])
    wh = np.clip(rb - lt, 0, None)
    inter = wh[..., 0] * wh[..., 1]
    da, ga = _area(dets)[:, None], _area(gts)[None, :]
    union = np.where(crowd[None, :], da, da + ga - inter)
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def _evaluate_image(det_boxes, det_scores, gt_boxes, gt_crowd, area_rng, max_dets):
    """Per-image matching at every IoU threshold.

    Returns ``(scores, matched[T, D], ignored[T, D], n_valid_gt)``.
    """
    lo, hi = area_rng
    gt_area = _area(gt_boxes) if len(gt_boxes) else np.zeros(0)
    gt_ignore = gt_crowd | (gt_area < lo) | (gt_area > hi)
    gorder = np.argsort(gt_ignore, kind="mergesort")
    gt_boxes, gt_crowd, gt_ignore = gt_boxes[gorder], gt_crowd[gorder], gt_ignore[gorder]
    dorder = np.argsort(-det_scores, kind="mergesort")[:max_dets]
    det_boxes, det_scores = det_boxes[dorder], det_scores[dorder]
    ious = _ious(det_boxes, gt_boxes, gt_crowd)
    T, D, G = len(IOU_THRESHOLDS), len(det_boxes), len(gt_boxes)
    dt_match = np.zeros((T, D), dtype=bool)
    dt_ignore = np.zeros((T, D), dtype=bool)
    for t, thr in enumerate(IOU_THRESHOLDS):
        gt_taken = np.zeros(G, dtype=bool)
        for d in range(D):
            best, m = min(thr, 1 - 1e-10), -1
            for g in range(G):
                if gt_taken[g] and not gt_crowd[g]:
                    continue
                if m > -1 and not gt_ignore[m] and gt_ignore[g]:
                    break
                if ious[d, g] < best:
                    continue
                best, m = ious[d, g], g
            if m == -1:
                continue
            dt_ignore[t, d] = gt_ignore[m]
            dt_match[t, d] = True
            gt_taken[m] = True
    if D:
        d_area = _area(det_boxes)
        out_of_range = (d_area < lo) | (d_area > hi)
        dt_ignore |= (~dt_match) & out_of_range[None, :]
    return det_scores, dt_match, dt_ignore, int((~gt_ignore).sum())


def _average_precision(scores, matched, ignored, n_gt):
    """101-point interpolated AP for one threshold row."""
    order = np.argsort(-scores, kind="mergesort")
    matched, ignored = matched[order], ignored[order]
    tp = np.cumsum(matched & ~ignored).astype(np.float64)
    fp = np.cumsum(~matched & ~ignored).astype(np.float64)
    recall = tp / n_gt
    seen = tp + fp
    precision = np.zeros_like(tp)
    np.divide(tp, seen, out=precision, where=seen > 0)
    precision = np.maximum.accumulate(precision[::-1])[::-1] if len(precision) else precision
    idx = np.searchsorted(recall, RECALL_THRESHOLDS, side="left")
    q = np.zeros(len(RECALL_THRESHOLDS))
    valid = idx < len(precision)
    q[valid] = precision[idx[valid]]
    return float(q.mean())


def _as_arrays(items, box_attr):
    boxes = np.array([tuple(getattr(x, box_attr)) for x in items], dtype=np.float64).reshape(-1, 4)
    return boxes


def evaluate_ap(all_dets: dict, all_gts: dict, num_classes: int = None, max_dets: int = 100,
                class_names=None) -> EvalReport:
    """COCO-style AP summary.

    ``all_dets`` maps image id to a list of detections (``box``, ``class_id``,
    ``score``); ``all_gts`` maps image id to a list of labelled boxes
    (``box``, ``class_id``, ``iscrowd``).
    """
    images = sorted(set(all_gts) | set(all_dets), key=str)
    classes = set()
    for v in all_gts.values():
        classes.update(int(g.class_id) for g in v)
    for v in all_dets.values():
        classes.update(int(d.class_id) for d in v)
    if num_classes is not None:
        classes = set(range(num_classes))
    classes = sorted(classes)
    T = len(IOU_THRESHOLDS)
    ap = {a: np.full((T, len(classes)), -1.0) for a in AREA_RANGES}
    n_gt_total = n_det_total = 0
    for ci, c in enumerate(classes):
        for area_name, rng in AREA_RANGES.items():
            scores, matched, ignored, n_gt = [], [], [], 0
            for img in images:
                gts = [g for g in all_gts.get(img, ()) if int(g.class_id) == c]
                dts = [d for d in all_dets.get(img, ()) if int(d.class_id) == c]
                if not gts and not dts:
                    continue
                gb = _as_arrays(gts, "box")
                gc = np.array([bool(getattr(g, "iscrowd", False)) for g in gts], dtype=bool)
                db = _as_arrays(dts, "box")
                ds = np.array([d.score for d in dts], dtype=np.float64)
                s, m, ig, n = _evaluate_image(db, ds, gb, gc, rng, max_dets)
                scores.append(s)
                matched.append(m)
                ignored.append(ig)
                n_gt += n
            if area_name == "all":
                n_gt_total += n_gt
                n_det_total += sum(len(s) for s in scores)
            if n_gt == 0:
                continue
            s = np.concatenate(scores) if scores else np.zeros(0)
            m = np.concatenate(matched, axis=1) if matched else np.zeros((T, 0), dtype=bool)
            ig = np.concatenate(ignored, axis=1) if ignored else np.zeros((T, 0), dtype=bool)
            for t in range(T):
                ap[area_name][t, ci] = _average_precision(s, m[t], ig[t], n_gt)

    def summarize(area, t=None):
        a = ap[area] if t is None else ap[area][t]
        valid = a[a > -1]
        return float(valid.mean()) if valid.size else -1.0

    per_class = {}
    for ci, c in enumerate(classes):
        col = ap["all"][:, ci]
        name = class_names[c] if class_names is not None and c < len(class_names) else str(c)
        per_class[name] = float(col.mean()) if (col > -1).all() else -1.0
    return EvalReport(
        AP=summarize("all"),
        AP50=summarize("all", 0),
        AP75=summarize("all", 5),
        APs=summarize("small"),
        APm=summarize("medium"),
        APl=summarize("large"),
        per_class=per_class,
        counts={"images": len(images), "ground_truth": n_gt_total, "detections": n_det_total,
                "classes": len(classes)},
    )
