"""How well the ten anchor shapes cover boxes of different aspect ratios.

For each aspect ratio a fixed set of 400 boxes is drawn with log-uniform
areas between 16^2 and 160^2; the coverage error is the share of boxes whose
best anchor IoU stays under the threshold. The last table repeats the
measurement on the synthetic shapes dataset.

    python demos/anchor_coverage.py
"""
import math

import torch

from mobiledensenet import ModelConfig
from mobiledensenet.anchors import coverage_error, coverage_report, generate_anchors
from mobiledensenet.datasets import synth_shapes

ASPECTS = (1 / 4, 1 / 3, 1 / 2, 1.0, 2.0, 3.0, 4.0)
THRESHOLDS = (0.5, 0.6, 0.7)


def aspect_boxes(aspect, n=400, seed=0, size=320):
    g = torch.Generator().manual_seed(seed)
    area = torch.exp(torch.empty(n, dtype=torch.float64).uniform_(math.log(16 ** 2), math.log(160 ** 2),
                                                                  generator=g))
    u = torch.rand(n, 2, generator=g, dtype=torch.float64)
    w, h = (area * aspect).sqrt(), (area / aspect).sqrt()
    x, y = u[:, 0] * (size - w).clamp(min=0), u[:, 1] * (size - h).clamp(min=0)
    return torch.stack([x, y, x + w, y + h], 1)


def main():
    anchors = generate_anchors(ModelConfig(), 320, dtype=torch.float64)
    print(f"{len(anchors)} anchors at 320x320")
    print(f"{'w:h':>6s}" + "".join(f"  err@{t:.1f}" for t in THRESHOLDS))
    for aspect in ASPECTS:
        boxes = aspect_boxes(aspect)
        label = f"1:{round(1 / aspect)}" if aspect < 1 else f"{round(aspect)}:1"
        print(f"{label:>6s}" + "".join(f"  {coverage_error(anchors, boxes, t):6.2f}%" for t in THRESHOLDS))

    shapes = synth_shapes(0, 500)
    report = coverage_report(anchors, torch.as_tensor(shapes.boxes_at(320)), THRESHOLDS)
    print(f"\nsynthetic shapes, {report['num_gt']} boxes, mean best IoU {report['mean_best_iou']:.3f}")
    for row in report["rows"]:
        print(f"  IoU >= {row['iou_threshold']:.1f}: {row['coverage_error']:.2f}%")


if __name__ == "__main__":
    main()
