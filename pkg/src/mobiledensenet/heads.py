"""Classification and box-regression heads with level weight sharing."""
import math

import torch
from torch import nn

from .backbone import DSConvUnit, Pointwise, init_weights
from .config import ConfigError

PYRAMID = ("P3", "P4", "P5", "P6", "P7")

# level index -> head copy index
SHARE_MODES = {
    "full_share": (0, 0, 0, 0, 0),
    "share_except1": (0, 0, 0, 0, 1),
    "half_share": (0, 0, 1, 1, 2),
    "non_share": (0, 1, 2, 3, 4),
}

FOREGROUND_PRIOR = 0.01


class HeadModule(nn.Module):
    """One depthwise-separable trunk unit feeding sibling 1x1 class and box outputs."""

    def __init__(self, channels: int, anchors_per_cell: int, num_logits: int):
        super().__init__()
        self.anchors_per_cell = anchors_per_cell
        self.num_logits = num_logits
        self.trunk = DSConvUnit(channels, channels)
        self.cls = nn.Conv2d(channels, anchors_per_cell * num_logits, 1)
        self.box = nn.Conv2d(channels, anchors_per_cell * 4, 1)
        init_weights(self)
        nn.init.normal_(self.cls.weight, 0.0, 0.01)
        nn.init.normal_(self.box.weight, 0.0, 0.01)
        bias = torch.zeros(anchors_per_cell, num_logits)
        bias[:, 1:] = -math.log((1 - FOREGROUND_PRIOR) / FOREGROUND_PRIOR)
        with torch.no_grad():
            self.cls.bias.copy_(bias.flatten())

    def forward(self, x):
        t = self.trunk(x)
        n = x.shape[0]
        cls = self.cls(t).permute(0, 2, 3, 1).reshape(n, -1, self.num_logits)
        box = self.box(t).permute(0, 2, 3, 1).reshape(n, -1, 4)
        return cls, box


class HeadSet(nn.Module):
    """Applies head copies to P3..P7 according to the sharing mode.

    Levels whose width differs from ``channels`` first pass through a
    level-specific pointwise adapter (never shared).
    """

    def __init__(self, level_channels: dict, mode: str, anchors_per_cell: int, num_logits: int,
                 channels: int = 256):
        super().__init__()
        if mode not in SHARE_MODES:
            raise ConfigError(f"unknown head_share_mode {mode!r}")
        self.mode = mode
        self.assignment = dict(zip(PYRAMID, SHARE_MODES[mode]))
        self.adapters = nn.ModuleDict({
            lvl: Pointwise(level_channels[lvl], channels)
            for lvl in PYRAMID if level_channels[lvl] != channels
        })
        init_weights(self.adapters)
        n_copies = max(SHARE_MODES[mode]) + 1
        self.heads = nn.ModuleList(HeadModule(channels, anchors_per_cell, num_logits) for _ in range(n_copies))

    def head_for(self, level: str) -> HeadModule:
        return self.heads[self.assignment[level]]

    def forward(self, pyramid: dict):
        cls_out, box_out = [], []
        for lvl in PYRAMID:
            x = pyramid[lvl]
            if lvl in self.adapters:
                x = self.adapters[lvl](x)
            cls, box = self.head_for(lvl)(x)
            cls_out.append(cls)
            box_out.append(box)
        return torch.cat(cls_out, dim=1), torch.cat(box_out, dim=1)
