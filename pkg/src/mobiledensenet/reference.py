"""MobileNetV1 + SSDLite reference detector used as the cost baseline.

Follows the original SSDLite layout: predictions from the stride-16 and
stride-32 MobileNetV1 maps plus four extra levels, each built from a 1x1
bottleneck and a stride-2 depthwise-separable unit, and depthwise-separable
box/class predictors. Three anchors on the first level, six elsewhere.
"""
import torch
from torch import nn

from .backbone import DSConvUnit, MobileNetV1, Pointwise, init_weights, scale_width

EXTRA_LAYERS = ((256, 512), (128, 256), (128, 256), (64, 128))
ANCHORS = (3, 6, 6, 6, 6, 6)


class SeparablePredictor(nn.Module):
    def __init__(self, channels, outputs):
        super().__init__()
        self.depthwise = nn.Conv2d(channels, channels, 3, 1, 1, groups=channels, bias=False)
        self.bn = nn.BatchNorm2d(channels)
        self.act = nn.ReLU6()
        self.pointwise = nn.Conv2d(channels, outputs, 1)

    def forward(self, x):
        return self.pointwise(self.act(self.bn(self.depthwise(x))))


class SSDLiteReference(nn.Module):
    def __init__(self, num_classes: int = 80, width_multiplier: float = 1.0):
        super().__init__()
        m = width_multiplier
        self.num_logits = num_classes + 1
        self.backbone = MobileNetV1(m)
        channels = [self.backbone.layers[10].out_channels, self.backbone.layers[12].out_channels]
        extras = []
        prev = channels[-1]
        for squeeze, out in EXTRA_LAYERS:
            squeeze, out = scale_width(squeeze, m), scale_width(out, m)
            extras.append(nn.Sequential(Pointwise(prev, squeeze), DSConvUnit(squeeze, out, 2)))
            channels.append(out)
            prev = out
        self.extras = nn.ModuleList(extras)
        self.cls = nn.ModuleList(SeparablePredictor(c, a * self.num_logits) for c, a in zip(channels, ANCHORS))
        self.box = nn.ModuleList(SeparablePredictor(c, a * 4) for c, a in zip(channels, ANCHORS))
        init_weights(self)

    def forward(self, image):
        feats = self.backbone(image, taps={10: "C4", 12: "C5"})
        maps = [feats["C4"], feats["C5"]]
        x = maps[-1]
        for extra in self.extras:
            x = extra(x)
            maps.append(x)
        n = image.shape[0]
        cls = [head(f).permute(0, 2, 3, 1).reshape(n, -1, self.num_logits) for head, f in zip(self.cls, maps)]
        box = [head(f).permute(0, 2, 3, 1).reshape(n, -1, 4) for head, f in zip(self.box, maps)]
        return torch.cat(cls, 1), torch.cat(box, 1)
