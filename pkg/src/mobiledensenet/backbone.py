"""MobileDenseNet and MobileNetV1 feature extractors.

Both backbones return a dict with the ``C3``, ``C4`` and ``C5`` maps (strides 8,
16 and 32). :class:`ExtraLevels` derives ``C6`` and ``C7`` from ``C5``.
"""
import math

import torch
from torch import nn

from .config import ConfigError, ModelConfig

BN_EPS = 1e-5
BN_MOMENTUM = 0.01  # torch convention; equals a 0.99 running-average decay

MOBILENET_V1_LAYERS = (
    # (out_channels, stride) for the 13 depthwise-separable units
    (64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
    (512, 1), (512, 1), (512, 1), (512, 1), (512, 1), (1024, 2), (1024, 1),
)


def scale_width(channels: int, multiplier: float) -> int:
    if multiplier == 1.0:
        return channels
    return max(8, int(channels * multiplier + 4) // 8 * 8)


def init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels // m.groups * m.kernel_size[0] * m.kernel_size[1]
            nn.init.normal_(m.weight, 0.0, math.sqrt(2.0 / fan_in))
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class ConvBN(nn.Sequential):
    """Standard convolution, batch norm, ReLU6."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, kernel_size, stride, kernel_size // 2, bias=False),
            nn.BatchNorm2d(out_channels, eps=BN_EPS, momentum=BN_MOMENTUM),
            nn.ReLU6(inplace=True),
        )
        self.in_channels = in_channels
        self.out_channels = out_channels


class Pointwise(ConvBN):
    def __init__(self, in_channels, out_channels):
        super().__init__(in_channels, out_channels, kernel_size=1)


class DSConvUnit(nn.Module):
    """Depthwise 3x3 then pointwise 1x1, each followed by BN and ReLU6."""

    def __init__(self, in_channels, out_channels, stride=1):
        super().__init__()
        if stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {stride}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.depthwise = nn.Conv2d(in_channels, in_channels, 3, stride, 1, groups=in_channels, bias=False)
        self.bn1 = nn.BatchNorm2d(in_channels, eps=BN_EPS, momentum=BN_MOMENTUM)
        self.pointwise = nn.Conv2d(in_channels, out_channels, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels, eps=BN_EPS, momentum=BN_MOMENTUM)
        self.act = nn.ReLU6()

    def forward(self, x):
        x = self.act(self.bn1(self.depthwise(x)))
        return self.act(self.bn2(self.pointwise(x)))


class DenseUnit(nn.Module):
    """Concatenate the input with earlier maps, squeeze with a 1x1 bottleneck,
    then apply a depthwise-separable unit."""

    def __init__(self, input_channels, out_channels, bottleneck_ratio=0.5):
        super().__init__()
        self.input_channels = tuple(input_channels)
        concat = sum(self.input_channels)
        self.concat_channels = concat
        self.bottleneck_channels = max(1, round(bottleneck_ratio * concat))
        self.bottleneck = Pointwise(concat, self.bottleneck_channels)
        self.ds = DSConvUnit(self.bottleneck_channels, out_channels)
        self.out_channels = out_channels

    def forward(self, x, skips=()):
        for s in skips:
            if s.shape[-2:] != x.shape[-2:]:
                raise ConfigError(f"dense skip of size {tuple(s.shape[-2:])} does not match {tuple(x.shape[-2:])}")
        merged = torch.cat([x, *skips], dim=1) if skips else x
        return self.ds(self.bottleneck(merged))


def check_input_size(image: torch.Tensor) -> None:
    h, w = image.shape[-2:]
    if h % 32 or w % 32:
        raise ConfigError(f"input spatial size {h}x{w} is not divisible by 32")


class MobileDenseNet(nn.Module):
    """Five blocks of depthwise-separable units with a few dense (concatenation)
    sites. Block ``b`` starts with a stride-2 unit for ``b >= 2``; a dense site
    ``(b, l)`` replaces unit ``l`` of block ``b`` with a :class:`DenseUnit` that
    concatenates the previous unit's output with the block's first unit output.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        m = config.width_multiplier
        sites = {tuple(s) for s in config.dense_connection_sites}
        stem = scale_width(config.stem_channels, m)
        self.stem = ConvBN(3, stem, 3, 2)
        self.blocks = nn.ModuleList()
        channels = stem
        self.out_channels = []
        for b, (count, width) in enumerate(zip(config.block_layer_counts, config.block_channel_widths), start=1):
            width = scale_width(width, m)
            units = nn.ModuleList()
            for l in range(count):
                if (b, l) in sites:
                    units.append(DenseUnit((channels, width), width, config.bottleneck_ratio))
                else:
                    units.append(DSConvUnit(channels, width, 2 if (l == 0 and b > 1) else 1))
                channels = width
            self.blocks.append(units)
            self.out_channels.append(width)
        self.dense_sites = sorted(sites)
        init_weights(self)

    @property
    def channels(self) -> dict:
        return {"C3": self.out_channels[2], "C4": self.out_channels[3], "C5": self.out_channels[4]}

    def forward(self, image):
        check_input_size(image)
        x = self.stem(image)
        outs = []
        for units in self.blocks:
            first = None
            for i, unit in enumerate(units):
                if isinstance(unit, DenseUnit):
                    x = unit(x, [first])
                else:
                    x = unit(x)
                if i == 0:
                    first = x
            outs.append(x)
        return {"C3": outs[2], "C4": outs[3], "C5": outs[4]}


class MobileNetV1(nn.Module):
    """Reference MobileNetV1 trunk (13 depthwise-separable units)."""

    def __init__(self, width_multiplier: float = 1.0, stem_channels: int = 32):
        super().__init__()
        m = width_multiplier
        channels = scale_width(stem_channels, m)
        self.stem = ConvBN(3, channels, 3, 2)
        layers = []
        for out, stride in MOBILENET_V1_LAYERS:
            out = scale_width(out, m)
            layers.append(DSConvUnit(channels, out, stride))
            channels = out
        self.layers = nn.ModuleList(layers)
        # C3 after unit 5 (stride 8), C4 after unit 11, C5 after unit 13
        self.taps = {4: "C3", 10: "C4", 12: "C5"}
        self.out_channels = [self.layers[i].out_channels for i in sorted(self.taps)]
        init_weights(self)

    @property
    def channels(self) -> dict:
        return dict(zip(("C3", "C4", "C5"), self.out_channels))

    def forward(self, image, taps=None):
        check_input_size(image)
        taps = self.taps if taps is None else taps
        x = self.stem(image)
        outs = {}
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i in taps:
                outs[taps[i]] = x
        return outs


class ExtraLevels(nn.Module):
    """C6 and C7 as stride-2 depthwise-separable units over C5 and C6."""

    def __init__(self, c5_channels: int, extra_channels=(256, 256)):
        super().__init__()
        self.c6 = DSConvUnit(c5_channels, extra_channels[0], 2)
        self.c7 = DSConvUnit(extra_channels[0], extra_channels[1], 2)
        init_weights(self)

    def forward(self, c5):
        c6 = self.c6(c5)
        return c6, self.c7(c6)


def build_backbone(config: ModelConfig) -> nn.Module:
    if config.backbone_variant == "mobiledensenet":
        return MobileDenseNet(config)
    if config.backbone_variant == "mobilenetv1":
        return MobileNetV1(config.width_multiplier, config.stem_channels)
    raise ConfigError(f"unknown backbone_variant {config.backbone_variant!r}")
