"""Model and training configuration.

A single flat record holds every architecture and training knob so that each
ablation (head sharing, neck variant, backbone) is a one-key change.
"""
import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Any


class ConfigError(ValueError):
    """Raised for invalid or inconsistent configuration values."""


BACKBONES = ("mobiledensenet", "mobilenetv1")
NECKS = ("ssdlite", "ssdclite", "fpnlite", "fcpnlite")
HEAD_MODES = ("full_share", "share_except1", "half_share", "non_share")
CLS_LOSSES = ("ce_hnm", "focal")
LOC_LOSSES = ("diou", "smooth_l1")
MINING_SCOPES = ("image", "batch")


@dataclass
class ModelConfig:
    # architecture
    input_size: int = 320
    backbone_variant: str = "mobiledensenet"
    width_multiplier: float = 1.0
    stem_channels: int = 32
    block_layer_counts: tuple = (1, 4, 3, 6, 3)
    block_channel_widths: tuple = (32, 64, 128, 256, 768)
    dense_connection_sites: tuple = ((2, 3), (3, 2), (4, 4), (4, 5), (5, 2))
    bottleneck_ratio: float = 0.5
    extra_channels: tuple = (256, 256)
    neck_variant: str = "fcpnlite"
    neck_channels: int = 256
    head_share_mode: str = "half_share"
    head_channels: int = 256
    num_classes: int = 80
    # anchors
    anchors_per_cell: int = 10
    anchor_base_sizes: tuple = (24.0, 48.0, 96.0, 192.0, 384.0)
    anchor_scales: tuple = (1.0, math.sqrt(2.0))
    anchor_ratios: tuple = (1.0, 0.5, 1.0 / 3.0, 2.0, 3.0)
    match_iou_threshold: float = 0.5
    # losses
    cls_loss: str = "ce_hnm"
    loc_loss: str = "diou"
    pos_neg_ratio: float = 6.0
    negative_coefficient: float = 0.5
    balance_a: float = 1.0
    mining_scope: str = "image"
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    # training
    lr_base: float = 1e-3
    lr_step_fractions: tuple = (0.5, 0.75)
    lr_decay: float = 0.1
    warmup_iterations: int = 0
    total_iterations: int = 80000
    weight_decay: float = 5e-4
    momentum: float = 0.9
    batch_size: int = 32
    multi_scale: tuple = (256, 288, 320, 352, 384)
    flip_prob: float = 0.5
    crop_prob: float = 0.5
    color_jitter: float = 0.25
    checkpoint_every: int = 0
    # inference
    score_threshold: float = 0.05
    nms_iou_threshold: float = 0.45
    top_k: int = 200
    seed: int = 0

    def __post_init__(self):
        for name, f in self.__dataclass_fields__.items():
            value = getattr(self, name)
            if isinstance(f.default, tuple) and isinstance(value, list):
                setattr(self, name, _as_tuple(value))
        self.validate()

    @property
    def num_logits(self) -> int:
        """Class-logit columns per anchor; column 0 is background."""
        return self.num_classes + 1

    def validate(self) -> None:
        _check(self.backbone_variant in BACKBONES, f"unknown backbone_variant {self.backbone_variant!r}")
        _check(self.neck_variant in NECKS, f"unknown neck_variant {self.neck_variant!r}")
        _check(self.head_share_mode in HEAD_MODES, f"unknown head_share_mode {self.head_share_mode!r}")
        _check(self.cls_loss in CLS_LOSSES, f"unknown cls_loss {self.cls_loss!r}")
        _check(self.loc_loss in LOC_LOSSES, f"unknown loc_loss {self.loc_loss!r}")
        _check(self.mining_scope in MINING_SCOPES, f"unknown mining_scope {self.mining_scope!r}")
        _check(self.input_size > 0 and self.input_size % 32 == 0,
               f"input_size must be a positive multiple of 32, got {self.input_size}")
        _check(len(self.block_layer_counts) == 5, "block_layer_counts needs 5 entries")
        _check(len(self.block_channel_widths) == 5, "block_channel_widths needs 5 entries")
        _check(all(c >= 1 for c in self.block_layer_counts), "every block needs at least one layer")
        widths = (*self.block_channel_widths, *self.extra_channels, self.stem_channels,
                  self.neck_channels, self.head_channels)
        _check(all(w > 0 for w in widths), "all channel widths must be > 0")
        _check(self.width_multiplier > 0, "width_multiplier must be > 0")
        _check(len(self.extra_channels) == 2, "extra_channels needs 2 entries (C6, C7)")
        _check(0 < self.bottleneck_ratio <= 1, "bottleneck_ratio must be in (0, 1]")
        for site in self.dense_connection_sites:
            _check(len(site) == 2, f"dense site {site!r} must be a (block, layer) pair")
            block, layer = site
            _check(1 <= block <= 5 and 2 <= layer < self.block_layer_counts[block - 1],
                   f"dense site {site!r} outside the block layout")
        _check(self.num_classes >= 1, "num_classes must be >= 1")
        _check(len(self.anchor_base_sizes) == 5, "anchor_base_sizes needs 5 entries")
        _check(self.anchors_per_cell == len(self.anchor_scales) * len(self.anchor_ratios),
               "anchors_per_cell must equal |anchor_scales| x |anchor_ratios|")
        _check(len(self.multi_scale) > 0, "multi_scale must be nonempty")
        _check(all(s > 0 and s % 32 == 0 for s in self.multi_scale),
               f"multi_scale entries must be multiples of 32, got {self.multi_scale}")
        _check(len(self.lr_step_fractions) >= 1 and list(self.lr_step_fractions) == sorted(self.lr_step_fractions),
               "lr_step_fractions must be ascending")
        _check(self.total_iterations >= 0 and self.batch_size >= 1, "bad iteration/batch settings")

    def to_dict(self) -> dict:
        return {k: _as_lists(v) for k, v in dataclasses.asdict(self).items()}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ModelConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json(indent=2))

    def replace(self, **changes) -> "ModelConfig":
        unknown = sorted(set(changes) - set(self.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return dataclasses.replace(self, **changes)

    def with_overrides(self, overrides) -> "ModelConfig":
        """Apply ``KEY=VALUE`` strings; values are parsed as JSON and type-checked."""
        changes = {}
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not KEY=VALUE")
            key, raw = item.split("=", 1)
            key = key.strip()
            if key not in self.__dataclass_fields__:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            current = getattr(self, key)
            changes[key] = _coerce(key, value, current)
        return self.replace(**changes)


def _coerce(key: str, value: Any, current: Any) -> Any:
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects a boolean, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} expects a string, got {value!r}")
        return value
    if isinstance(current, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{key} expects a list, got {value!r}")
        return _as_tuple(value)
    return value


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _as_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(_as_tuple(v) for v in value)
    return value


def _as_lists(value):
    if isinstance(value, (list, tuple)):
        return [_as_lists(v) for v in value]
    return value


def desk_config(**changes) -> ModelConfig:
    """Reduced configuration for the synthetic-shapes verification runs."""
    base = dict(
        width_multiplier=0.5,
        neck_variant="ssdclite",
        num_classes=3,
        batch_size=16,
        input_size=256,
        total_iterations=4000,
        lr_base=0.05,
        warmup_iterations=200,
        multi_scale=(256,),
    )
    base.update(changes)
    return ModelConfig(**base)

