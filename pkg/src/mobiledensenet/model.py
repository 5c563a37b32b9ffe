"""Detector assembly and checkpoint persistence."""
import io

import torch
from torch import nn

from .backbone import ExtraLevels, build_backbone, scale_width
from .config import ConfigError, ModelConfig
from .heads import HeadSet
from .necks import build_neck

CHECKPOINT_FORMAT = "mobiledensenet-checkpoint/1"


class CheckpointError(RuntimeError):
    pass


class Detector(nn.Module):
    """Backbone + extra levels + neck + heads.

    ``forward`` returns ``(cls_logits, box_offsets)`` of shapes
    ``(B, N, num_classes + 1)`` and ``(B, N, 4)``, flattened level-major
    (P3 first), then row-major over cells, then anchor index.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.backbone = build_backbone(config)
        chans = dict(self.backbone.channels)
        extra = tuple(scale_width(c, config.width_multiplier) for c in config.extra_channels)
        self.extras = ExtraLevels(chans["C5"], extra)
        chans["C6"], chans["C7"] = extra
        self.feature_channels = chans
        self.neck = build_neck(config.neck_variant, chans, config.neck_channels)
        self.head = HeadSet(self.neck.out_channels, config.head_share_mode, config.anchors_per_cell,
                            config.num_logits, config.head_channels)

    def features(self, image) -> dict:
        feats = self.backbone(image)
        feats["C6"], feats["C7"] = self.extras(feats["C5"])
        return feats

    def forward(self, image):
        return self.head(self.neck(self.features(image)))


def build_model(config: ModelConfig, seed=None) -> Detector:
    if seed is not None:
        torch.manual_seed(seed)
    return Detector(config)


def save_checkpoint(model: Detector, path, class_names=None, category_ids=None, extra=None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        "class_names": list(class_names) if class_names is not None else None,
        "category_ids": list(category_ids) if category_ids is not None else None,
        "extra": extra or {},
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, expected_config: ModelConfig = None):
    """Load ``(model, payload)``; raises :class:`CheckpointError` on any disagreement."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} archive")
    try:
        config = ModelConfig.from_dict(payload["config"])
    except ConfigError as exc:
        raise CheckpointError(f"{path}: stored config invalid: {exc}") from exc
    if expected_config is not None and _arch(expected_config) != _arch(config):
        diff = sorted(k for k in _arch(config) if _arch(config)[k] != _arch(expected_config)[k])
        raise CheckpointError(f"config mismatch with checkpoint on keys: {', '.join(diff)}")
    model = Detector(config)
    state = payload["state_dict"]
    own = model.state_dict()
    missing = sorted(set(own) - set(state))
    unexpected = sorted(set(state) - set(own))
    bad_shape = sorted(k for k in set(own) & set(state) if own[k].shape != state[k].shape)
    if missing or unexpected or bad_shape:
        raise CheckpointError(
            f"{path}: parameter mismatch (missing={missing[:5]}, unexpected={unexpected[:5]}, shape={bad_shape[:5]})"
        )
    model.load_state_dict(state)
    return model, payload


ARCH_KEYS = (
    "backbone_variant", "width_multiplier", "stem_channels", "block_layer_counts", "block_channel_widths",
    "dense_connection_sites", "bottleneck_ratio", "extra_channels", "neck_variant", "neck_channels",
    "head_share_mode", "head_channels", "num_classes", "anchors_per_cell", "anchor_base_sizes",
    "anchor_scales", "anchor_ratios",
)


def _arch(config: ModelConfig) -> dict:
    d = config.to_dict()
    return {k: d[k] for k in ARCH_KEYS}
