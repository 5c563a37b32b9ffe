"""Lightweight one-stage object detection: MobileDenseNet backbone, lite
pyramid necks, half-share heads, anchors, losses, training and evaluation."""
from .config import ConfigError, ModelConfig, desk_config
from .geometry import BoxXYXY, LabeledBox, enclosing_diagonal_sq, iou
from .model import CheckpointError, Detector, build_model, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "BoxXYXY", "CheckpointError", "ConfigError", "Detector", "LabeledBox", "ModelConfig", "build_model",
    "desk_config", "enclosing_diagonal_sq", "iou", "load_checkpoint", "save_checkpoint",
]
