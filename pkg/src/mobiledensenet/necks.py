"""Pyramid necks mapping backbone levels C3..C7 onto P3..P7."""
import torch
import torch.nn.functional as F
from torch import nn

from .backbone import Pointwise, init_weights
from .config import ConfigError

LEVELS = ("3", "4", "5", "6", "7")


def upsample_to(x: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    """Nearest-neighbour resize of ``x`` to the spatial size of ``ref``."""
    return F.interpolate(x, size=ref.shape[-2:], mode="nearest")


class SSDLiteNeck(nn.Module):
    """Pass-through: P_k is C_k."""

    merge_sites = 0

    def __init__(self, channels: dict, neck_channels: int = 256):
        super().__init__()
        self.out_channels = {f"P{k}": channels[f"C{k}"] for k in LEVELS}

    def forward(self, feats: dict) -> dict:
        return {f"P{k}": feats[f"C{k}"] for k in LEVELS}


class ConcatNeck(nn.Module):
    """P_k = PW(Concat(C_k, Up(C_{k+1}))) for the merged levels, P_k = C_k otherwise.

    With merges at levels 3..6 this is FCPNLite; with merges at 3 and 4 only it
    is SSDCLite.
    """

    def __init__(self, channels: dict, neck_channels: int = 256, merged=("3", "4", "5", "6")):
        super().__init__()
        self.merged = tuple(merged)
        self.merge_sites = len(self.merged)
        self.proj = nn.ModuleDict()
        self.concat_channels = {}
        for k in self.merged:
            nxt = str(int(k) + 1)
            cin = channels[f"C{k}"] + channels[f"C{nxt}"]
            self.concat_channels[f"P{k}"] = cin
            self.proj[f"P{k}"] = Pointwise(cin, neck_channels)
        self.out_channels = {
            f"P{k}": neck_channels if k in self.merged else channels[f"C{k}"] for k in LEVELS
        }
        init_weights(self)

    def forward(self, feats: dict) -> dict:
        out = {}
        for k in LEVELS:
            c = feats[f"C{k}"]
            if k in self.merged:
                up = upsample_to(feats[f"C{int(k) + 1}"], c)
                out[f"P{k}"] = self.proj[f"P{k}"](torch.cat([c, up], dim=1))
            else:
                out[f"P{k}"] = c
        return out


class FPNLiteNeck(nn.Module):
    """Same topology as FCPNLite but merging by addition.

    Every C-level is first projected to ``neck_channels`` (identity when the
    width already matches) so the maps can be summed; the sum is then
    projected by a pointwise layer.
    """

    merge_sites = 4

    def __init__(self, channels: dict, neck_channels: int = 256):
        super().__init__()
        self.lateral = nn.ModuleDict({
            f"C{k}": Pointwise(channels[f"C{k}"], neck_channels)
            for k in LEVELS if channels[f"C{k}"] != neck_channels
        })
        self.proj = nn.ModuleDict({f"P{k}": Pointwise(neck_channels, neck_channels) for k in LEVELS[:-1]})
        self.out_channels = {f"P{k}": neck_channels for k in LEVELS[:-1]}
        self.out_channels["P7"] = channels["C7"]
        init_weights(self)

    def _lat(self, feats, k):
        x = feats[f"C{k}"]
        key = f"C{k}"
        return self.lateral[key](x) if key in self.lateral else x

    def forward(self, feats: dict) -> dict:
        lat = {k: self._lat(feats, k) for k in LEVELS}
        out = {}
        for k in LEVELS[:-1]:
            nxt = str(int(k) + 1)
            out[f"P{k}"] = self.proj[f"P{k}"](lat[k] + upsample_to(lat[nxt], lat[k]))
        out["P7"] = feats["C7"]
        return out


def build_neck(variant: str, channels: dict, neck_channels: int = 256) -> nn.Module:
    if variant == "ssdlite":
        return SSDLiteNeck(channels, neck_channels)
    if variant == "fcpnlite":
        return ConcatNeck(channels, neck_channels, ("3", "4", "5", "6"))
    if variant == "ssdclite":
        return ConcatNeck(channels, neck_channels, ("3", "4"))
    if variant == "fpnlite":
        return FPNLiteNeck(channels, neck_channels)
    raise ConfigError(f"unknown neck variant {variant!r}")
