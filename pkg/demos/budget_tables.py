"""Parameter and multiply-add budgets for the shipped detector and its variants.

Prints the per-module breakdown of the default model, the reference
MobileNetV1 + SSDLite baseline, and a sweep over necks and head-sharing
modes, all at 320x320 with 80 classes.

    python demos/budget_tables.py
"""
import torch

from mobiledensenet import ModelConfig, build_model
from mobiledensenet.analysis import analyze, separable_cost_ratio
from mobiledensenet.heads import SHARE_MODES
from mobiledensenet.reference import SSDLiteReference

NECKS = ("ssdlite", "ssdclite", "fpnlite", "fcpnlite")


def main():
    torch.set_num_threads(1)
    default = analyze(build_model(ModelConfig()), 320)
    print("Default model")
    print(default.table())
    print()
    reference = analyze(SSDLiteReference(80), 320)
    print("Reference MobileNetV1 + SSDLite")
    print(reference.table())
    print()

    print(f"{'neck':10s} {'heads':14s} {'params (M)':>11s} {'MAdds (B)':>10s}")
    for neck in NECKS:
        for mode in SHARE_MODES:
            r = analyze(build_model(ModelConfig(neck_variant=neck, head_share_mode=mode)), 320)
            mark = "  <- default" if (neck, mode) == ("fcpnlite", "half_share") else ""
            print(f"{neck:10s} {mode:14s} {r.total_params / 1e6:11.3f} {r.total_madds / 1e9:10.3f}{mark}")
    print()
    print("Standard vs depthwise-separable 3x3 cost")
    for c in (32, 64, 128, 256, 512, 1024):
        print(f"  C_out={c:5d}  ratio {separable_cost_ratio(c):6.3f}")


if __name__ == "__main__":
    main()
