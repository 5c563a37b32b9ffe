import pytest
import torch
from torch import nn

from mobiledensenet import ModelConfig, build_model
from mobiledensenet.analysis import analyze, count_madds, count_params, separable_cost_ratio
from mobiledensenet.backbone import DSConvUnit
from mobiledensenet.reference import SSDLiteReference


def test_closed_form_params():
    assert count_params(nn.Conv2d(16, 24, 3, bias=True)) == 9 * 16 * 24 + 24
    cin, cout = 48, 96
    assert count_params(DSConvUnit(cin, cout)) == 9 * cin + cin * cout + 2 * cin + 2 * cout


def test_closed_form_madds():
    conv = nn.Conv2d(32, 64, 3, padding=1, bias=False)
    assert count_madds(conv, example=torch.zeros(1, 32, 112, 112)) == 112 ** 2 * 9 * 32 * 64 == 231_211_008


@pytest.mark.parametrize("c", [256, 512, 1024])
def test_separable_ratio(c):
    ratio = separable_cost_ratio(c)
    assert ratio == pytest.approx(1 / (1 / c + 1 / 9), rel=1e-12)
    assert abs(ratio - 8.9) / 8.9 < 0.05


def test_separable_ratio_at_256():
    assert separable_cost_ratio(256) == pytest.approx(8.69, abs=0.005)


def test_reference_baseline_budget():
    r = analyze(SSDLiteReference(80), 320)
    assert abs(r.total_params - 5.1e6) / 5.1e6 <= 0.10
    assert abs(r.total_madds - 1.3e9) / 1.3e9 <= 0.15


def test_default_model_budget():
    r = analyze(build_model(ModelConfig()), 320)
    assert abs(r.total_params - 5.8e6) / 5.8e6 <= 0.15
    assert abs(r.total_madds - 1.64e9) / 1.64e9 <= 0.20


def test_report_consistency():
    m = build_model(ModelConfig(width_multiplier=0.25, num_classes=5))
    a, b = analyze(m, 256), analyze(m, 256)
    assert a == b
    assert a.total_params == sum(v["params"] for v in a.breakdown.values())
    assert a.total_madds == sum(v["madds"] for v in a.breakdown.values())
    assert set(a.breakdown) == {"backbone", "extras", "neck", "head"}
    assert a.shared_modules["copies"] == 3
    table = a.table()
    assert "Module" in table and "Params" in table and "MAdds" in table and "Total" in table
    assert a.convention in table


def test_doubling_resolution_quadruples_madds():
    m = build_model(ModelConfig(width_multiplier=0.25, num_classes=2, neck_variant="ssdlite")).eval()
    per_layer = {}
    for size in (128, 256):
        costs = []
        hooks = [mod.register_forward_hook(lambda mod, i, o: costs.append(o[0].numel() * mod.in_channels
                                                                          // mod.groups * mod.kernel_size[0] ** 2))
                 for mod in m.modules() if isinstance(mod, nn.Conv2d)]
        with torch.no_grad():
            m(torch.zeros(1, 3, size, size))
        for h in hooks:
            h.remove()
        per_layer[size] = costs
    # 128 -> 256 keeps every level (including ceil-sized C6/C7) an exact doubling
    assert len(per_layer[256]) == len(per_layer[128]) > 50
    assert all(b == 4 * s for b, s in zip(per_layer[256], per_layer[128]))
    p = count_params(m)
    assert count_madds(m, 256) == 4 * count_madds(m, 128) and count_params(m) == p


def test_doubling_on_backbone_exact():
    from mobiledensenet.backbone import MobileDenseNet
    net = MobileDenseNet(ModelConfig(width_multiplier=0.25))
    assert count_madds(net, 320) == 4 * count_madds(net, 160)


def test_sharing_is_storage_only():
    base = ModelConfig(width_multiplier=0.5, num_classes=80)
    half, non = (analyze(build_model(base.replace(head_share_mode=m)), 320) for m in ("half_share", "non_share"))
    assert half.total_params < non.total_params
    assert half.total_madds == non.total_madds


def test_neck_param_ordering():
    p = {v: count_params(build_model(ModelConfig(neck_variant=v))) for v in ("ssdlite", "ssdclite", "fcpnlite")}
    assert p["ssdlite"] < p["ssdclite"] < p["fcpnlite"]


def test_bad_input_size():
    with pytest.raises(ValueError):
        count_madds(build_model(ModelConfig(width_multiplier=0.25)), 300)
