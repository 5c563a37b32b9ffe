import pytest
import torch

from mobiledensenet import CheckpointError, ModelConfig, build_model, load_checkpoint, save_checkpoint


def test_forward_contract(tiny_config):
    m = build_model(tiny_config, seed=0).eval()
    with torch.no_grad():
        cls, box = m(torch.zeros(2, 3, 64, 64))
    n = (8 * 8 + 4 * 4 + 2 * 2 + 1 + 1) * 10
    assert cls.shape == (2, n, 4) and box.shape == (2, n, 4)


def test_build_is_seeded(tiny_config):
    a, b = build_model(tiny_config, seed=3), build_model(tiny_config, seed=3)
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)


def test_checkpoint_roundtrip(tmp_path, tiny_config):
    m = build_model(tiny_config, seed=1)
    path = tmp_path / "m.pt"
    save_checkpoint(m, path, ["a", "b", "c"], [1, 2, 3])
    loaded, payload = load_checkpoint(path, expected_config=tiny_config)
    assert payload["class_names"] == ["a", "b", "c"] and payload["category_ids"] == [1, 2, 3]
    assert loaded.config == tiny_config
    for k, v in m.state_dict().items():
        assert torch.equal(v, loaded.state_dict()[k])


def test_checkpoint_config_mismatch(tmp_path, tiny_config):
    path = tmp_path / "m.pt"
    save_checkpoint(build_model(tiny_config), path)
    with pytest.raises(CheckpointError, match="head_share_mode"):
        load_checkpoint(path, expected_config=tiny_config.replace(head_share_mode="non_share"))
    # training-only differences are not architectural
    load_checkpoint(path, expected_config=tiny_config.replace(lr_base=0.5))


def test_checkpoint_shape_mismatch(tmp_path, tiny_config):
    path = tmp_path / "m.pt"
    m = build_model(tiny_config)
    save_checkpoint(m, path)
    payload = torch.load(path, weights_only=False)
    key = next(iter(payload["state_dict"]))
    payload["state_dict"][key] = torch.zeros(1)
    torch.save(payload, path)
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(path)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.pt"
    torch.save({"weights": 1}, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_mobilenetv1_backbone_option():
    m = build_model(ModelConfig(backbone_variant="mobilenetv1", width_multiplier=0.25, num_classes=2)).eval()
    with torch.no_grad():
        cls, _ = m(torch.zeros(1, 3, 256, 256))
    assert cls.shape == (1, 13640, 3)
