import os

import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def tiny_config():
    """Small, fast configuration used wherever the exact layout does not matter."""
    from mobiledensenet import ModelConfig
    return ModelConfig(
        input_size=64, width_multiplier=0.25, num_classes=3, neck_channels=32, head_channels=32,
        extra_channels=(32, 32), block_layer_counts=(1, 3, 3, 3, 3),
        block_channel_widths=(32, 64, 128, 256, 512),
        dense_connection_sites=((2, 2), (3, 2), (4, 2), (5, 2)), multi_scale=(64,), batch_size=2,
    )


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        props = dict(report.user_properties)
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _ACCEPTANCE.append((props.get("criterion", report.nodeid), status, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{status}  {name}" + (f"  [{detail}]" if detail else ""))
