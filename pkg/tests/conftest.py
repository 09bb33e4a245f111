import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from msfcn.data.synth import synth_shapes, synth_temporal  # noqa: E402
from msfcn.model.network import NetworkConfig  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-size and training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size network or multi-epoch training run")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """Two-level net that runs on 8x8 inputs in milliseconds."""
    return NetworkConfig(
        in_channels=3, time_steps=1, num_classes=4, encoder_channels=(4, 8), num_layers=2, cab_reduction=2
    )


@pytest.fixture
def shapes_dir(tmp_path):
    synth_shapes(6, 16, 4, seed=3, out_dir=tmp_path / "shapes")
    return tmp_path / "shapes"


@pytest.fixture
def temporal_dir(tmp_path):
    synth_temporal(5, 16, 4, seed=5, out_dir=tmp_path / "temporal")
    return tmp_path / "temporal"
