"""Shared fixtures: a tiny three-model suite on 16x16 phase textures."""

import numpy as np
import pytest

from paser.config import ExperimentConfig, load_config
from paser.data import gen_phase_texture
from paser.models import ModelSuite, PolicyNet, UNetSpec, build_suite
from paser.tensorkit import RngStream

IMAGE_SIZE = 16
PATCHES = 4

TINY_OVERRIDES = [
    "data.num_samples=24",
    "data.image_size=16",
    "data.patches=4",
    "suite.depths=[1, 1, 1]",
    "suite.base_channels=[2, 4, 8]",
    "suite.policy_width=4",
    "pretrain.epochs=1",
    "pretrain.batch_size=8",
    "rl.epochs=2",
    "rl.batch_size=8",
    "rl.samples=2",
    "finetune.epochs=1",
    "finetune.batch_size=8",
    "tvd.max_epochs=2",
    "idk.grid_points=2",
    "eval.batch_size=8",
]


def tiny_specs(dropout: float = 0.2) -> list[UNetSpec]:
    return [
        UNetSpec(depth=1, base_channels=base, dropout_rate=dropout if i == 0 else 0.0)
        for i, base in enumerate((2, 4, 8))
    ]


@pytest.fixture
def rng() -> RngStream:
    return RngStream(1234)


@pytest.fixture
def samples():
    return gen_phase_texture(8, seed=0, size=IMAGE_SIZE)


@pytest.fixture
def images(samples) -> np.ndarray:
    return np.stack([s.image for s in samples])


@pytest.fixture
def suite() -> ModelSuite:
    """Untrained suite in 64-bit floats; tests that need trained models flag them."""
    return build_suite(tiny_specs(), RngStream(7), dtype=np.float64)


@pytest.fixture
def trained_suite(suite) -> ModelSuite:
    for model in suite.models:
        model.trained = True
    return suite


@pytest.fixture
def policy(suite) -> PolicyNet:
    return PolicyNet(
        suite.num_classes,
        suite.num_models,
        (IMAGE_SIZE, IMAGE_SIZE),
        PATCHES,
        RngStream(9),
        width=4,
        dtype=np.float64,
    )


@pytest.fixture
def tiny_config(tmp_path) -> ExperimentConfig:
    return load_config(overrides=TINY_OVERRIDES, out_dir=str(tmp_path / "run"))
