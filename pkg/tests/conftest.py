"""Shared fixtures: a throwaway log directory, seeded generators and tiny configs."""

import os
import tempfile

# must be set before fdftnet.config is imported
os.environ.setdefault("FDFT_LOG_DIR", tempfile.mkdtemp(prefix="fdftnet-test-logs-"))
os.environ.setdefault("FDFT_SEED", "0")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from fdftnet.models.schemas import ModelConfig, OptimizerConfig, SynthSpec, TrainingConfig  # noqa: E402
from fdftnet.utils.datasets import synth_dataset  # noqa: E402

TINY_RESOLUTION = 16


def tiny_config(**overrides) -> ModelConfig:
    """A 16x16 detector small enough to train in a test."""
    training = TrainingConfig(
        pretrain_optimizer=OptimizerConfig.defaults("pretrain", "adam", learning_rate=5e-3),
        finetune_optimizer=OptimizerConfig.defaults("finetune", "adam", learning_rate=5e-3),
        pretrain_batch_size=8,
        finetune_batch_size=4,
        pretrain_epochs=2,
        finetune_epochs=2,
        patience=2,
    )
    fields = dict(
        ftt_repeats=2,
        ftt_channels=[8, 16],
        mbblock_repeats=1,
        mbblock_expansion=2,
        mbblock_channels=8,
        backbone_channels=[8, 8, 8, 8],
        input_resolution=TINY_RESOLUTION,
        training=training,
    )
    fields.update(overrides)
    return ModelConfig(**fields)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_config():
    return tiny_config


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_data():
    """50 images per class at 16x16: 30/9/10/1 per class across train/validation/test/finetune."""
    return synth_dataset(SynthSpec(n_per_class=50, seed=0, amplitude=0.3, resolution=TINY_RESOLUTION))


@pytest.fixture(scope="session")
def shared_cfg() -> ModelConfig:
    """The tiny config for session- and module-scoped fixtures; do not mutate."""
    return tiny_config()
