import numpy as np
import pytest
import torch

from protofuse.data_model import generate_synthetic

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_cohort():
    return generate_synthetic(12, 8, 18, seed=1, patches_per_slide=(4, 9), max_slides=2)


@pytest.fixture(scope="session")
def cohort100():
    return generate_synthetic(100, 64, 120, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


TINY_CONFIG = dict(task="survival", epochs=4, phase1_epochs=2, model_dim=8, batch_size=4, learning_rate=1e-3, seed=0)


@pytest.fixture(scope="session")
def tiny_config():
    from protofuse.config import TrainConfig

    return TrainConfig(**TINY_CONFIG)


@pytest.fixture(scope="session")
def trained_tiny(tiny_cohort, tiny_config):
    from protofuse.training import train

    state, rows = train(tiny_cohort, tiny_config)
    return state, rows
