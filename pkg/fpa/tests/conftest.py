from pathlib import Path

import numpy as np
import pytest
from config.settings import settings
from models import Split, TrainConfig, desk_cnn_layers
from services.data_service import gen_synthetic, normalize
from services.model_service import train

TOY_LAYERS = desk_cnn_layers(channels=(4, 8))
TOY_RECIPE = TrainConfig(epochs=3, lr=0.05, batch_size=32, lr_drop_epochs=[2], seed=11)


@pytest.fixture(scope="session", autouse=True)
def quiet_progress():
    """Disable progress bars for the whole test session"""
    previous = settings.show_progress
    settings.show_progress = False
    yield
    settings.show_progress = previous


@pytest.fixture
def rng():
    """Fixed generator for test inputs"""
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synthetic_train():
    """Normalized synthetic training split (600 samples)"""
    return normalize(gen_synthetic(600, seed=0, split=Split.TRAIN))


@pytest.fixture(scope="session")
def synthetic_test(synthetic_train):
    """Normalized synthetic test split, scaled with the training statistics"""
    raw = gen_synthetic(200, seed=0, split=Split.TEST)
    return normalize(raw, reference=synthetic_train.normalization)


@pytest.fixture(scope="session")
def toy_cnn(synthetic_train):
    """Small desk CNN trained for a few epochs on the synthetic templates"""
    return train(TOY_LAYERS, TOY_RECIPE, synthetic_train).model


# ---------------------------------------------------------------------------
# CLI fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def smoke_config_path():
    """Path of the tiny end-to-end experiment config"""
    return Path(__file__).parent.parent / "configs" / "smoke.json"
