import os
import tempfile

# Logging is configured at import time, so point it somewhere disposable first
os.environ.setdefault("FEDCYCLE_LOG_DIR", tempfile.mkdtemp(prefix="fedcycle-logs-"))
os.environ.setdefault("FEDCYCLE_LOG_LEVEL", "INFO")

import numpy as np  # noqa: E402
import pytest  # noqa: E402
from src.nn.models import CycleModels  # noqa: E402
from src.nn.networks import ModelConfig  # noqa: E402
from src.objectives.terms import LossWeights  # noqa: E402
from src.utils.settings import reset_settings  # noqa: E402


@pytest.fixture(autouse=True)
def fresh_settings():
    reset_settings()
    yield
    reset_settings()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    return ModelConfig(width=4, depth=2)


@pytest.fixture
def standard_models(small_cfg):
    return CycleModels.create("standard", small_cfg, small_cfg, seed=0, code_hidden=8)


@pytest.fixture
def switchable_models(small_cfg):
    return CycleModels.create("switchable", small_cfg, small_cfg, seed=0, code_hidden=8)


@pytest.fixture
def weights():
    return LossWeights()


@pytest.fixture
def batches(rng):
    return {
        "X": rng.uniform(0, 1, size=(2, 1, 8, 8)).astype(np.float32),
        "Y": rng.uniform(0, 1, size=(2, 1, 8, 8)).astype(np.float32),
    }
