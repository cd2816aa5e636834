import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import nrt
from nrt.training import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_model():
    """Small untrained CNN on 16x16 inputs, 4 classes."""
    return nrt.build_small_cnn((1, 16, 16), 4, seed=3)


@pytest.fixture(scope="session")
def tiny_trained():
    """Quickly trained model on a small synthetic problem (K=4)."""
    train, test = nrt.synthetic_splits(4, 120, 40, shape=(1, 16, 16), seed=5)
    model = nrt.build_small_cnn((1, 16, 16), 4, seed=9)
    record = nrt.train(model, train, test, TrainConfig(
        epochs=10, learning_rate=0.01, batch_size=32, seed=9))
    return model, train, test, record
