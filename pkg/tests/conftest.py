import numpy as np
import pytest

from fvsrn.model import ModelConfig, model_init
from fvsrn.volume import ScalarVolume, synth_field


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_volume(rng):
    return ScalarVolume(values=rng.uniform(0, 1, size=(9, 7, 5)).astype(np.float32))


@pytest.fixture
def sphere_volume():
    return synth_field("sphere", 32)


@pytest.fixture
def tiny_model():
    # Small density model: quick to evaluate, has a grid to exercise.
    return model_init(ModelConfig(layers=2, hidden=16, fourier_m=6,
                                  grid_resolution=4, grid_channels=4, seed=7))
