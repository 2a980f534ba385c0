import numpy as np
import pytest

from spectraj.data import generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    # 10 Hz, 3 s / 5 s -> H_obs = 30, H_pred = 50
    return generate_dataset(4, seed=7)
