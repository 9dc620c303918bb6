import numpy as np
import pytest

from scrubsim import configs, datagen


@pytest.fixture(scope="session")
def arm():
    return configs.default_arm()


@pytest.fixture(scope="session")
def gains(arm):
    return configs.default_gains(arm)


@pytest.fixture(scope="session")
def ranges(arm):
    return configs.action_ranges(arm)


@pytest.fixture(scope="session")
def vocab():
    return datagen.default_vocabulary()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
