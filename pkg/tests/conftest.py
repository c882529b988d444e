import numpy as np
import pytest

from chainfit.bodymodel import synth_model
from chainfit.chains import default_chain_set


@pytest.fixture(scope="session")
def model():
    return synth_model(seed=0)


@pytest.fixture(scope="session")
def chain_set(model):
    return default_chain_set(model.tree())


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
