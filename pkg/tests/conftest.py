import numpy as np
import pytest

from mpqx import fixtures


@pytest.fixture(scope="session")
def mlp_fixture():
    return fixtures.mlp_fixture()


@pytest.fixture(scope="session")
def cnn_fixture():
    return fixtures.cnn_fixture()


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
