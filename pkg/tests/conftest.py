import numpy as np
import pytest

from logsob.bubbles import build_pair
from logsob.discretization import make_grid


@pytest.fixture(scope="session")
def grid1():
    return make_grid(1, 10.0, 401, 4)


@pytest.fixture(scope="session")
def pair6():
    return build_pair(6.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
