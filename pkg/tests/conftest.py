import numpy as np
import pytest

from kmob import catalog
from kmob.metrics import sample_points


@pytest.fixture(scope="session")
def space_form():
    return catalog.space_form(2, 2.0)


@pytest.fixture(scope="session")
def bundle_6d():
    return catalog.bundle_6d()


@pytest.fixture(scope="session")
def bundle_4d():
    return catalog.bundle_4d()


@pytest.fixture(scope="session")
def cubic():
    return catalog.orthotoric_cubic()


@pytest.fixture(scope="session")
def control():
    return catalog.orthotoric_control()


@pytest.fixture(scope="session")
def product():
    return catalog.product()


def pts(instance, count=6, seed=0):
    return sample_points(instance, count, seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
