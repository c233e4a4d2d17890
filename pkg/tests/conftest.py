import numpy as np
import pytest

from jumpmart.geometry import sphere, torus


@pytest.fixture
def s1():
    return sphere(2)


@pytest.fixture
def s2():
    return sphere(3)


@pytest.fixture
def t2():
    return torus(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
