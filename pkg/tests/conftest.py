import numpy as np
import pytest

from meshgaze import fixtures


@pytest.fixture(scope="session")
def cube_mesh():
    return fixtures.cube()


@pytest.fixture(scope="session")
def ico2():
    return fixtures.icosphere(2)


@pytest.fixture(scope="session")
def ico3():
    return fixtures.icosphere(3)


@pytest.fixture(scope="session")
def torus_mesh():
    return fixtures.torus(1.0, 0.4, 24, 16)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
