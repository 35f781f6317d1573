import numpy as np
import pytest

from sweepvor.geometry import build_voronoi, random_seeds, unit_square


@pytest.fixture(scope="session")
def square():
    return unit_square()


@pytest.fixture(scope="session")
def mesh100(square):
    return build_voronoi(random_seeds(100, square, 42), square)


@pytest.fixture(scope="session")
def mesh_factory(square):
    def make(n, rng_seed):
        return build_voronoi(random_seeds(n, square, rng_seed), square)

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
