import numpy as np
import pytest

from stoplab import GbmParams, extract_boundary, price_put_fd

BENCH = GbmParams(r=0.05, sigma=0.2, strike=100.0, horizon=1.0)


@pytest.fixture(scope="session")
def params():
    return BENCH


@pytest.fixture(scope="session")
def grid():
    return price_put_fd(BENCH)


@pytest.fixture(scope="session")
def boundary(grid):
    return extract_boundary(grid)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
