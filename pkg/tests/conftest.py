import numpy as np
import pytest

from slowfastsde import linear_test, ou_periodic, toy_turbulence

DT = 1e-3


@pytest.fixture(scope="session")
def ou_system():
    return ou_periodic()


@pytest.fixture(scope="session")
def toy_system():
    return toy_turbulence()


@pytest.fixture(scope="session")
def linear_system():
    return linear_test(a=1.0, sigma=1.0)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=20250819))
