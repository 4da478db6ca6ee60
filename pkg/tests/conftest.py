import pytest

from stormplan.fixtures import der3, der12, feeder3, feeder12


@pytest.fixture
def f3():
    return feeder3()


@pytest.fixture
def d3():
    return der3()


@pytest.fixture(scope="session")
def f12():
    return feeder12()


@pytest.fixture(scope="session")
def d12():
    return der12()
