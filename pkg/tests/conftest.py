import numpy as np
import pytest

from dysolve import DriveChannel, SystemModel


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def random_model(
    rng: np.random.Generator,
    size: int = 3,
    channels: int = 1,
    real: bool = False,
    spread: float = 2.0,
) -> SystemModel:
    eigenvalues = np.sort(rng.uniform(-spread, spread, size))
    drives = []
    for _ in range(channels):
        dipole = rng.normal(size=(size, size))
        if not real:
            dipole = dipole + 1j * rng.normal(size=(size, size))
        drives.append(DriveChannel((dipole + dipole.conj().T) / 2, rng.uniform(0.5, 2.0)))
    return SystemModel(eigenvalues=eigenvalues, channels=tuple(drives))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def qubit():
    """Two levels at 0 and 1 GHz, sigma_x drive at resonance"""
    frequency = 2 * np.pi
    return SystemModel(
        eigenvalues=np.array([0.0, frequency]),
        channels=(DriveChannel(np.array([[0, 1], [1, 0]]), frequency),),
    )


@pytest.fixture
def make_model(rng):
    def make(**kwargs) -> SystemModel:
        return random_model(rng, **kwargs)

    return make
