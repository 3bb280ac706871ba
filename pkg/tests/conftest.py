import numpy as np
import pytest

from formflight.config import get_settings
from formflight.control import preset_gains
from formflight.linmodel import LtiModel, builtin_a320, selector


@pytest.fixture(scope="session")
def a320():
    return builtin_a320()


@pytest.fixture(scope="session")
def model(a320):
    return a320[0]


@pytest.fixture(scope="session")
def params(a320):
    return a320[1]


@pytest.fixture(scope="session")
def lqr_gain():
    return preset_gains("lqr")


@pytest.fixture(scope="session")
def lqr_int_gain():
    return preset_gains("lqr_integral")


@pytest.fixture(scope="session")
def structured_gains():
    return preset_gains("structured")


@pytest.fixture
def point_mass():
    """Three decoupled double integrators, positions then velocities."""
    a = np.zeros((6, 6))
    a[:3, 3:] = np.eye(3)
    b = np.vstack([np.zeros((3, 3)), np.eye(3)])
    return LtiModel(
        a=a,
        b=b,
        position_selector=selector((0, 1, 2), 6),
        velocity_selector=selector((3, 4, 5), 6),
        attitude_selector=np.zeros((0, 6)),
    )


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    """Settings are cached process-wide; every test starts from a clean cache."""
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()
