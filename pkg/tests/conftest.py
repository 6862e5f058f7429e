import warnings

import pytest

from ebwave.basis import build_basis
from ebwave.errors import LowDensityWarning


@pytest.fixture(scope="session")
def db8():
    return build_basis("db8", 12)


@pytest.fixture(autouse=True)
def _quiet_low_density():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LowDensityWarning)
        yield
