import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from permanence import fixtures as F

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def symmetric():
    return F.symmetric_lv()


@pytest.fixture
def dominance():
    return F.dominance_lv()


@pytest.fixture
def ricker():
    return F.ricker(1.0)


@pytest.fixture
def sir():
    return F.sir_endemic()


@pytest.fixture
def meta():
    return F.mirrored_meta()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
