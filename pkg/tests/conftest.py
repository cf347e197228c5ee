import numpy as np
import pytest

from helpers import make_rig


@pytest.fixture(scope="session")
def rig():
    """Non-planar two-camera rig: (matches, true canonical F)."""
    return make_rig(n=250, planar=False, seed=12345)


@pytest.fixture(scope="session")
def planar_rig():
    """Coplanar-scene rig; F is determined only up to a family."""
    return make_rig(n=200, planar=True, seed=3)


@pytest.fixture()
def rng():
    return np.random.default_rng(987)
