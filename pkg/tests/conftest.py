import numpy as np
import pytest

from diffrouter import datagen
from diffrouter.schedules import build_diffusion_schedule


@pytest.fixture(scope="session")
def small_star():
    """Tiny 3-domain star with the analytic gaussian-affine oracle."""
    return datagen.make_star_instance(3, 2, 1000, seed=7, M=2000)


@pytest.fixture(scope="session")
def sch100():
    return build_diffusion_schedule(100)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
