"""Shared fixtures: seeded RNGs and a small oracle-rendered dataset."""

import numpy as np
import pytest

from nerflab import scenes


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def two_sphere():
    return scenes.two_sphere_scene()


@pytest.fixture(scope="session")
def one_sphere():
    return scenes.one_sphere_scene()


@pytest.fixture(scope="session")
def small_dataset(two_sphere):
    """3 train + 2 test views of the two-primitive scene at 32x32."""
    gen = np.random.default_rng(7)
    return scenes.make_dataset(
        two_sphere, 3, 2, 32, gen, samples_per_ray=512
    )
