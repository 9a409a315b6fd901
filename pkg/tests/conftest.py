import math

import numpy as np
import pytest
from hypothesis import settings

from kvnsim.grid import AxisSpec, build_grid

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def square_grid(levels, extent=8.0, hbar=1.0, labels=("q", "p")):
    return build_grid([AxisSpec(lab, levels, extent, -extent / 2) for lab in labels], hbar)


@pytest.fixture
def grid32():
    return square_grid(32)


@pytest.fixture
def line256():
    return build_grid([AxisSpec("x", 256, 8.0, -4.0)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


HALF_PI = 0.5 * math.pi
