import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from climrt import _jit  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(params=["numpy", "numba"])
def backend(request):
    """Run a test once per kernel backend."""
    prev = _jit.set_backend(request.param)
    yield request.param
    _jit.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
