import numpy as np
import pytest

from densyn.backend import get_kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # compile numba kernels once so timed tests measure compute, not jit
    get_kernels().warmup()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
