import numpy as np
import pytest

from vidinstruct import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # One-time JIT compile so timed tests measure the kernels, not the compiler.
    kernels.warmup()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240613)
