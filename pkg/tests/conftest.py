import numpy as np
import pytest

from mtsavg import _kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # jit compilation happens once here, not inside timed tests
    _kernels.warmup()


def rand_hermitian(rng, n, scale=1.0):
    M = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    H = M + M.conj().T
    return scale * H / np.linalg.norm(H, 2)


def rand_matrix(rng, n, scale=1.0):
    M = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * M / np.linalg.norm(M, 2)


def rand_state(rng, n):
    c = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return c / np.linalg.norm(c)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
