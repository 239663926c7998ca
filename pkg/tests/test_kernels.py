"""Agreement between the jitted kernels and the pure-numpy fallback."""

import numpy as np
import pytest

from mtsavg import _kernels
from mtsavg._kernels import (USING_NUMBA, evolve_adaptive_py, evolve_fixed_py,
                             expm_herm_py, qp_eval_batch_py, qp_eval_py)


@pytest.fixture
def terms(rng):
    J, N = 6, 4
    amps = rng.standard_normal((J, N, N)) + 1j * rng.standard_normal((J, N, N))
    amps /= 4.0
    omegas = rng.uniform(0.05, 4.0, J)
    return amps, omegas


def test_eval_batch_matches_single(terms):
    amps, omegas = terms
    ts = np.array([0.0, 0.7, 3.1])
    batch = qp_eval_batch_py(amps, omegas, ts)
    for k, t in enumerate(ts):
        np.testing.assert_allclose(batch[k], qp_eval_py(amps, omegas, t),
                                   atol=1e-14)


def test_eval_is_hermitian(terms):
    amps, omegas = terms
    A = qp_eval_py(amps, omegas, 1.234)
    assert np.linalg.norm(A - A.conj().T) < 1e-13


@pytest.mark.skipif(not USING_NUMBA, reason="numba path disabled")
class TestPathAgreement:
    def test_qp_eval(self, terms):
        amps, omegas = terms
        a = _kernels.qp_eval(amps, omegas, 2.5)
        b = qp_eval_py(amps, omegas, 2.5)
        assert np.linalg.norm(a - b) < 1e-13

    def test_expm(self, terms):
        amps, omegas = terms
        H = qp_eval_py(amps, omegas, 0.4)
        a = _kernels.expm_herm(H, 0.9)
        b = expm_herm_py(H, 0.9)
        assert np.linalg.norm(a - b) < 1e-12

    def test_fixed_step(self, terms):
        amps, omegas = terms
        a = _kernels.evolve_fixed(amps, omegas, 1e-2, 0.0, 5.0, 200)
        b = evolve_fixed_py(amps, omegas, 1e-2, 0.0, 5.0, 200)
        assert np.linalg.norm(a - b) < 1e-11

    def test_adaptive(self, terms):
        amps, omegas = terms
        a = _kernels.evolve_adaptive(amps, omegas, 1e-2, 0.0, 8.0, 1e-9, 0.1,
                                     1_000_000)
        b = evolve_adaptive_py(amps, omegas, 1e-2, 0.0, 8.0, 1e-9, 0.1,
                               1_000_000)
        assert a[3] and b[3]
        assert np.linalg.norm(a[0] - b[0]) < 1e-8
        assert a[2] == b[2]  # identical step sequences


def test_adaptive_handles_awkward_endpoints(terms):
    # segment endpoints that forced the controller into its failure mode
    amps, omegas = terms
    t0, t1 = 25.033898305084747, 25.050847457627118
    U, err, nsteps, ok = evolve_adaptive_py(amps, omegas, 1e-2, t0, t1,
                                            1e-9, 0.1, 50_000)
    assert ok
    assert np.linalg.norm(U.conj().T @ U - np.eye(4)) < 1e-12


def test_adaptive_zero_span(terms):
    amps, omegas = terms
    U, err, nsteps, ok = evolve_adaptive_py(amps, omegas, 1e-2, 2.0, 2.0,
                                            1e-9, 0.1, 100)
    assert ok and nsteps == 0
    np.testing.assert_allclose(U, np.eye(4), atol=1e-15)
