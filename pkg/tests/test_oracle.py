import numpy as np
import pytest

from mtsavg.averaging import AveragingConfig, build_level0
from mtsavg.generators import (ConstantGenerator, QuasiperiodicGenerator,
                               QuasiperiodicTerm, ScalarDrivenGenerator)
from mtsavg.matcore import hermitian_exp, spectral_norm, unitarity_defect
from mtsavg.oracle import (OracleConfig, OracleError, evolve, evolve_detailed,
                           evolve_fixed_step, evolve_state, recover_generator)

from conftest import rand_hermitian, rand_matrix, rand_state


def make_qp(rng, omegas, dim=3):
    terms = [QuasiperiodicTerm(rand_matrix(rng, dim, j ** -1.5), om, index=j)
             for j, om in enumerate(omegas, start=1)]
    return QuasiperiodicGenerator(terms)


class TestEvolve:
    def test_zero_generator(self):
        gen = ConstantGenerator(np.zeros((3, 3), complex))
        U = evolve(gen, 1e-2, 0.0, 12.0)
        np.testing.assert_allclose(U, np.eye(3), atol=1e-13)

    def test_constant_matches_direct_exponential(self, rng):
        A = rand_hermitian(rng, 3)
        beta, t = 1e-2, 23.0
        U = evolve(ConstantGenerator(A), beta, 0.0, t, OracleConfig(tol=1e-10))
        assert spectral_norm(U - hermitian_exp(A, beta * t)) < 1e-9

    def test_commuting_family_closed_form(self, rng):
        # A(t) = cos(t) H evolves to exp(-i beta H sin(t)); an independent
        # closed form through the scalar antiderivative
        H = rand_hermitian(rng, 4)
        gen = ScalarDrivenGenerator(H, np.cos, antiderivative=np.sin)
        beta, t = 1e-2, 17.0
        U = evolve(gen, beta, 0.0, t, OracleConfig(tol=1e-10))
        expected = hermitian_exp(H, beta * np.sin(t))
        assert spectral_norm(U - expected) < 1e-9

    def test_unitarity(self, rng):
        gen = make_qp(rng, [0.3, 1.5, 4.0])
        for (a, b) in [(0.0, 7.0), (3.0, 40.0)]:
            U = evolve(gen, 1e-2, a, b, OracleConfig(tol=1e-8))
            assert unitarity_defect(U) < 1e-10

    def test_reversed_endpoints_rejected(self, rng):
        gen = make_qp(rng, [0.3])
        with pytest.raises(ValueError):
            evolve(gen, 1e-2, 5.0, 1.0)

    def test_budget_exhaustion_reports_error(self, rng):
        gen = make_qp(rng, [0.3, 2.0])
        with pytest.raises(OracleError, match="achieved"):
            evolve(gen, 1e-2, 0.0, 50.0,
                   OracleConfig(tol=1e-12, max_steps=10))

    def test_error_estimate_within_budget(self, rng):
        gen = make_qp(rng, [0.4, 1.2])
        cfg = OracleConfig(tol=1e-8)
        span = 30.0
        _, err, nsteps = evolve_detailed(gen, 1e-2, 0.0, span, cfg)
        assert err <= cfg.tol * span
        assert nsteps > 0


class TestEvolveState:
    def test_trivial(self):
        gen = ConstantGenerator(np.zeros((2, 2), complex))
        e1 = np.array([1.0, 0.0], complex)
        np.testing.assert_allclose(evolve_state(gen, 1e-2, e1, 0.0, 3.0), e1,
                                   atol=1e-13)

    def test_two_level_rotation(self):
        # constant A = sigma_x, beta*t = pi/2: c -> -i sigma_x c
        sx = np.array([[0.0, 1.0], [1.0, 0.0]], complex)
        gen = ConstantGenerator(sx)
        beta = 1e-2
        t = (np.pi / 2) / beta
        c0 = np.array([1.0, 0.0], complex)
        got = evolve_state(gen, beta, c0, 0.0, t, OracleConfig(tol=1e-10))
        expected = -1j * sx @ c0
        assert np.linalg.norm(got - expected) < 1e-9

    def test_norm_conservation(self, rng):
        gen = make_qp(rng, [0.2, 1.1, 3.3])
        c0 = rand_state(rng, 3)
        c = evolve_state(gen, 1e-2, c0, 0.0, 60.0, OracleConfig(tol=1e-7))
        assert abs(np.linalg.norm(c) - 1.0) < 1e-10

    def test_tolerance_self_consistency(self, rng):
        gen = make_qp(rng, [0.2, 0.9, 1.8])
        beta = 1e-2
        t = 1.0 / beta
        c0 = rand_state(rng, 3)
        a = evolve_state(gen, beta, c0, 0.0, t, OracleConfig(tol=1e-10))
        b = evolve_state(gen, beta, c0, 0.0, t, OracleConfig(tol=1e-12))
        assert np.linalg.norm(a - b) < 1e-9


class TestSemigroup:
    def test_composition_over_subintervals(self, rng):
        gen = make_qp(rng, [0.4, 2.2])
        beta, cfg = 1e-2, OracleConfig(tol=1e-9)
        t_m1, t0, t1 = 2.0, 11.0, 27.0
        U_a = evolve(gen, beta, t_m1, t0, cfg)
        U_b = evolve(gen, beta, t0, t1, cfg)
        U_full = evolve(gen, beta, t_m1, t1, cfg)
        assert spectral_norm(U_b @ U_a - U_full) <= 3 * cfg.tol * (t1 - t_m1)


class TestOrder:
    def test_fixed_step_halving_reduces_error_fourfold(self, rng):
        gen = make_qp(rng, [0.5, 1.6])
        beta, t = 1e-2, 12.0
        ref = evolve(gen, beta, 0.0, t, OracleConfig(tol=1e-12))
        e1 = spectral_norm(evolve_fixed_step(gen, beta, 0.0, t, 200) - ref)
        e2 = spectral_norm(evolve_fixed_step(gen, beta, 0.0, t, 400) - ref)
        assert e1 / e2 == pytest.approx(4.0, rel=0.2)


class TestRecoverGenerator:
    def test_identity_flow(self):
        h = 0.1
        samples = [(k * h, np.eye(2, dtype=complex)) for k in range(5)]
        for _, A in recover_generator(samples, h):
            assert spectral_norm(A) < 1e-13

    def test_constant_generator_flow(self, rng):
        H = rand_hermitian(rng, 3)
        h = 1e-2
        ts = 1.0 + h * np.arange(7)
        samples = [(t, hermitian_exp(H, t)) for t in ts]
        recovered = recover_generator(samples, h)
        errs = [spectral_norm(A - H) for _, A in recovered]
        assert max(errs) < 1e-3
        # halving h shrinks the defect by ~4
        samples2 = [(1.0 + 0.5 * h * k, hermitian_exp(H, 1.0 + 0.5 * h * k))
                    for k in range(13)]
        errs2 = [spectral_norm(A - H) for _, A in recover_generator(samples2, 0.5 * h)]
        assert errs[0] / errs2[0] == pytest.approx(4.0, rel=0.25)

    def test_recovers_averaged_generator(self, rng):
        # flow samples from the averaged propagator recover beta * Abar(t)
        beta = 1e-2
        cfg = AveragingConfig(beta=beta, horizon=40.0)
        level = build_level0(make_qp(rng, [0.4, 1.9]), cfg)
        h = 0.05
        ts = 13.0 + h * np.arange(9)  # interior of block 1
        samples = [(t, level.propagator.evaluate(t)) for t in ts]
        expected = beta * level.averaged.block_values[1]
        for _, A in recover_generator(samples, h):
            assert spectral_norm(A - expected) < 1e-4

    def test_nonuniform_grid_rejected(self):
        samples = [(0.0, np.eye(2, dtype=complex)),
                   (0.1, np.eye(2, dtype=complex)),
                   (0.25, np.eye(2, dtype=complex))]
        with pytest.raises(ValueError, match="uniform"):
            recover_generator(samples, 0.1)
