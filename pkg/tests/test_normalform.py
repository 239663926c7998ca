import numpy as np
import pytest

from mtsavg.averaging import AveragingConfig, build_hierarchy
from mtsavg.generators import (ConstantGenerator, QuasiperiodicGenerator,
                               QuasiperiodicTerm)
from mtsavg.matcore import (hermiticity_defect, spectral_norm,
                            unitarity_defect)
from mtsavg.normalform import (AFFINE, UNITARY, NormalFormMap,
                               apply_normal_form, build_normal_form,
                               compose_step, iterate_scheme)
from mtsavg.oracle import OracleConfig, evolve as oracle_evolve

from conftest import rand_hermitian, rand_matrix, rand_state

BETA = 1e-2


def make_qp(rng, omegas, dim=3):
    terms = [QuasiperiodicTerm(rand_matrix(rng, dim, j ** -1.5), om, index=j)
             for j, om in enumerate(omegas, start=1)]
    return QuasiperiodicGenerator(terms)


@pytest.fixture
def levels(rng):
    cfg = AveragingConfig(beta=BETA, horizon=40.0)
    gen = make_qp(rng, [0.35, 1.2, 3.4])
    return gen, cfg, build_hierarchy(gen, cfg, depth=1)


class TestConstruction:
    def test_requires_level_one(self, rng):
        cfg = AveragingConfig(beta=BETA, horizon=30.0)
        lv0 = build_hierarchy(make_qp(rng, [0.5]), cfg, depth=0)[0]
        with pytest.raises(ValueError):
            build_normal_form(lv0)

    def test_identity_at_anchor(self, levels):
        _, _, (lv0, lv1) = levels
        for mode in (AFFINE, UNITARY):
            nf = build_normal_form(lv1, mode=mode)
            np.testing.assert_allclose(nf.value(0.0), np.eye(3), atol=1e-12)

    def test_constant_base_gives_identity_map(self, rng):
        cfg = AveragingConfig(beta=BETA, horizon=40.0)
        lv0, lv1 = build_hierarchy(ConstantGenerator(rand_hermitian(rng, 3)),
                                   cfg, depth=1)
        for mode in (AFFINE, UNITARY):
            nf = build_normal_form(lv1, mode=mode)
            for t in (0.0, 13.0, 35.0):
                np.testing.assert_allclose(nf.value(t), np.eye(3), atol=1e-10)
                assert spectral_norm(nf.effective_generator(t)) < 1e-10


class TestKernel:
    def test_hermitian(self, levels, rng):
        _, _, (lv0, lv1) = levels
        nf = build_normal_form(lv1, mode=AFFINE)
        for t in rng.uniform(0, 40, 12):
            assert hermiticity_defect(nf.kernel(t)) <= 1e-12

    def test_vanishes_at_interval_boundaries(self, levels):
        _, cfg, (lv0, lv1) = levels
        nf = build_normal_form(lv1, mode=AFFINE)
        for k in (1, 2, 3):
            assert spectral_norm(nf.kernel(k * cfg.T0)) < 1e-9

    def test_matches_direct_quadrature(self, levels):
        from mtsavg.averaging import residual_integral
        _, cfg, (lv0, lv1) = levels
        nf = build_normal_form(lv1, mode=AFFINE)
        for t in (4.2, 17.9, 36.1):
            direct = residual_integral(lv1.generator, lv1.averaged, t)
            assert spectral_norm(nf.kernel(t) - direct) < 1e-10


class TestApply:
    def test_affine_inverse_roundtrip(self, levels, rng):
        _, _, (lv0, lv1) = levels
        nf = build_normal_form(lv1, mode=AFFINE)
        c = rand_state(rng, 3)
        for t in (3.0, 21.5):
            out = nf.apply_inverse(nf.apply(c, t), t)
            assert np.linalg.norm(out - c) < 1e-10

    def test_unitary_mode_preserves_norm(self, levels, rng):
        _, _, (lv0, lv1) = levels
        nf = build_normal_form(lv1, mode=UNITARY,
                               oracle_cfg=OracleConfig(tol=1e-8, initial_step=0.05))
        c = rand_state(rng, 3)
        for t in (2.0, 9.0):
            out = apply_normal_form(nf, c, t)
            assert abs(np.linalg.norm(out) - 1.0) < 1e-10

    def test_unitary_map_defect(self, levels):
        _, _, (lv0, lv1) = levels
        nf = build_normal_form(lv1, mode=UNITARY,
                               oracle_cfg=OracleConfig(tol=1e-8, initial_step=0.05))
        assert unitarity_defect(nf.value(7.0)) < 1e-10

    def test_modes_agree_to_leading_order(self, levels):
        _, _, (lv0, lv1) = levels
        nf_a = build_normal_form(lv1, mode=AFFINE)
        nf_u = build_normal_form(lv1, mode=UNITARY,
                                 oracle_cfg=OracleConfig(tol=1e-8, initial_step=0.05))
        t = 6.0
        # maps differ at O(beta^2 |K| |K'|); both are near identity
        diff = spectral_norm(nf_a.value(t) - nf_u.value(t))
        assert diff < 10 * BETA**2 * 40.0


class TestEffectiveGenerator:
    def test_zero_at_anchor(self, levels):
        # B(0) = 0 makes every bracket term vanish
        _, _, (lv0, lv1) = levels
        nf = build_normal_form(lv1, mode=AFFINE)
        assert spectral_norm(nf.effective_generator(0.0)) < 1e-12

    def test_unitary_mode_hermitian(self, levels, rng):
        _, _, (lv0, lv1) = levels
        nf = build_normal_form(lv1, mode=UNITARY,
                               oracle_cfg=OracleConfig(tol=1e-8, initial_step=0.05))
        for t in (1.5, 8.0):
            assert hermiticity_defect(nf.effective_generator(t)) < 1e-9

    def test_transformed_flow_identity(self, levels, rng):
        """Central-difference derivative of the transformed coordinate matches
        -i beta^(3/2) Atilde c2U: the defining identity of the construction."""
        gen, cfg, (lv0, lv1) = levels
        nf = build_normal_form(lv1, mode=AFFINE)
        ocfg = OracleConfig(tol=1e-12, initial_step=0.02)
        c0 = rand_state(rng, 3)

        def c2U(t):
            c = oracle_evolve(gen, BETA, 0.0, t, ocfg) @ c0
            c2 = lv1.propagator.inverse(t) @ (lv0.propagator.inverse(t) @ c)
            return nf.apply(c2, t)

        for t in (5.3, 14.7, 26.4):
            errs = []
            for h in (2e-3, 1e-3):
                fd = (c2U(t + h) - c2U(t - h)) / (2 * h)
                rhs = -1j * BETA**1.5 * (nf.effective_generator(t) @ c2U(t))
                errs.append(np.linalg.norm(fd - rhs))
            # O(h^2) + oracle floor: halving h shrinks the defect ~4x
            assert errs[1] < errs[0] / 2.5 + 1e-8


class TestCompose:
    def test_identity_chain(self, rng):
        cfg = AveragingConfig(beta=BETA, horizon=30.0)
        lv0, lv1 = build_hierarchy(ConstantGenerator(np.zeros((2, 2), complex)),
                                   cfg, depth=1)
        nf = build_normal_form(lv1, mode=AFFINE)
        np.testing.assert_allclose(
            compose_step(lv0.propagator, lv1.propagator, nf, 12.0),
            np.eye(2), atol=1e-12)

    def test_constant_base(self, rng):
        from mtsavg.matcore import hermitian_exp
        A = rand_hermitian(rng, 3)
        cfg = AveragingConfig(beta=BETA, horizon=30.0)
        lv0, lv1 = build_hierarchy(ConstantGenerator(A), cfg, depth=1)
        nf = build_normal_form(lv1, mode=AFFINE)
        t = 22.0
        V = compose_step(lv0.propagator, lv1.propagator, nf, t)
        np.testing.assert_allclose(V, hermitian_exp(A, BETA * t), atol=1e-10)

    def test_chain_reproduces_reference_flow(self, levels, rng):
        """c2U evolved through the effective system, mapped back by V,
        reproduces the reference solution."""
        gen, cfg, (lv0, lv1) = levels
        nf = build_normal_form(lv1, mode=AFFINE)
        from mtsavg.generators import CallableGenerator
        eff = CallableGenerator(nf.effective_generator, dim=3, norm_bound=10.0,
                                max_frequency=gen.max_frequency)
        c0 = rand_state(rng, 3)
        t = 17.0
        c2U = oracle_evolve(eff, BETA**1.5, 0.0, t,
                            OracleConfig(tol=1e-9, initial_step=0.05)) @ c0
        V = compose_step(lv0.propagator, lv1.propagator, nf, t)
        c_ref = oracle_evolve(gen, BETA, 0.0, t, OracleConfig(tol=1e-10)) @ c0
        assert np.linalg.norm(V @ c2U - c_ref) < 1e-6


class TestIterateScheme:
    def test_single_stage(self, rng):
        gen = make_qp(rng, [0.5, 2.0])
        stages = iterate_scheme(gen, BETA, depth=1)
        assert len(stages) == 1
        assert stages[0].coupling == BETA
        assert stages[0].generator is gen
        assert stages[0].transform_chain == []

    def test_constant_base_higher_stages_vanish(self, rng):
        gen = ConstantGenerator(rand_hermitian(rng, 2))
        stages = iterate_scheme(gen, BETA, depth=2)
        assert len(stages) == 2
        assert stages[1].coupling == pytest.approx(BETA**1.5)
        T0_2 = stages[1].coupling ** -0.5
        for t in (0.1 * T0_2, 0.8 * T0_2):
            assert spectral_norm(stages[1].generator.evaluate(t)) < 1e-9

    def test_two_stages_structure(self, rng):
        gen = make_qp(rng, [0.4, 1.8])
        stages = iterate_scheme(gen, BETA, depth=2, mode=AFFINE)
        assert stages[1].coupling == pytest.approx(BETA**1.5)
        assert len(stages[1].transform_chain) == 1
        # stage-2 generator evaluates and is bounded by its declared norm
        T0_2 = stages[1].coupling ** -0.5
        for t in (3.0, 0.4 * T0_2):
            val = stages[1].generator.evaluate(t)
            assert spectral_norm(val) <= stages[1].generator.norm_bound

    def test_stage2_generator_hermitian_in_unitary_mode(self, rng):
        gen = make_qp(rng, [0.4, 1.8])
        stages = iterate_scheme(gen, BETA, depth=2, mode=UNITARY)
        for t in (2.0, 6.0):
            assert hermiticity_defect(stages[1].generator.evaluate(t)) < 1e-8

    def test_depth_cap(self, rng):
        with pytest.raises(ValueError):
            iterate_scheme(make_qp(rng, [0.5]), BETA, depth=4)
