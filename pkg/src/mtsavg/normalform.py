"""Near-identity normal-form transformation and the effective slow system.

The map absorbs the boundary term of the integration-by-parts identity for
the twice-peeled flow. With B(t) the running residual integral of the
level-1 generator and U1 the level-1 averaged propagator, the affine map is

    Utilde(t) = I + i beta U1^{-1}(t) B(t) U1(t) ,

and the transformed coordinate obeys an equation with coupling beta^(3/2)
and an O(1) generator. The unitary variant replaces the affine map by the
time-ordered exponential whose generator is the exact time derivative of
the affine kernel,

    K'(s) = A2(s) + i beta U1^{-1}(s) [Abar1(s), B(s)] U1(s) ,

which is hermitian; this matches the affine map to leading order while
making the transformed flow exactly norm-preserving, so the effective
generator is hermitian.
"""

from dataclasses import dataclass, field

import numpy as np

from .averaging import (AveragingConfig, HierarchyLevel, _block_index,
                        build_hierarchy)
from .generators import CallableGenerator, Generator, PeeledGenerator
from .matcore import spectral_norm
from .oracle import OracleConfig, evolve as oracle_evolve
from .quadrature import gauss_legendre

AFFINE = "affine"
UNITARY = "unitary"


class _BlockAntiderivative:
    """Cached running integral of (A - Abar) from each interval's start.

    Whole intervals cancel, so the running integral from 0 reduces to the
    partial-interval piece; each interval gets a cumulative panel table on
    first use, after which a query costs one short Gauss-Legendre sum.
    """

    PANELS_PER_PERIOD = 8.0

    def __init__(self, gen, averaged, order=8):
        self.gen = gen
        self.averaged = averaged
        self.order = order
        self._tables = {}

    def _table(self, n):
        tab = self._tables.get(n)
        if tab is not None:
            return tab
        T0 = self.averaged.T0
        a = n * T0
        panels = max(4, int(np.ceil(
            T0 * self.gen.max_frequency * self.PANELS_PER_PERIOD / (2 * np.pi))))
        edges = np.linspace(a, a + T0, panels + 1)
        nodes, weights = gauss_legendre(self.order)
        half = 0.5 * (edges[1] - edges[0])
        mids = 0.5 * (edges[:-1] + edges[1:])
        ts = (mids[:, None] + half * nodes[None, :]).ravel()
        vals = self.gen.evaluate_batch(ts) - self.averaged.block_values[n]
        vals = vals.reshape(panels, self.order, *vals.shape[1:])
        per_panel = half * np.tensordot(weights, vals, axes=(0, 1))
        prefix = np.concatenate([np.zeros_like(per_panel[:1]),
                                 np.cumsum(per_panel, axis=0)])
        tab = (edges, prefix)
        self._tables[n] = tab
        return tab

    def value(self, t):
        T0 = self.averaged.T0
        n = _block_index(t, T0, self.averaged.n_blocks)
        edges, prefix = self._table(n)
        i = min(max(int(np.searchsorted(edges, t) - 1), 0), len(edges) - 2)
        out = prefix[i].copy()
        if t > edges[i]:
            nodes, weights = gauss_legendre(self.order)
            half = 0.5 * (t - edges[i])
            ts = edges[i] + half * (nodes + 1.0)
            vals = self.gen.evaluate_batch(ts) - self.averaged.block_values[n]
            out += half * np.tensordot(weights, vals, axes=(0, 0))
        return out


class NormalFormMap:
    """Evaluatable near-identity map built on a level-1 hierarchy rung."""

    def __init__(self, level1, Ti=0.0, mode=UNITARY, quad_tol=1e-13,
                 oracle_cfg=None):
        if mode not in (AFFINE, UNITARY):
            raise ValueError(f"unknown mode {mode!r}")
        if Ti < 0:
            raise ValueError("Ti must be nonnegative")
        self.level1 = level1
        self.Ti = float(Ti)
        self.mode = mode
        self.beta = level1.propagator.beta
        self.dim = level1.generator.dim
        self.quad_tol = quad_tol
        self.oracle_cfg = oracle_cfg or OracleConfig(tol=1e-9, initial_step=0.05)
        # residual generator conjugated one level further: A2
        self.residual_generator = PeeledGenerator(
            level1.generator, level1.propagator, level1.averaged
        )
        self._antider = _BlockAntiderivative(level1.generator, level1.averaged)
        self._RTi = self._antider.value(self.Ti)
        # time-ordered exponential checkpoints, keyed by time
        self._texp_times = [self.Ti]
        self._texp_values = [np.eye(self.dim, dtype=np.complex128)]

    # -- kernel ------------------------------------------------------------

    def kernel(self, t):
        """B(t) = integral over [Ti, t] of (A1 - Abar1^g); hermitian.

        Whole interior intervals cancel exactly, so only the partial
        intervals at both ends contribute.
        """
        B = self._antider.value(t) - self._RTi
        return 0.5 * (B + B.conj().T)

    def conjugated_kernel(self, t):
        """K(t) = U1^{-1}(t) B(t) U1(t)."""
        U1 = self.level1.propagator.evaluate(t)
        return U1.conj().T @ self.kernel(t) @ U1

    def kernel_derivative(self, t):
        """K'(t) = A2(t) + i beta U1^{-1} [Abar1, B] U1 (hermitian)."""
        U1 = self.level1.propagator.evaluate(t)
        B = self.kernel(t)
        Ag = self.level1.averaged.value_at(t)
        comm = Ag @ B - B @ Ag
        A2 = self.residual_generator.evaluate(t)
        return A2 + 1j * self.beta * (U1.conj().T @ comm @ U1)

    def _kernel_derivative_batch(self, ts):
        U1 = self.level1.propagator.evaluate_batch(ts)
        A2 = self.residual_generator.evaluate_batch(ts)
        out = np.empty_like(A2)
        for k, t in enumerate(ts):
            B = self.kernel(t)
            Ag = self.level1.averaged.value_at(t)
            comm = Ag @ B - B @ Ag
            out[k] = A2[k] + 1j * self.beta * (U1[k].conj().T @ comm @ U1[k])
        return out

    # -- map values ---------------------------------------------------------

    def _texp(self, t):
        """Time-ordered exponential of i beta K' from Ti to t, cached."""
        if t < self.Ti - 1e-12:
            raise ValueError("unitary map is built forward from Ti")
        idx = int(np.searchsorted(self._texp_times, t + 1e-15)) - 1
        t_from = self._texp_times[idx]
        U_from = self._texp_values[idx]
        if abs(t - t_from) < 1e-14:
            return U_from
        gen = CallableGenerator(
            lambda s: -self.kernel_derivative(s),
            dim=self.dim,
            norm_bound=self.residual_generator.norm_bound
            + 2 * self.beta * self.level1.averaged.max_norm,
            max_frequency=self.residual_generator.max_frequency,
            batch_fn=lambda ss: -self._kernel_derivative_batch(ss),
        )
        U = oracle_evolve(gen, self.beta, t_from, t, self.oracle_cfg) @ U_from
        pos = int(np.searchsorted(self._texp_times, t))
        self._texp_times.insert(pos, t)
        self._texp_values.insert(pos, U)
        return U

    def value(self, t):
        """The map as a matrix at time t (identity at Ti)."""
        if self.mode == AFFINE:
            K = self.conjugated_kernel(t)
            return np.eye(self.dim, dtype=np.complex128) + 1j * self.beta * K
        return self._texp(t)

    def apply(self, state, t):
        return self.value(t) @ np.asarray(state, dtype=np.complex128)

    def apply_inverse(self, state, t):
        state = np.asarray(state, dtype=np.complex128)
        if self.mode == UNITARY:
            return self.value(t).conj().T @ state
        return np.linalg.solve(self.value(t), state)

    def inverse_value(self, t):
        V = self.value(t)
        if self.mode == UNITARY:
            return V.conj().T
        return np.linalg.inv(V)

    # -- effective generator --------------------------------------------------

    def effective_generator(self, t):
        """Generator of the transformed flow, scaled so coupling is beta^(3/2).

        Unitary mode: hermitian by construction,
            beta^{-1/2} ( U A2 U^{-1} - K'(t) )  with U = map value.
        Affine mode: the three-bracket expression obtained by
        differentiating the transformed coordinate (carries an overall i
        and is not hermitian; kept for direct identity verification).
        """
        sb = self.beta ** 0.5
        A2 = self.residual_generator.evaluate(t)
        if self.mode == UNITARY:
            U = self.value(t)
            return (U @ A2 @ U.conj().T - self.kernel_derivative(t)) / sb
        U1 = self.level1.propagator.evaluate(t)
        B = self.kernel(t)
        Ag = self.level1.averaged.value_at(t)
        U1h = U1.conj().T
        bracket = (-U1h @ Ag @ B @ U1
                   + U1h @ B @ Ag @ U1
                   + (U1h @ B @ U1) @ A2)
        return 1j * sb * (bracket @ self.inverse_value(t))


def build_normal_form(level1, Ti=0.0, mode=UNITARY, **kw):
    if not isinstance(level1, HierarchyLevel) or level1.index < 1:
        raise ValueError("normal form is built on a level-1 hierarchy rung")
    return NormalFormMap(level1, Ti=Ti, mode=mode, **kw)


def apply_normal_form(nf_map, state, t):
    return nf_map.apply(state, t)


def effective_generator(nf_map, t):
    return nf_map.effective_generator(t)


def compose_step(u_first, u_second, nf_map, t):
    """V(t) = U_first(t) U_second(t) Utilde^{-1}(t); maps the transformed
    coordinate back to the original one."""
    return u_first.evaluate(t) @ u_second.evaluate(t) @ nf_map.inverse_value(t)


@dataclass
class EffectiveSystem:
    """One stage of the iterated scheme: a flow i dc/dt = coupling * A(t) c."""

    generator: Generator
    coupling: float
    transform_chain: list = field(default_factory=list)


MAX_SCHEME_DEPTH = 3


def iterate_scheme(base, beta, depth, mode=UNITARY, horizon_blocks=4,
                   quadrature_order=8, allow_large_beta=False):
    """Iterate averaging + normal form, re-deriving T0 from each coupling.

    Stage m carries coupling beta^((3/2)^m); its averaging interval is
    coupling^(-1/2). Depth is capped: every stage multiplies the cost of
    evaluating the previous stage's effective generator.
    """
    if not 1 <= depth <= MAX_SCHEME_DEPTH:
        raise ValueError(f"depth must be in [1, {MAX_SCHEME_DEPTH}]")
    stages = [EffectiveSystem(generator=base, coupling=float(beta))]
    for _ in range(depth - 1):
        cur = stages[-1]
        T0 = cur.coupling ** -0.5
        cfg = AveragingConfig(
            beta=cur.coupling, horizon=horizon_blocks * T0,
            quadrature_order=quadrature_order,
            allow_large_beta=allow_large_beta,
        )
        lv0, lv1 = build_hierarchy(cur.generator, cfg, depth=1)
        nf = build_normal_form(lv1, mode=mode)
        transform = _StageTransform(lv0.propagator, lv1.propagator, nf)
        eff = CallableGenerator(
            nf.effective_generator,
            dim=base.dim,
            norm_bound=_sample_norm_bound(nf, cfg),
            max_frequency=cur.generator.max_frequency,
        )
        stages.append(EffectiveSystem(
            generator=eff,
            coupling=cur.coupling ** 1.5,
            transform_chain=cur.transform_chain + [transform],
        ))
    return stages


class _StageTransform:
    """Callable V(t) for one stage of the iterated scheme."""

    def __init__(self, u_first, u_second, nf_map):
        self.u_first = u_first
        self.u_second = u_second
        self.nf_map = nf_map

    def __call__(self, t):
        return compose_step(self.u_first, self.u_second, self.nf_map, t)


def _sample_norm_bound(nf, cfg, samples=5):
    ts = np.linspace(0.35 * cfg.T0, min(cfg.horizon, 2.6 * cfg.T0), samples)
    m = max(spectral_norm(nf.effective_generator(t)) for t in ts)
    return 2.0 * m + 1e-12
