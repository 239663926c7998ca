"""Interval averaging of time-dependent generators.

Implements the hierarchy: block averages over intervals of length T0, the
piecewise-constant global average, the ordered-product propagator of the
averaged flow, conjugation of the residual into the next-level generator
("peel-off"), and running-integral diagnostics.

Interval convention is left-closed, [n*T0, (n+1)*T0), everywhere; the
top end of the materialized horizon is treated as belonging to the last
block so propagators remain evaluatable there.
"""

from dataclasses import dataclass, field

import numpy as np

from .generators import Generator, PeeledGenerator, _check_time
from .matcore import check_hermitian, spectral_norm
from .quadrature import integrate_matrix

MAX_HIERARCHY_DEPTH = 4
_SNAP = 1e-9  # relative block-boundary snapping


@dataclass(frozen=True)
class AveragingConfig:
    """Averaging parameters.

    T0 defaults to beta^(-1/2); an explicit override is recorded in
    ``t0_overridden``. The horizon defaults to 10/beta.
    """

    beta: float
    T0: float | None = None
    quadrature_order: int = 8
    horizon: float | None = None
    quad_tol: float = 1e-13
    allow_large_beta: bool = False
    t0_overridden: bool = field(init=False, default=False)

    def __post_init__(self):
        if not 0.0 < self.beta:
            raise ValueError("beta must be positive")
        if self.beta > 0.1 and not self.allow_large_beta:
            raise ValueError("beta must be <= 0.1 (set allow_large_beta to override)")
        if self.T0 is None:
            object.__setattr__(self, "T0", self.beta ** -0.5)
        else:
            if self.T0 <= 0:
                raise ValueError("T0 must be positive")
            object.__setattr__(self, "t0_overridden", True)
        if self.horizon is None:
            object.__setattr__(self, "horizon", 10.0 / self.beta)
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

    @property
    def n_blocks(self):
        return int(np.ceil(self.horizon / self.T0 - _SNAP))


def _block_index(t, T0, n_blocks):
    """Left-closed block index with boundary snapping; clamps the top end."""
    x = t / T0
    n = int(np.floor(x))
    if x - n > 1.0 - _SNAP:
        n += 1
    if n < 0:
        if x > -_SNAP:
            n = 0
        else:
            raise ValueError("negative time")
    if n >= n_blocks:
        if x <= n_blocks + _SNAP:
            n = n_blocks - 1
        else:
            raise ValueError(
                f"t = {t:.6g} lies beyond the materialized horizon {n_blocks * T0:.6g}"
            )
    return n


class PiecewiseConstantGenerator(Generator):
    """Generator that is constant on each averaging interval."""

    def __init__(self, block_values, T0):
        if len(block_values) == 0:
            raise ValueError("need at least one block")
        self.block_values = [np.asarray(B, dtype=np.complex128) for B in block_values]
        self.T0 = float(T0)
        self.dim = self.block_values[0].shape[0]
        norms = [spectral_norm(B) for B in self.block_values]
        self.max_norm = float(max(norms))
        self.norm_bound = self.max_norm + 1e-15
        self.max_frequency = 0.0

    @property
    def n_blocks(self):
        return len(self.block_values)

    def value_at(self, t):
        return self.block_values[_block_index(t, self.T0, self.n_blocks)]

    def value_batch(self, ts):
        return np.stack([self.value_at(t) for t in np.asarray(ts, dtype=float)])

    # Generator interface
    def evaluate(self, t):
        _check_time(t)
        return self.value_at(t)

    def evaluate_batch(self, ts):
        return self.value_batch(ts)


class PiecewisePropagator:
    """Ordered product of per-interval exponentials of a piecewise generator.

    U(t) = exp(-i beta Abar_n (t - n T0)) * ... * exp(-i beta Abar_0 T0)
    for t in the n-th interval. The inverse is the reversed product of
    inverse factors, which for unitary factors is the conjugate transpose.
    Per-block eigendecompositions and prefix products are cached so a
    single evaluation is O(1) in the number of blocks.
    """

    def __init__(self, averaged, beta):
        self.averaged = averaged
        self.beta = float(beta)
        self.T0 = averaged.T0
        self.dim = averaged.dim
        self._eigs = []
        N = self.dim
        prefix = [np.eye(N, dtype=np.complex128)]
        for B in averaged.block_values:
            Bh = 0.5 * (B + B.conj().T)
            w, V = np.linalg.eigh(Bh)
            self._eigs.append((w, V))
            F = (V * np.exp(-1j * self.beta * self.T0 * w)) @ V.conj().T
            prefix.append(F @ prefix[-1])
        self.prefix_products = prefix  # prefix_products[n] covers blocks 0..n-1

    @property
    def block_values(self):
        return self.averaged.block_values

    @property
    def n_blocks(self):
        return self.averaged.n_blocks

    def evaluate(self, t):
        n = _block_index(t, self.T0, self.n_blocks)
        tau = max(t - n * self.T0, 0.0)
        w, V = self._eigs[n]
        E = (V * np.exp(-1j * self.beta * tau * w)) @ V.conj().T
        return E @ self.prefix_products[n]

    def inverse(self, t):
        return self.evaluate(t).conj().T

    def evaluate_batch(self, ts):
        ts = np.asarray(ts, dtype=float)
        out = np.empty((ts.size, self.dim, self.dim), dtype=np.complex128)
        idx = np.array([_block_index(t, self.T0, self.n_blocks) for t in ts])
        for n in np.unique(idx):
            sel = np.flatnonzero(idx == n)
            tau = np.maximum(ts[sel] - n * self.T0, 0.0)
            w, V = self._eigs[n]
            phases = np.exp(-1j * self.beta * np.outer(tau, w))
            E = np.einsum("ab,mb,cb->mac", V, phases, V.conj())
            out[sel] = E @ self.prefix_products[n]
        return out

    def apply(self, state, t):
        return self.evaluate(t) @ np.asarray(state, dtype=np.complex128)


def block_average(gen, cfg, n):
    """Mean of the generator over the n-th interval, by quadrature."""
    if n < 0:
        raise ValueError("block index must be nonnegative")
    a, b = n * cfg.T0, (n + 1) * cfg.T0
    I, _ = integrate_matrix(
        gen.evaluate_batch, a, b,
        max_frequency=gen.max_frequency,
        order=cfg.quadrature_order,
        abs_tol=cfg.quad_tol * cfg.T0,
    )
    avg = I / cfg.T0
    check_hermitian(avg, rtol=1e-10, what=f"block average {n}")
    return 0.5 * (avg + avg.conj().T)


def global_average(gen, cfg):
    """Piecewise-constant averaged generator covering [0, horizon]."""
    blocks = [block_average(gen, cfg, n) for n in range(cfg.n_blocks)]
    return PiecewiseConstantGenerator(blocks, cfg.T0)


def build_propagator(averaged, beta):
    return PiecewisePropagator(averaged, beta)


def residual_integral(gen, averaged, t, *, order=8, quad_tol=1e-13):
    """Running integral of (A - Abar^g) from 0 to t.

    Whole intervals integrate to zero by the definition of the block
    average, so only the partial block containing t contributes; the
    computation is confined to [n*T0, t]. Exactly at an interval boundary
    the left limit is returned (the full previous block), which measures
    the whole-block cancellation defect instead of a trivial zero.
    """
    T0 = averaged.T0
    k = round(t / T0)
    if k >= 1 and abs(t - k * T0) <= _SNAP * max(T0, abs(t)):
        n, upper = k - 1, k * T0
    else:
        n = _block_index(t, T0, averaged.n_blocks)
        upper = t
    lower = n * T0
    if upper <= lower:
        return np.zeros((gen.dim, gen.dim), dtype=np.complex128)
    I, _ = integrate_matrix(
        gen.evaluate_batch, lower, upper,
        max_frequency=gen.max_frequency, order=order,
        abs_tol=quad_tol * T0,
    )
    return I - (upper - lower) * averaged.block_values[n]


@dataclass
class HierarchyLevel:
    """One rung of the averaging hierarchy."""

    index: int
    generator: Generator
    averaged: PiecewiseConstantGenerator
    propagator: PiecewisePropagator
    avg_magnitude: float
    residual_integral_bound: float | None = None


def residual_bound(level, cfg, samples=12):
    """Observed max of the running residual integral over mid-block times."""
    nb = min(level.averaged.n_blocks, samples)
    picks = np.linspace(0, level.averaged.n_blocks - 1, nb).astype(int)
    best = 0.0
    for n in picks:
        t = (n + 0.5) * cfg.T0
        R = residual_integral(level.generator, level.averaged, t,
                              order=cfg.quadrature_order, quad_tol=cfg.quad_tol)
        best = max(best, spectral_norm(R))
    return best


def build_level0(gen, cfg, with_diagnostics=False):
    averaged = global_average(gen, cfg)
    level = HierarchyLevel(
        index=0,
        generator=gen,
        averaged=averaged,
        propagator=build_propagator(averaged, cfg.beta),
        avg_magnitude=averaged.max_norm,
    )
    if with_diagnostics:
        level.residual_integral_bound = residual_bound(level, cfg)
    return level


def peel_step(level, cfg, with_diagnostics=False):
    """Conjugate the residual by the averaged flow to get the next level."""
    nxt_gen = PeeledGenerator(level.generator, level.propagator, level.averaged)
    averaged = global_average(nxt_gen, cfg)
    nxt = HierarchyLevel(
        index=level.index + 1,
        generator=nxt_gen,
        averaged=averaged,
        propagator=build_propagator(averaged, cfg.beta),
        avg_magnitude=averaged.max_norm,
    )
    if with_diagnostics:
        nxt.residual_integral_bound = residual_bound(nxt, cfg)
    return nxt


def build_hierarchy(gen, cfg, depth, with_diagnostics=False):
    """Levels 0..depth; cost multiplies per level, so depth is capped."""
    if depth < 0 or depth > MAX_HIERARCHY_DEPTH:
        raise ValueError(f"depth must be in [0, {MAX_HIERARCHY_DEPTH}]")
    levels = [build_level0(gen, cfg, with_diagnostics)]
    for _ in range(depth):
        levels.append(peel_step(levels[-1], cfg, with_diagnostics))
    return levels


def integrate_blockwise(gen, a, b, T0, *, order=8, abs_tol=1e-12):
    """Integrate a generator over [a, b], splitting at interval boundaries.

    Peeled generators jump at multiples of T0 (the piecewise average
    switches value there); integrating each smooth piece separately keeps
    the panel-doubling error estimate honest.
    """
    if b < a:
        return -integrate_blockwise(gen, b, a, T0, order=order, abs_tol=abs_tol)
    edges = [a]
    k = int(np.floor(a / T0 + _SNAP)) + 1
    while k * T0 < b - _SNAP * T0:
        if k * T0 > a + _SNAP * T0:
            edges.append(k * T0)
        k += 1
    edges.append(b)
    total = np.zeros((gen.dim, gen.dim), dtype=np.complex128)
    for lo, hi in zip(edges[:-1], edges[1:]):
        I, _ = integrate_matrix(gen.evaluate_batch, lo, hi,
                                max_frequency=gen.max_frequency,
                                order=order, abs_tol=abs_tol)
        total += I
    return total


def integrated_generator(level, t, *, order=8, quad_tol=1e-12):
    """Running integral of the level generator from 0 to t, with its norm."""
    if t == 0:
        Z = np.zeros((level.generator.dim,) * 2, dtype=np.complex128)
        return Z, 0.0
    I = integrate_blockwise(level.generator, 0.0, t, level.averaged.T0,
                            order=order,
                            abs_tol=quad_tol * max(1.0, level.averaged.T0))
    return I, spectral_norm(I)


def solve_averaged(state0, propagator, t):
    """Averaged approximation of the flow applied to a state."""
    state0 = np.asarray(state0, dtype=np.complex128)
    if state0.shape != (propagator.dim,):
        raise ValueError("state dimension mismatch")
    return propagator.apply(state0, t)
