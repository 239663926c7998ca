"""Time-dependent hermitian generator families.

A generator is anything with ``dim``, ``norm_bound``, ``evaluate(t)``,
``evaluate_batch(ts)`` and ``max_frequency``; the trigonometric family also
exposes raw term arrays so hot loops can bypass Python dispatch.

The trigonometric ("quasiperiodic") generator is

    A(t) = sum_j ( M_j exp(i w_j t) + h.c. ),

hermitian by construction for arbitrary complex M_j. Frequency splitting
partitions the term list by the smallness test ``w * T0 < theta`` into a
slow part (small divisors live here) and an order-one-frequency part.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .matcore import NumericDomainError, check_hermitian, spectral_norm


@dataclass(frozen=True)
class QuasiperiodicTerm:
    """One trigonometric term M e^{i w t} (its h.c. partner is implicit)."""

    amplitude: np.ndarray
    omega: float
    index: int = 1

    def __post_init__(self):
        amp = np.asarray(self.amplitude, dtype=np.complex128)
        if amp.ndim != 2 or amp.shape[0] != amp.shape[1]:
            raise ValueError("term amplitude must be a square matrix")
        object.__setattr__(self, "amplitude", amp)
        if not np.isfinite(self.omega):
            raise NumericDomainError("non-finite term frequency")


@dataclass(frozen=True)
class DecayProfile:
    """Envelope ||M_j|| <= c * j^(-sigma); delta stores the j^(-1-delta) variant."""

    c: float
    sigma: float
    delta: float | None = None


@dataclass(frozen=True)
class SplitConfig:
    """Threshold for the slow/fast partition: slow iff omega * T0 < theta."""

    theta: float
    T0: float

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if self.T0 <= 0.0:
            raise ValueError("T0 must be positive")


def _check_time(t):
    if not np.isfinite(t):
        raise NumericDomainError("non-finite evaluation time")
    if t < -1e-12:
        raise NumericDomainError("evaluation time must be nonnegative")
    return float(t)


class Generator:
    """Base class; subclasses fill dim, norm_bound, max_frequency, evaluate."""

    dim = None
    norm_bound = np.inf
    max_frequency = 0.0

    def evaluate(self, t):
        raise NotImplementedError

    def evaluate_batch(self, ts):
        ts = np.asarray(ts, dtype=float)
        out = np.empty((ts.size, self.dim, self.dim), dtype=np.complex128)
        for k, t in enumerate(ts):
            out[k] = self.evaluate(t)
        return out

    def term_arrays(self):
        """(amps, omegas) for trigonometric generators, else None."""
        return None


class ConstantGenerator(Generator):
    """A(t) = A0 for a fixed hermitian A0."""

    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=np.complex128)
        check_hermitian(matrix, what="constant generator")
        self.matrix = 0.5 * (matrix + matrix.conj().T)
        self.dim = matrix.shape[0]
        self.norm_bound = spectral_norm(self.matrix) + 1e-15
        self.max_frequency = 0.0

    def evaluate(self, t):
        _check_time(t)
        return self.matrix.copy()

    def evaluate_batch(self, ts):
        ts = np.asarray(ts, dtype=float)
        return np.broadcast_to(self.matrix, (ts.size, self.dim, self.dim)).copy()

    def term_arrays(self):
        return 0.5 * self.matrix[None, :, :], np.zeros(1)


class QuasiperiodicGenerator(Generator):
    """Finite trigonometric sum with optional decay-envelope enforcement."""

    def __init__(self, terms, decay=None, strict=False):
        if len(terms) == 0:
            raise ValueError("need at least one term")
        dims = {t.amplitude.shape[0] for t in terms}
        if len(dims) != 1:
            raise ValueError("terms have mismatched dimensions")
        self.terms = tuple(terms)
        self.decay = decay
        self.dim = dims.pop()
        self._amps = np.stack([t.amplitude for t in terms])
        self._omegas = np.array([t.omega for t in terms], dtype=float)
        term_norms = [spectral_norm(t.amplitude) for t in terms]
        self.norm_bound = 2.0 * float(sum(term_norms)) + 1e-15
        self.max_frequency = float(np.max(np.abs(self._omegas), initial=0.0))
        if strict:
            if decay is None:
                raise ValueError("strict mode requires a decay profile")
            for term, nrm in zip(terms, term_norms):
                bound = decay.c * term.index ** (-decay.sigma)
                if nrm > bound * (1 + 1e-12):
                    raise ValueError(
                        f"term {term.index} violates decay envelope: "
                        f"||M||={nrm:.3e} > {bound:.3e}"
                    )

    def evaluate(self, t):
        t = _check_time(t)
        return _kernels.qp_eval(self._amps, self._omegas, t)

    def evaluate_batch(self, ts):
        ts = np.asarray(ts, dtype=float)
        return _kernels.qp_eval_batch(self._amps, self._omegas, ts)

    def term_arrays(self):
        return self._amps, self._omegas


class ScalarDrivenGenerator(Generator):
    """A(t) = f(t) * H for hermitian H and a scalar envelope f.

    Exercises the generic (callback) evolution path; with a known
    antiderivative F of f the flow has the closed form exp(-i beta F(t) H).
    """

    def __init__(self, matrix, envelope, antiderivative=None, max_frequency=1.0):
        matrix = np.asarray(matrix, dtype=np.complex128)
        check_hermitian(matrix, what="scalar-driven generator")
        self.matrix = 0.5 * (matrix + matrix.conj().T)
        self.envelope = envelope
        self.antiderivative = antiderivative
        self.dim = matrix.shape[0]
        self.norm_bound = spectral_norm(self.matrix) + 1e-15
        self.max_frequency = max_frequency

    def evaluate(self, t):
        t = _check_time(t)
        return self.envelope(t) * self.matrix

    def evaluate_batch(self, ts):
        ts = np.asarray(ts, dtype=float)
        f = np.array([self.envelope(t) for t in ts], dtype=float)
        return f[:, None, None] * self.matrix[None, :, :]


class CallableGenerator(Generator):
    """Wrap an arbitrary t -> matrix map as a generator."""

    def __init__(self, fn, dim, norm_bound, max_frequency=0.0, batch_fn=None):
        self.fn = fn
        self.dim = dim
        self.norm_bound = norm_bound
        self.max_frequency = max_frequency
        self._batch_fn = batch_fn

    def evaluate(self, t):
        _check_time(t)
        return self.fn(t)

    def evaluate_batch(self, ts):
        if self._batch_fn is not None:
            return self._batch_fn(np.asarray(ts, dtype=float))
        return super().evaluate_batch(ts)


class PeeledGenerator(Generator):
    """Next-level generator U^{-1}(t) [A(t) - Abar(t)] U(t).

    ``propagator`` and ``averaged`` must come from the same averaging pass
    over ``base``; hermiticity is inherited (unitary conjugation of a
    hermitian difference).
    """

    def __init__(self, base, propagator, averaged):
        if base.dim != propagator.dim or base.dim != averaged.dim:
            raise ValueError("mismatched dimensions between base, propagator, averaged")
        self.base = base
        self.propagator = propagator
        self.averaged = averaged
        self.dim = base.dim
        self.norm_bound = 2.0 * base.norm_bound
        # conjugation by the averaged flow adds only O(beta) frequency content
        self.max_frequency = base.max_frequency + propagator.beta

    def evaluate(self, t):
        t = _check_time(t)
        U = self.propagator.evaluate(t)
        diff = self.base.evaluate(t) - self.averaged.value_at(t)
        return U.conj().T @ diff @ U

    def evaluate_batch(self, ts):
        ts = np.asarray(ts, dtype=float)
        A = self.base.evaluate_batch(ts)
        G = self.averaged.value_batch(ts)
        U = self.propagator.evaluate_batch(ts)
        Uh = U.conj().transpose(0, 2, 1)
        return Uh @ (A - G) @ U


def phase_average_factor(x):
    """(e^{ix} - 1)/(ix), the mean of e^{i w t} over an interval with x = w*T.

    Switches to the 3-term series 1 + ix/2 - x^2/6 below |x| = 1e-8 to
    avoid cancellation.
    """
    if abs(x) < 1e-8:
        return 1.0 + 0.5j * x - x * x / 6.0
    return (np.exp(1j * x) - 1.0) / (1j * x)


def analytic_block_average(term, T0, n):
    """Closed-form average of M e^{i w t} over [n*T0, (n+1)*T0].

    Returns the one-sided value (no h.c.); continuous w -> 0 limit gives M.
    """
    if T0 <= 0:
        raise ValueError("T0 must be positive")
    x = term.omega * T0
    return term.amplitude * (np.exp(1j * term.omega * n * T0) * phase_average_factor(x))


def analytic_generator_block_average(gen, T0, n):
    """Closed-form block average of a trigonometric generator (with h.c.)."""
    out = np.zeros((gen.dim, gen.dim), dtype=np.complex128)
    for term in gen.terms:
        out += analytic_block_average(term, T0, n)
    return out + out.conj().T


def split_frequencies(gen, cfg):
    """Partition terms into (slow, fast) by the test omega * T0 < theta.

    Either part may be empty (returned as None); term order and indices are
    preserved so re-summing the parts reproduces the input exactly.
    """
    slow, fast = [], []
    for term in gen.terms:
        if abs(term.omega) * cfg.T0 < cfg.theta:
            slow.append(term)
        else:
            fast.append(term)
    mk = lambda ts: QuasiperiodicGenerator(ts, decay=gen.decay) if ts else None
    return mk(slow), mk(fast)


# ---------------------------------------------------------------------------
# generator definition files
# ---------------------------------------------------------------------------

def generator_to_dict(gen):
    """Serializable form of a trigonometric generator (fixed field names)."""
    doc = {
        "dim": gen.dim,
        "terms": [
            {
                "omega": float(t.omega),
                "amplitude_re": t.amplitude.real.tolist(),
                "amplitude_im": t.amplitude.imag.tolist(),
            }
            for t in gen.terms
        ],
    }
    if gen.decay is not None:
        doc["decay"] = {"c": gen.decay.c, "sigma": gen.decay.sigma}
        if gen.decay.delta is not None:
            doc["decay"]["delta"] = gen.decay.delta
    return doc


def generator_from_dict(doc, strict=False):
    dim = int(doc["dim"])
    terms = []
    for k, td in enumerate(doc["terms"]):
        amp = np.asarray(td["amplitude_re"], dtype=float) + 1j * np.asarray(
            td["amplitude_im"], dtype=float
        )
        if amp.shape != (dim, dim):
            raise ValueError(f"term {k}: amplitude shape {amp.shape} != ({dim}, {dim})")
        terms.append(QuasiperiodicTerm(amplitude=amp, omega=float(td["omega"]), index=k + 1))
    decay = None
    if "decay" in doc:
        dd = doc["decay"]
        decay = DecayProfile(c=float(dd["c"]), sigma=float(dd["sigma"]),
                             delta=dd.get("delta"))
    return QuasiperiodicGenerator(terms, decay=decay, strict=strict)


def save_generator(gen, path):
    with open(path, "w") as fh:
        json.dump(generator_to_dict(gen), fh, indent=1)


def load_generator(path, strict=False):
    with open(path) as fh:
        return generator_from_dict(json.load(fh), strict=strict)
