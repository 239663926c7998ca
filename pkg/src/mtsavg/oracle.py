"""Independent high-accuracy reference evolution.

Solves i dc/dt = beta A(t) c by adaptive sub-stepping with one hermitian
exponential per sub-step (exponential midpoint rule). Each sub-step is
exactly unitary, so norm conservation is structural and accuracy is purely
a matter of step control: step-doubling Richardson comparison, order 2.

Generators built from trigonometric term arrays dispatch to the compiled
kernels; anything else runs the same algorithm through Python callbacks.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .matcore import NumericDomainError

_SAFETY = 0.9
_GROW_MAX = 2.0
_SHRINK_MIN = 0.3


class OracleError(RuntimeError):
    """Step budget exhausted; carries the error estimate accumulated so far."""

    def __init__(self, message, achieved):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


@dataclass(frozen=True)
class OracleConfig:
    tol: float = 1e-9          # target local error per unit time
    max_steps: int = 5_000_000
    initial_step: float = 0.1

    def __post_init__(self):
        if not 1e-14 <= self.tol <= 1e-6:
            raise ValueError("tol must lie in [1e-14, 1e-6]")
        if self.max_steps <= 0 or self.initial_step <= 0:
            raise ValueError("step bounds must be positive")


def _evolve_generic(evaluate_batch, dim, beta, t0, t1, tol, h0, max_steps):
    """Adaptive midpoint loop over an arbitrary batched evaluation callback."""
    U = np.eye(dim, dtype=np.complex128)
    if t1 <= t0:
        return U, 0.0, 0, True
    expm = _kernels.expm_herm
    t = t0
    h = min(h0, t1 - t0)
    err_acc = 0.0
    nsteps = 0
    attempts = 0
    tiny = 1e-12 * max(1.0, abs(t0), abs(t1))
    hmin = max(1e-13 * (t1 - t0), tiny)
    rejected = False
    while t1 - t > tiny:
        rem = t1 - t
        h = min(h, rem)
        if h < rem < 2.0 * h:  # split the tail evenly; never stretch h upward
            h = 0.5 * rem
        A = evaluate_batch(np.array([t + 0.25 * h, t + 0.5 * h, t + 0.75 * h]))
        U_full = expm(A[1], beta * h)
        U_half = expm(A[2], beta * 0.5 * h) @ expm(A[0], beta * 0.5 * h)
        est = float(np.linalg.norm(U_half - U_full)) / 3.0
        attempts += 1
        if attempts > max_steps:
            return U, err_acc, nsteps, False
        if est <= tol * h or h <= hmin:
            U = U_half @ U
            t = t1 if t1 - (t + h) <= tiny else t + h
            err_acc += est
            nsteps += 1
            fac = _SAFETY * (tol * h / max(est, 1e-300)) ** 0.5
            if rejected:
                fac = min(fac, 1.0)
                rejected = False
            h *= min(_GROW_MAX, max(_SHRINK_MIN, fac))
        else:
            rejected = True
            h *= max(_SHRINK_MIN, _SAFETY * (tol * h / est) ** 0.5)
    return U, err_acc, nsteps, True


def evolve_detailed(gen, beta, t0, t1, cfg=None):
    """Propagator over [t0, t1] plus (error_estimate, accepted_steps)."""
    cfg = cfg or OracleConfig()
    if not (np.isfinite(t0) and np.isfinite(t1)):
        raise NumericDomainError("non-finite evolution endpoints")
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    ta = gen.term_arrays()
    if ta is not None:
        amps, omegas = ta
        U, err, nsteps, ok = _kernels.evolve_adaptive(
            np.ascontiguousarray(amps, dtype=np.complex128),
            np.ascontiguousarray(omegas, dtype=np.float64),
            float(beta), float(t0), float(t1),
            cfg.tol, cfg.initial_step, cfg.max_steps,
        )
    else:
        U, err, nsteps, ok = _evolve_generic(
            gen.evaluate_batch, gen.dim, beta, t0, t1,
            cfg.tol, cfg.initial_step, cfg.max_steps,
        )
    if not ok:
        raise OracleError(
            f"step budget {cfg.max_steps} exhausted before reaching t = {t1:.6g}",
            achieved=err,
        )
    return U, err, nsteps


def evolve(gen, beta, t0, t1, cfg=None):
    """Time-ordered propagator of i dc/dt = beta A(t) c over [t0, t1]."""
    return evolve_detailed(gen, beta, t0, t1, cfg)[0]


def evolve_state(gen, beta, c0, t0, t1, cfg=None):
    c0 = np.asarray(c0, dtype=np.complex128)
    if c0.shape != (gen.dim,):
        raise ValueError("state dimension mismatch")
    return evolve(gen, beta, t0, t1, cfg) @ c0


def evolve_fixed_step(gen, beta, t0, t1, n_steps):
    """Fixed-step midpoint propagator; used for order verification."""
    if n_steps <= 0:
        raise ValueError("n_steps must be positive")
    ta = gen.term_arrays()
    if ta is not None:
        amps, omegas = ta
        return _kernels.evolve_fixed(
            np.ascontiguousarray(amps, dtype=np.complex128),
            np.ascontiguousarray(omegas, dtype=np.float64),
            float(beta), float(t0), float(t1), int(n_steps),
        )
    h = (t1 - t0) / n_steps
    U = np.eye(gen.dim, dtype=np.complex128)
    for k in range(n_steps):
        A = gen.evaluate(t0 + (k + 0.5) * h)
        U = _kernels.expm_herm(A, beta * h) @ U
    return U


def recover_generator(flow_samples, h):
    """Recover the generator from uniformly spaced flow samples.

    Central differences: A(t) ~ i [U(t+h) - U(t-h)] / (2h) U(t)^{-1},
    accurate to O(h^2) at interior sample points. Returns a list of
    (t, matrix) for the interior points.
    """
    if len(flow_samples) < 3:
        raise ValueError("need at least three samples")
    ts = np.array([s[0] for s in flow_samples], dtype=float)
    gaps = np.diff(ts)
    if np.any(np.abs(gaps - h) > 1e-9 * max(h, 1.0)):
        raise ValueError("samples must lie on a uniform grid with spacing h")
    out = []
    for k in range(1, len(flow_samples) - 1):
        t, Uk = flow_samples[k]
        dU = (flow_samples[k + 1][1] - flow_samples[k - 1][1]) / (2.0 * h)
        out.append((t, 1j * dU @ np.linalg.inv(Uk)))
    return out
