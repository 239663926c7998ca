"""Hot numeric kernels with optional numba acceleration.

Two implementations of the same algorithms live here: plain numpy
(`*_py`) and numba-jitted loops. The active set is chosen once at import
time: setting the environment variable ``MTSAVG_NO_NUMBA=1`` forces the
numpy path, as does a missing numba installation. ``USING_NUMBA`` records
the outcome; `benchmarks/bench_kernels.py` compares the two paths.

All kernels work on term arrays of a trigonometric generator sum

    A(t) = sum_j M_j exp(i w_j t) + h.c.

with ``amps`` of shape (J, N, N) complex and ``omegas`` of shape (J,).
"""

import os

import numpy as np

_flag = os.environ.get("MTSAVG_NO_NUMBA", "").strip().lower()
_force_numpy = _flag not in ("", "0", "false", "no")

USING_NUMBA = False
if not _force_numpy:
    try:
        from numba import njit

        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USING_NUMBA = False

# Step controller constants (order-2 local extrapolation).
_SAFETY = 0.9
_GROW_MAX = 2.0
_SHRINK_MIN = 0.3


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def qp_eval_py(amps, omegas, t):
    """A(t) = sum_j amps[j] e^{i omegas[j] t} + h.c. at a single time."""
    ph = np.exp(1j * omegas * t)
    out = np.tensordot(ph, amps, axes=(0, 0))
    return out + out.conj().T


def qp_eval_batch_py(amps, omegas, ts):
    """Vectorized evaluation over a 1-d array of times; returns (m, N, N)."""
    ph = np.exp(1j * np.outer(ts, omegas))
    out = np.tensordot(ph, amps, axes=(1, 0))
    return out + out.conj().transpose(0, 2, 1)


def expm_herm_py(H, s):
    """exp(-i s H) for hermitian H via eigendecomposition (exactly unitary)."""
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * s * w)) @ V.conj().T


def evolve_fixed_py(amps, omegas, beta, t0, t1, nsteps):
    """Fixed-step exponential-midpoint propagator over [t0, t1]."""
    h = (t1 - t0) / nsteps
    N = amps.shape[1]
    U = np.eye(N, dtype=np.complex128)
    for k in range(nsteps):
        tm = t0 + (k + 0.5) * h
        A = qp_eval_py(amps, omegas, tm)
        U = expm_herm_py(A, beta * h) @ U
    return U


def evolve_adaptive_py(amps, omegas, beta, t0, t1, tol, h0, max_steps):
    """Adaptive exponential-midpoint propagator with step-doubling control.

    Each trial step compares one midpoint exponential against two half
    steps; the Richardson estimate ``|U_half - U_full|_F / 3`` is accepted
    when below ``tol * h`` (tol is an error budget per unit time). Every
    factor is exactly unitary, so norm conservation is structural.

    Returns (U, accumulated_error_estimate, accepted_steps, converged).
    """
    N = amps.shape[1]
    U = np.eye(N, dtype=np.complex128)
    if t1 <= t0:
        return U, 0.0, 0, True
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
        A_mid = qp_eval_py(amps, omegas, t + 0.5 * h)
        U_full = expm_herm_py(A_mid, beta * h)
        A_q1 = qp_eval_py(amps, omegas, t + 0.25 * h)
        A_q3 = qp_eval_py(amps, omegas, t + 0.75 * h)
        U_half = expm_herm_py(A_q3, beta * 0.5 * h) @ expm_herm_py(A_q1, beta * 0.5 * h)
        est = np.linalg.norm(U_half - U_full) / 3.0
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
            fac = _SAFETY * (tol * h / est) ** 0.5
            h *= max(_SHRINK_MIN, fac)
    return U, err_acc, nsteps, True


# ---------------------------------------------------------------------------
# numba-jitted variants (same algorithms, explicit loops)
# ---------------------------------------------------------------------------

if USING_NUMBA:

    @njit(cache=True)
    def _qp_eval_nb(amps, omegas, t):
        J, N = amps.shape[0], amps.shape[1]
        out = np.zeros((N, N), dtype=np.complex128)
        for j in range(J):
            ph = np.exp(1j * omegas[j] * t)
            for a in range(N):
                for b in range(N):
                    out[a, b] += amps[j, a, b] * ph
        return out + out.conj().T

    @njit(cache=True)
    def _qp_eval_batch_nb(amps, omegas, ts):
        m = ts.shape[0]
        N = amps.shape[1]
        out = np.empty((m, N, N), dtype=np.complex128)
        for k in range(m):
            out[k] = _qp_eval_nb(amps, omegas, ts[k])
        return out

    @njit(cache=True)
    def _expm_herm_nb(H, s):
        w, V = np.linalg.eigh(H)
        ph = np.exp(-1j * s * w)
        return (V * ph) @ V.conj().T

    @njit(cache=True)
    def _evolve_fixed_nb(amps, omegas, beta, t0, t1, nsteps):
        h = (t1 - t0) / nsteps
        N = amps.shape[1]
        U = np.eye(N, dtype=np.complex128)
        for k in range(nsteps):
            tm = t0 + (k + 0.5) * h
            A = _qp_eval_nb(amps, omegas, tm)
            U = _expm_herm_nb(A, beta * h) @ U
        return U

    @njit(cache=True)
    def _evolve_adaptive_nb(amps, omegas, beta, t0, t1, tol, h0, max_steps):
        N = amps.shape[1]
        U = np.eye(N, dtype=np.complex128)
        if t1 <= t0:
            return U, 0.0, 0, True
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
            if h > rem:
                h = rem
            if h < rem < 2.0 * h:
                h = 0.5 * rem
            A_mid = _qp_eval_nb(amps, omegas, t + 0.5 * h)
            U_full = _expm_herm_nb(A_mid, beta * h)
            A_q1 = _qp_eval_nb(amps, omegas, t + 0.25 * h)
            A_q3 = _qp_eval_nb(amps, omegas, t + 0.75 * h)
            U_half = _expm_herm_nb(A_q3, beta * 0.5 * h) @ _expm_herm_nb(A_q1, beta * 0.5 * h)
            est = np.linalg.norm(U_half - U_full) / 3.0
            attempts += 1
            if attempts > max_steps:
                return U, err_acc, nsteps, False
            if est <= tol * h or h <= hmin:
                U = U_half @ U
                if t1 - (t + h) <= tiny:
                    t = t1
                else:
                    t = t + h
                err_acc += est
                nsteps += 1
                fac = _SAFETY * (tol * h / max(est, 1e-300)) ** 0.5
                if rejected:
                    fac = min(fac, 1.0)
                    rejected = False
                f = min(_GROW_MAX, max(_SHRINK_MIN, fac))
                h *= f
            else:
                rejected = True
                fac = _SAFETY * (tol * h / est) ** 0.5
                h *= max(_SHRINK_MIN, fac)
        return U, err_acc, nsteps, True

    qp_eval = _qp_eval_nb
    qp_eval_batch = qp_eval_batch_py  # numpy tensordot wins for batches
    expm_herm = _expm_herm_nb
    evolve_fixed = _evolve_fixed_nb
    evolve_adaptive = _evolve_adaptive_nb
else:
    qp_eval = qp_eval_py
    qp_eval_batch = qp_eval_batch_py
    expm_herm = expm_herm_py
    evolve_fixed = evolve_fixed_py
    evolve_adaptive = evolve_adaptive_py


def warmup():
    """Trigger jit compilation once (no-op on the numpy path)."""
    amps = np.zeros((1, 2, 2), dtype=np.complex128)
    omegas = np.zeros(1)
    qp_eval(amps, omegas, 0.0)
    expm_herm(np.eye(2, dtype=np.complex128), 0.1)
    evolve_fixed(amps, omegas, 0.01, 0.0, 1.0, 2)
    evolve_adaptive(amps, omegas, 0.01, 0.0, 1.0, 1e-8, 0.5, 1000)
