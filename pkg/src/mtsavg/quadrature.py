"""Composite Gauss-Legendre quadrature for matrix-valued integrands.

Integrands here are smooth but oscillatory (phases up to ~w*T0 per block),
so the initial panel count follows the known frequency content and a
panel-doubling comparison supplies the error estimate.
"""

from functools import lru_cache

import numpy as np

PANELS_PER_PERIOD = 4.0


class QuadratureError(RuntimeError):
    """Quadrature failed to reach tolerance; carries the achieved estimate."""

    def __init__(self, message, achieved):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


@lru_cache(maxsize=None)
def gauss_legendre(order):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return nodes, weights


def _panel_sum(batch_eval, a, b, panels, order):
    nodes, weights = gauss_legendre(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * (edges[1] - edges[0])
    mids = 0.5 * (edges[:-1] + edges[1:])
    ts = (mids[:, None] + half * nodes[None, :]).ravel()
    ws = np.tile(weights * half, panels)
    vals = batch_eval(ts)
    return np.tensordot(ws, vals, axes=(0, 0))


def integrate_matrix(batch_eval, a, b, *, max_frequency=0.0, order=8,
                     abs_tol=1e-12, max_doublings=8):
    """Integrate a matrix-valued function over [a, b].

    ``batch_eval`` maps a 1-d time array to a stacked (m, N, N) array.
    Starts from a panel count matched to ``max_frequency``, then doubles
    panels until two successive composite rules agree to ``abs_tol``
    (Frobenius norm of the difference). Returns (integral, error_estimate)
    using the finer rule.
    """
    if b < a:
        I, err = integrate_matrix(batch_eval, b, a, max_frequency=max_frequency,
                                  order=order, abs_tol=abs_tol,
                                  max_doublings=max_doublings)
        return -I, err
    if b == a:
        probe = batch_eval(np.array([a]))[0]
        return np.zeros_like(probe), 0.0
    panels = max(1, int(np.ceil((b - a) * max_frequency * PANELS_PER_PERIOD / (2 * np.pi))))
    coarse = _panel_sum(batch_eval, a, b, panels, order)
    for _ in range(max_doublings):
        panels *= 2
        fine = _panel_sum(batch_eval, a, b, panels, order)
        err = float(np.linalg.norm(fine - coarse))
        if err <= abs_tol:
            return fine, err
        coarse = fine
    raise QuadratureError(
        f"no convergence to {abs_tol:.1e} after {max_doublings} doublings "
        f"on [{a:.6g}, {b:.6g}]",
        achieved=err,
    )
