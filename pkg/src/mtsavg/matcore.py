"""Dense complex linear algebra core.

Matrices are plain ``numpy.ndarray`` (complex128); this module provides the
structure-preserving exponential and the defect measures used to enforce
hermiticity/unitarity contracts everywhere else.

Norm convention: acceptance thresholds use the spectral norm; the Frobenius
norm is available for cheap screening. Functions taking a ``norm`` argument
accept ``"spectral"`` or ``"fro"``.
"""

import numpy as np

from . import _kernels

HERMITICITY_RTOL = 1e-12
UNITARITY_TOL_PER_DIM = 1e-10
NORM_CONSERVATION_TOL = 1e-10


class NumericDomainError(ValueError):
    """Raised when an operation is fed values outside its numeric domain."""


def spectral_norm(M):
    """Largest singular value."""
    return float(np.linalg.norm(np.asarray(M), 2))


def frobenius_norm(M):
    return float(np.linalg.norm(np.asarray(M)))


def _norm(M, norm):
    if norm == "spectral":
        return spectral_norm(M)
    if norm == "fro":
        return frobenius_norm(M)
    raise ValueError(f"unknown norm {norm!r}")


def hermiticity_defect(M, norm="spectral"):
    """||M - M^dagger||; zero iff M is hermitian."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    return _norm(M - M.conj().T, norm)


def unitarity_defect(U, norm="spectral"):
    """||U^dagger U - I||; zero iff U is unitary."""
    U = np.asarray(U)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise ValueError("expected a square matrix")
    return _norm(U.conj().T @ U - np.eye(U.shape[0]), norm)


def check_hermitian(M, rtol=HERMITICITY_RTOL, what="matrix"):
    """Raise NumericDomainError unless M is hermitian within rtol * ||M||."""
    M = np.asarray(M)
    scale = max(frobenius_norm(M), 1.0)
    defect = hermiticity_defect(M, norm="fro")
    if defect > rtol * scale:
        raise NumericDomainError(
            f"{what} is not hermitian: defect {defect:.3e} exceeds {rtol:.1e} * {scale:.3e}"
        )
    return M


def hermitian_exp(H, s):
    """exp(-i s H) for hermitian H, via spectral decomposition.

    The result is unitary to rounding regardless of s because each
    eigenvalue is mapped to a pure phase.
    """
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(H.view(np.float64))):
        raise NumericDomainError("non-finite entries in generator")
    if not np.isfinite(s):
        raise NumericDomainError("non-finite exponent scale")
    check_hermitian(H, what="exponent generator")
    Hs = 0.5 * (H + H.conj().T)
    return _kernels.expm_herm(Hs, float(s))
