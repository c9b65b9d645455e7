"""Dense complex matrix kernels used by the solver and the unfolded network.

All kernels operate on complex128 ndarrays, never modify their inputs, and
raise package errors (ShapeMismatch, DegenerateDiagonal, SingularMatrix)
instead of letting LAPACK failures propagate unannotated.
"""

import warnings

import numpy as np
import scipy.linalg

from .errors import DegenerateDiagonal, ShapeMismatch, SingularMatrix

# Relative floor under which a diagonal entry or a pivot counts as zero.
EPS_DEGENERATE = 1e-12


def _as_square(a: np.ndarray, op: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"{op} needs a square matrix, got shape {a.shape}")
    return a


def diag_reciprocal(a: np.ndarray) -> np.ndarray:
    """Diagonal-reciprocal approximation of the inverse.

    Returns the matrix with 1/a_ii on the diagonal and zeros elsewhere.
    The guard is relative to the matrix scale: an entry with
    |a_ii| <= EPS_DEGENERATE * max|a| is treated as a true zero.
    """
    a = _as_square(a, "diag_reciprocal")
    diag = np.diagonal(a)
    scale = np.abs(a).max() if a.size else 0.0
    if scale == 0.0 or np.any(np.abs(diag) <= EPS_DEGENERATE * scale):
        raise DegenerateDiagonal(
            f"diagonal entry below {EPS_DEGENERATE:g} of matrix scale {scale:g}"
        )
    out = np.zeros_like(a, dtype=np.complex128)
    np.fill_diagonal(out, 1.0 / diag)
    return out


def stable_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse via pivoted LU with an explicit rank-deficiency check.

    Raises SingularMatrix when the smallest pivot falls below
    EPS_DEGENERATE * max|a|, instead of silently amplifying noise.
    """
    a = _as_square(a, "stable_inverse")
    a = np.ascontiguousarray(a, dtype=np.complex128)
    try:
        with warnings.catch_warnings():
            # the pivot check below turns exact singularity into a typed
            # error; scipy's advance warning about it is just noise
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    except (ValueError, scipy.linalg.LinAlgError) as exc:
        raise SingularMatrix(f"LU factorization failed: {exc}") from exc
    pivots = np.abs(np.diagonal(lu))
    tol = EPS_DEGENERATE * max(np.abs(a).max(), np.finfo(np.float64).tiny)
    if pivots.min() <= tol:
        raise SingularMatrix(
            f"pivot {pivots.min():.3e} below tolerance {tol:.3e}"
        )
    eye = np.eye(a.shape[0], dtype=np.complex128)
    return scipy.linalg.lu_solve((lu, piv), eye, check_finite=False)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise product with strict shape agreement."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"hadamard shapes differ: {a.shape} vs {b.shape}")
    return a * b


def taylor_inverse(a: np.ndarray, a0_inv: np.ndarray) -> np.ndarray:
    """First-order inverse correction around a reference inverse.

    Computes 2*A0inv - A0inv @ A @ A0inv, the first-order Neumann/Taylor
    expansion of inv(A) around a point whose inverse A0inv is known.
    Exact when A0inv is the true inverse of A.
    """
    a = _as_square(a, "taylor_inverse")
    a0_inv = _as_square(a0_inv, "taylor_inverse")
    if a.shape != a0_inv.shape:
        raise ShapeMismatch(
            f"taylor_inverse shapes differ: {a.shape} vs {a0_inv.shape}"
        )
    return 2.0 * a0_inv - a0_inv @ a @ a0_inv
