"""Dense linear-algebra kernels shared by the estimators.

LAPACK does the heavy lifting (``eigh`` and Householder QR); this module adds
the conventions the estimators rely on: descending eigenvalues, a fixed
eigenvector sign, relative eigenvalue floors and an explicit rank check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import AllEigenvaluesFloored, ConvergenceFailure, InputError, NonFiniteInput, RankDeficient

RANK_TOL = 1e-10


@dataclass(frozen=True)
class SymEig:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _check_square(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonFiniteInput("matrix contains NaN or infinite entries")
    return A


def fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so each column's largest-magnitude entry is nonnegative.

    ``argmax`` returns the first index on ties, which gives the lowest-index rule.
    """
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.where(V[idx, np.arange(V.shape[1])] < 0, -1.0, 1.0)
    return V * signs


def sym_eig(A) -> SymEig:
    A = _check_square(A)
    A = 0.5 * (A + A.T)
    try:
        w, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    order = np.argsort(w)[::-1]
    return SymEig(w[order], fix_signs(V[:, order]))


def _floored_spectrum(A, floor_rel: float) -> tuple[np.ndarray, np.ndarray]:
    eig = sym_eig(A)
    lam = eig.eigenvalues
    lam_max = lam[0] if lam.size else 0.0
    if not lam_max > 0.0:
        raise AllEigenvaluesFloored(
            f"largest eigenvalue is {lam_max:.3g}; matrix is numerically zero or negative"
        )
    return np.maximum(lam, floor_rel * lam_max), eig.eigenvectors


def inv_sqrt_spd(A, floor_rel: float = 1e-10) -> np.ndarray:
    """Symmetric inverse square root with eigenvalues floored at ``floor_rel * max``."""
    lam, V = _floored_spectrum(A, floor_rel)
    X = (V / np.sqrt(lam)) @ V.T
    return 0.5 * (X + X.T)


def sqrt_spd(A, floor_rel: float = 1e-10) -> np.ndarray:
    """Symmetric square root using the same floor, i.e. the exact inverse of ``inv_sqrt_spd``."""
    lam, V = _floored_spectrum(A, floor_rel)
    X = (V * np.sqrt(lam)) @ V.T
    return 0.5 * (X + X.T)


def inv_spd(A, floor_rel: float = 1e-10) -> np.ndarray:
    lam, V = _floored_spectrum(A, floor_rel)
    X = (V / lam) @ V.T
    return 0.5 * (X + X.T)


def qr_least_squares(X, y, rank_tol: float = RANK_TOL):
    """Least squares through a Householder QR of the column-equilibrated design.

    ``y`` may be a vector of length T or a T x n matrix of right-hand sides
    sharing the design; ``coef``, ``residuals`` and ``rss`` follow its shape.

    Columns are scaled to unit norm before factoring so that raw polynomial
    columns (t**d with t in the thousands) do not swamp the rank test; the
    returned coefficients are in the caller's unscaled basis.

    Returns
    -------
    coef, residuals, rss
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise InputError(f"design must be 2-D, got shape {X.shape}")
    T, q = X.shape
    if y.shape[0] != T:
        raise InputError(f"design has {T} rows but response has {y.shape[0]}")
    if q > T:
        raise RankDeficient(T, q)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NonFiniteInput("least squares input contains NaN or infinite values")
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0.0] = 1.0
    Xs = X / scale
    Q, R = linalg.qr(Xs, mode="economic")
    diag = np.abs(np.diag(R))
    tol = rank_tol * np.linalg.norm(Xs, 2)
    rank = int(np.sum(diag > tol))
    if rank < q:
        raise RankDeficient(rank, q)
    qty = Q.T @ y
    coef_s = linalg.solve_triangular(R, qty)
    coef = coef_s / scale if y.ndim == 1 else coef_s / scale[:, None]
    residuals = y - X @ coef
    rss = np.sum(residuals**2, axis=0)
    return coef, residuals, rss
