"""Non-EM baseline estimators and sorting-based permutation recovery.

Includes naive ordinary least squares (biased toward ``(1-alpha) beta`` under
uniformly random mismatching), the oracle fit that un-shuffles with the true
permutation, the norm-rescaled least squares estimator, and the
Lahiri-Larsen bias-corrected estimator for the uniform mismatch model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data import Dataset, SparsePermutation, apply_permutation
from .exceptions import SingularDesignError

__all__ = [
    "qr_lstsq",
    "ols_fit",
    "oracle_fit",
    "rescaled_ls",
    "QMatrix",
    "build_uniform_q",
    "lahiri_larsen_fit",
    "recover_permutation",
]


def qr_lstsq(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least squares solution via pivoted QR, rejecting rank-deficient designs."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, d) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    if diag.size == 0 or np.any(diag <= tol):
        raise SingularDesignError(
            f"design matrix is rank deficient (rank < {d} at tolerance {tol:.3e})"
        )
    z = scipy.linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(d)
    beta[piv] = z
    return beta


def ols_fit(data: Dataset) -> np.ndarray:
    """Ordinary least squares, ignoring any mismatches."""
    return qr_lstsq(data.X, data.y)


def oracle_fit(data: Dataset) -> np.ndarray:
    """Least squares after un-shuffling the response with the true permutation."""
    if data.truth is None:
        raise ValueError("oracle fit requires a dataset with recorded truth")
    perm, _ = data.truth
    return qr_lstsq(data.X, apply_permutation(perm.inverse(), data.y))


def rescaled_ls(data: Dataset, sigma2_star: float) -> np.ndarray:
    """OLS direction rescaled to the moment-implied coefficient norm.

    The norm estimate is ``sqrt(max(0, mean(y^2) - sigma2_star))``; a clamped
    radicand (possible at small n) yields the zero vector rather than an
    error so benchmark grids never abort.
    """
    if sigma2_star < 0:
        raise ValueError("sigma2_star must be >= 0")
    beta_ls = ols_fit(data)
    radicand = max(0.0, float(np.mean(data.y**2)) - float(sigma2_star))
    scale = float(np.linalg.norm(beta_ls))
    if radicand == 0.0 or scale == 0.0:
        return np.zeros(data.d)
    return beta_ls * (np.sqrt(radicand) / scale)


@dataclass(frozen=True)
class QMatrix:
    """Structured expected permutation matrix ``eye_coef*I + ones_coef*11'``."""

    n: int
    alpha: float
    eye_coef: float
    ones_coef: float

    def dense(self) -> np.ndarray:
        return self.eye_coef * np.eye(self.n) + self.ones_coef * np.ones((self.n, self.n))


def build_uniform_q(n: int, alpha: float) -> QMatrix:
    """Expected permutation matrix under the uniform mismatch model.

    Diagonal entries equal ``1 - alpha`` and off-diagonal entries
    ``alpha / (n-1)``, so every row sums to one.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    ones_coef = alpha / (n - 1) if n > 1 else 0.0
    return QMatrix(n=n, alpha=float(alpha), eye_coef=1.0 - alpha - ones_coef, ones_coef=ones_coef)


def lahiri_larsen_fit(data: Dataset, q: QMatrix) -> np.ndarray:
    """Bias-corrected least squares ``(X'Q'QX)^{-1} X'Q'y``.

    Exploits the two-scalar structure of ``Q`` so the cost is O(n d^2); the
    n-by-n matrix is never materialized.
    """
    if q.n != data.n:
        raise ValueError("QMatrix size does not match dataset")
    X, y = data.X, data.y
    e, g = q.eye_coef, q.ones_coef
    col_sums = X.T @ np.ones(data.n)
    # Q'Q = e^2 I + (2 e g + n g^2) 11'
    A = e**2 * (X.T @ X) + (2 * e * g + data.n * g**2) * np.outer(col_sums, col_sums)
    b = e * (X.T @ y) + g * col_sums * float(y.sum())
    try:
        c, low = scipy.linalg.cho_factor(A)
    except scipy.linalg.LinAlgError as exc:
        raise SingularDesignError(f"X'Q'QX is not positive definite: {exc}") from exc
    return scipy.linalg.cho_solve((c, low), b)


def recover_permutation(y: np.ndarray, fitted: np.ndarray) -> SparsePermutation:
    """Permutation maximizing ``<y, P fitted>``, found by rank matching.

    Slot ``i`` reads the fitted value whose rank equals the rank of ``y_i``;
    ties are broken by original index so the output is deterministic.
    """
    y = np.asarray(y, dtype=float)
    fitted = np.asarray(fitted, dtype=float)
    if y.shape != fitted.shape or y.ndim != 1:
        raise ValueError("y and fitted must be vectors of equal length")
    order_y = np.argsort(y, kind="stable")
    order_f = np.argsort(fitted, kind="stable")
    m = np.empty(y.shape[0], dtype=np.intp)
    m[order_y] = order_f
    return SparsePermutation.from_map(m)
