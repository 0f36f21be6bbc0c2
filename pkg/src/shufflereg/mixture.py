"""Two-component Gaussian mixture density and pseudo log-likelihood.

Each response is modeled as drawn, with probability ``1 - alpha``, from the
regression component ``N(x'beta, sigma2)`` and, with probability ``alpha``,
from the marginal component ``N(0, tau2)`` with ``tau2 = sigma2 + ||beta||^2``
(or a caller-supplied fixed marginal variance). All density arithmetic is
done in log space with log-sum-exp so that tiny noise levels do not
underflow.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from .data import Dataset, Theta

__all__ = [
    "ALPHA_CLAMP",
    "mixture_density",
    "neg_pseudo_loglik",
    "responsibilities",
    "responsibilities_from_log",
    "robust_loss",
    "loss_table",
]

# Keeps log(alpha) / log(1 - alpha) finite at boundary iterates.
ALPHA_CLAMP = 1e-6

_LOG_2PI = float(np.log(2.0 * np.pi))


def _log_normal_pdf(y, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (y - mean) ** 2 / var)


def _check_variances(sigma2: float, marginal_var: float) -> None:
    if not (np.isfinite(sigma2) and sigma2 > 0):
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    if not (np.isfinite(marginal_var) and marginal_var > 0):
        raise ValueError(f"marginal variance must be positive, got {marginal_var}")


def log_mixture_components(
    y,
    xb,
    theta: Theta,
    *,
    marginal_var: Optional[float] = None,
    alpha_clamp: float = ALPHA_CLAMP,
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-observation log of the two weighted component densities.

    Returns ``(log_mismatch, log_matched)`` where the first carries the
    ``alpha``-weighted marginal component and the second the
    ``(1-alpha)``-weighted regression component.
    """
    mv = theta.tau2 if marginal_var is None else float(marginal_var)
    _check_variances(theta.sigma2, mv)
    a = min(max(theta.alpha, alpha_clamp), 1.0 - alpha_clamp) if alpha_clamp > 0 else theta.alpha
    y = np.asarray(y, dtype=float)
    xb = np.asarray(xb, dtype=float)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(xb))):
        raise ValueError("inputs must be finite")
    with np.errstate(divide="ignore"):
        log_mismatch = np.log(a) + _log_normal_pdf(y, 0.0, mv)
        log_matched = np.log1p(-a) + _log_normal_pdf(y, xb, theta.sigma2)
    return log_mismatch, log_matched


def mixture_density(y, xb, theta: Theta, *, alpha_clamp: float = ALPHA_CLAMP):
    """Value of ``(1-a) N(y; xb, sigma2) + a N(y; 0, sigma2 + ||beta||^2)``."""
    lm, lr = log_mixture_components(y, xb, theta, alpha_clamp=alpha_clamp)
    return np.exp(np.logaddexp(lm, lr))


def neg_pseudo_loglik(
    data: Dataset,
    theta: Theta,
    *,
    marginal_var: Optional[float] = None,
    alpha_clamp: float = ALPHA_CLAMP,
) -> float:
    """Negative pseudo log-likelihood ``-sum_i log f(y_i | x_i)``.

    With ``marginal_var=None`` the marginal component variance is coupled to
    the current parameters (``sigma2 + ||beta||^2``); the EM variants that
    hold it fixed pass the fixed value explicitly.
    """
    lm, lr = log_mixture_components(
        data.y, data.X @ theta.beta, theta, marginal_var=marginal_var, alpha_clamp=alpha_clamp
    )
    return float(-np.logaddexp(lm, lr).sum())


def responsibilities_from_log(log_mismatch, log_matched) -> np.ndarray:
    """Posterior mismatch probabilities from the two weighted log densities.

    Invariant to adding a common constant to both arguments.
    """
    lm = np.asarray(log_mismatch, dtype=float)
    lr = np.asarray(log_matched, dtype=float)
    return np.exp(lm - np.logaddexp(lm, lr))


def responsibilities(data: Dataset, theta: Theta, tau2: float) -> np.ndarray:
    """E-step: posterior probability that each observation is mismatched.

    ``tau2`` is the marginal component variance: ``sigma2 + ||beta||^2`` when
    all parameters are estimated simultaneously, or the fixed plug-in /
    known-norms value. ``alpha`` enters unclamped so that the boundary cases
    ``alpha = 0`` and ``alpha = 1`` give exact 0/1 posteriors.
    """
    lm, lr = log_mixture_components(
        data.y, data.X @ theta.beta, theta, marginal_var=tau2, alpha_clamp=0.0
    )
    return responsibilities_from_log(lm, lr)


def robust_loss(z, gamma: float, b):
    """Capped loss ``-log(exp(-z^2/2) + gamma * exp(-b^2/2))``.

    Monotone non-decreasing in ``z >= 0`` and uniformly bounded above by
    ``-log(gamma) + b^2 / 2``; collapses to the squared loss ``z^2 / 2`` as
    ``gamma -> 0``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    z = np.asarray(z, dtype=float)
    b = np.asarray(b, dtype=float)
    return -np.logaddexp(-0.5 * z**2, np.log(gamma) - 0.5 * b**2)


def loss_table(z: np.ndarray, pairs: Sequence[Tuple[float, float]]) -> np.ndarray:
    """Loss curves on a ``z`` grid, min-max rescaled to [0, 1] per curve.

    Returns an array of shape ``(len(pairs), len(z))``; a constant curve
    rescales to all zeros.
    """
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise ValueError("z grid must be non-empty")
    if len(pairs) == 0:
        raise ValueError("need at least one (gamma, b) pair")
    out = np.empty((len(pairs), z.size))
    for row, (gamma, b) in enumerate(pairs):
        vals = robust_loss(z, gamma, b)
        lo, hi = float(vals.min()), float(vals.max())
        out[row] = 0.0 if hi == lo else (vals - lo) / (hi - lo)
    return out
