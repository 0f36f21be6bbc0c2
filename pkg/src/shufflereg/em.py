"""EM-type solvers for the mixture pseudo-likelihood.

Three fitting schemes are provided:

* ``em_known_norms``: noise variance and coefficient norm known, closed-form
  E and M steps (mismatch rate and coefficients updated).
* ``em_plugin``: marginal response variance fixed at ``mean(y^2)`` once,
  closed-form updates for all remaining parameters.
* ``em_simultaneous``: all parameters estimated jointly; the M-step for
  (beta, sigma2) is one Fisher-scoring step with backtracking line search
  on the incomplete-data objective, so every accepted iteration decreases
  the pseudo negative log-likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np
import scipy.linalg

from .baselines import ols_fit, qr_lstsq
from .data import Dataset, Theta
from .exceptions import DegenerateWeightsError, FactorizationError
from .mixture import neg_pseudo_loglik, responsibilities

__all__ = [
    "EMConfig",
    "EMTrace",
    "FitOutput",
    "FisherDirection",
    "weighted_ls",
    "default_init",
    "expected_complete_neg_loglik",
    "fisher_direction",
    "em_known_norms",
    "em_plugin",
    "em_simultaneous",
]


@dataclass(frozen=True)
class EMConfig:
    """Iteration control shared by all EM variants."""

    max_iter: int = 500
    tol: float = 1e-8  # relative objective decrease
    alpha_clamp: float = 1e-6
    sigma2_floor: float = 1e-12
    armijo_c: float = 1e-4
    shrink: float = 0.5
    min_step: float = 2.0**-30
    constrain_beta_norm: bool = False

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")

    def clip_alpha(self, alpha: float) -> float:
        return float(min(max(alpha, self.alpha_clamp), 1.0 - self.alpha_clamp))


@dataclass
class EMTrace:
    """Per-iteration record of objective, iterate, step size and acceptance."""

    objective: List[float] = field(default_factory=list)
    theta: List[Theta] = field(default_factory=list)
    step_size: List[float] = field(default_factory=list)
    accepted: List[bool] = field(default_factory=list)

    def append(self, objective: float, theta: Theta, step_size: float, accepted: bool) -> None:
        self.objective.append(float(objective))
        self.theta.append(theta)
        self.step_size.append(float(step_size))
        self.accepted.append(bool(accepted))


@dataclass(frozen=True)
class FitOutput:
    """Result of one EM fit."""

    theta_hat: Theta
    responsibilities: np.ndarray
    trace: EMTrace
    converged: bool
    variant: str
    # Fixed marginal component variance used by the variant; None when the
    # marginal variance is coupled to the iterates (simultaneous scheme).
    marginal_var: Optional[float] = None

    @property
    def n_iter(self) -> int:
        return max(len(self.trace.objective) - 1, 0)


class FisherDirection(NamedTuple):
    gradient: np.ndarray
    fisher: np.ndarray
    step: np.ndarray


def weighted_ls(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Minimize ``sum_i w_i (y_i - x_i' beta)^2`` via QR of the scaled design."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if not w.sum() > 0:
        raise DegenerateWeightsError("all weights are zero")
    s = np.sqrt(w)
    return qr_lstsq(X * s[:, None], y * s)


def default_init(data: Dataset, alpha0: float = 0.5) -> Theta:
    """OLS coefficients, residual mean square, and a neutral mismatch rate."""
    beta0 = ols_fit(data)
    resid = data.y - data.X @ beta0
    sigma2 = max(float(np.mean(resid**2)), 1e-12)
    return Theta(beta0, sigma2, alpha0)


def _converged(prev: float, new: float, tol: float) -> bool:
    return (prev - new) < tol * max(1.0, abs(prev))


def expected_complete_neg_loglik(
    data: Dataset, beta: np.ndarray, sigma2: float, pi: np.ndarray
) -> float:
    """Expected complete-data negative log-likelihood in (beta, sigma2).

    The marginal component variance is coupled (``sigma2 + ||beta||^2``);
    terms involving only the mismatch rate are omitted since they do not
    affect (beta, sigma2) optimization.
    """
    beta = np.asarray(beta, dtype=float)
    tau2 = sigma2 + float(beta @ beta)
    r2 = (data.y - data.X @ beta) ** 2
    w = 1.0 - pi
    matched = 0.5 * np.log(sigma2) * w.sum() + float(w @ r2) / (2.0 * sigma2)
    mismatched = 0.5 * np.log(tau2) * pi.sum() + float(pi @ data.y**2) / (2.0 * tau2)
    return matched + mismatched


def fisher_direction(data: Dataset, theta: Theta, pi: np.ndarray) -> FisherDirection:
    """Gradient, expected information and scoring step for (beta, sigma2).

    The gradient is that of the expected complete-data objective (equal to
    the incomplete-data gradient at the same parameters). The information
    matrix replaces data-dependent terms by their model expectations, which
    keeps it positive definite; the step solves ``F step = -g`` by Cholesky,
    escalating a small diagonal jitter up to three times if needed.
    """
    X, y = data.X, data.y
    beta, sigma2 = theta.beta, theta.sigma2
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    d = beta.shape[0]
    tau2 = sigma2 + float(beta @ beta)
    w = 1.0 - pi
    resid = y - X @ beta
    Xw = X * w[:, None]
    y2 = y**2

    pull = float(pi @ y2) / tau2**2 - float(pi.sum()) / tau2
    g_beta = -(Xw.T @ resid) / sigma2 - pull * beta
    g_s2 = (
        -float(w @ resid**2) / (2.0 * sigma2**2)
        + float(w.sum()) / (2.0 * sigma2)
        - float(pi @ y2) / (2.0 * tau2**2)
        + float(pi.sum()) / (2.0 * tau2)
    )
    g = np.concatenate([g_beta, [g_s2]])

    spi = float(pi.sum())
    F = np.empty((d + 1, d + 1))
    F[:d, :d] = (Xw.T @ X) / sigma2 + (2.0 * spi / tau2**2) * np.outer(beta, beta)
    F[:d, d] = (spi / tau2**2) * beta
    F[d, :d] = F[:d, d]
    F[d, d] = float(w.sum()) / (2.0 * sigma2**2) + spi / (2.0 * tau2**2)

    jitter_unit = 1e-8 * float(np.trace(F)) / (d + 1)
    jitter = 0.0
    for attempt in range(4):
        try:
            cf = scipy.linalg.cho_factor(F + jitter * np.eye(d + 1))
            break
        except scipy.linalg.LinAlgError:
            jitter = jitter_unit if jitter == 0.0 else 10.0 * jitter
    else:
        raise FactorizationError("expected information not factorizable after 3 jitter escalations")
    step = scipy.linalg.cho_solve(cf, -g)
    return FisherDirection(g, F, step)


def _finalize(
    data: Dataset,
    theta: Theta,
    trace: EMTrace,
    converged: bool,
    variant: str,
    marginal_var: Optional[float],
) -> FitOutput:
    tau2 = theta.tau2 if marginal_var is None else marginal_var
    pi = responsibilities(data, theta, tau2)
    return FitOutput(theta, pi, trace, converged, variant, marginal_var)


def em_known_norms(
    data: Dataset,
    sigma2_star: float,
    beta_norm: float,
    init: Optional[Theta] = None,
    cfg: Optional[EMConfig] = None,
) -> FitOutput:
    """EM with known noise variance and known coefficient norm.

    Alternates the posterior mismatch probabilities (marginal variance fixed
    at ``sigma2_star + beta_norm^2``) with the closed-form M-step: mismatch
    rate = mean posterior, coefficients = weighted least squares with the
    complementary weights. With ``cfg.constrain_beta_norm`` the coefficient
    update is radially projected onto ``||beta|| <= beta_norm``; the
    projected point is kept only if it does not increase the objective, so
    descent is preserved.
    """
    cfg = cfg or EMConfig()
    if not sigma2_star > 0:
        raise ValueError("sigma2_star must be positive")
    if beta_norm < 0:
        raise ValueError("beta_norm must be >= 0")
    tau2_star = float(sigma2_star) + float(beta_norm) ** 2
    if init is None:
        init = Theta(ols_fit(data), sigma2_star, 0.5)
    beta = np.asarray(init.beta, dtype=float)
    if cfg.constrain_beta_norm:
        nb = float(np.linalg.norm(beta))
        if nb > beta_norm:
            beta = beta * (beta_norm / nb) if nb > 0 else beta
    alpha = cfg.clip_alpha(init.alpha)

    def obj(b: np.ndarray, a: float) -> float:
        return neg_pseudo_loglik(
            data,
            Theta(b, sigma2_star, a),
            marginal_var=tau2_star,
            alpha_clamp=cfg.alpha_clamp,
        )

    trace = EMTrace()
    prev = obj(beta, alpha)
    trace.append(prev, Theta(beta, sigma2_star, alpha), 0.0, True)
    converged = False
    for _ in range(cfg.max_iter):
        pi = responsibilities(data, Theta(beta, sigma2_star, alpha), tau2_star)
        alpha_new = cfg.clip_alpha(float(np.mean(pi)))
        beta_new = weighted_ls(data.X, data.y, 1.0 - pi)
        if cfg.constrain_beta_norm:
            nb = float(np.linalg.norm(beta_new))
            if nb > beta_norm:
                candidate = beta_new * (beta_norm / nb)
                beta_new = candidate if obj(candidate, alpha_new) <= obj(beta, alpha_new) else beta
        new = obj(beta_new, alpha_new)
        beta, alpha = beta_new, alpha_new
        trace.append(new, Theta(beta, sigma2_star, alpha), 1.0, True)
        if _converged(prev, new, cfg.tol):
            converged = True
            prev = new
            break
        prev = new
    theta_hat = Theta(beta, sigma2_star, alpha)
    return _finalize(data, theta_hat, trace, converged, "known_norms", tau2_star)


def em_plugin(
    data: Dataset,
    init: Optional[Theta] = None,
    cfg: Optional[EMConfig] = None,
) -> FitOutput:
    """EM with the marginal response variance plugged in as ``mean(y^2)``.

    Every parameter update is closed form: mismatch rate = mean posterior,
    coefficients = weighted least squares, noise variance = weighted mean
    squared residual at the new coefficients (floored at
    ``cfg.sigma2_floor``).
    """
    cfg = cfg or EMConfig()
    if data.n < 2:
        raise ValueError("need at least two observations")
    tau2_hat = float(np.mean(data.y**2))
    if init is None:
        init = default_init(data)
    beta = np.asarray(init.beta, dtype=float)
    sigma2 = max(float(init.sigma2), cfg.sigma2_floor)
    alpha = cfg.clip_alpha(init.alpha)

    def obj(theta: Theta) -> float:
        return neg_pseudo_loglik(data, theta, marginal_var=tau2_hat, alpha_clamp=cfg.alpha_clamp)

    trace = EMTrace()
    prev = obj(Theta(beta, sigma2, alpha))
    trace.append(prev, Theta(beta, sigma2, alpha), 0.0, True)
    converged = False
    for _ in range(cfg.max_iter):
        pi = responsibilities(data, Theta(beta, sigma2, alpha), tau2_hat)
        alpha = cfg.clip_alpha(float(np.mean(pi)))
        w = 1.0 - pi
        if not w.sum() > 0:
            raise DegenerateWeightsError("all posterior match probabilities vanished")
        beta = weighted_ls(data.X, data.y, w)
        resid = data.y - data.X @ beta
        sigma2 = max(float(w @ resid**2 / w.sum()), cfg.sigma2_floor)
        new = obj(Theta(beta, sigma2, alpha))
        trace.append(new, Theta(beta, sigma2, alpha), 1.0, True)
        if _converged(prev, new, cfg.tol):
            converged = True
            prev = new
            break
        prev = new
    return _finalize(data, Theta(beta, sigma2, alpha), trace, converged, "plugin", tau2_hat)


def em_simultaneous(
    data: Dataset,
    init: Optional[Theta] = None,
    cfg: Optional[EMConfig] = None,
) -> FitOutput:
    """Joint estimation of coefficients, noise variance and mismatch rate.

    Per iteration: E-step with marginal variance ``sigma2 + ||beta||^2``,
    closed-form mismatch-rate update, then one Fisher-scoring step on
    (beta, sigma2) with backtracking. The posteriors are refreshed after the
    rate update so the scoring direction matches the current incomplete-data
    gradient; combined with the Armijo test on the incomplete objective this
    makes every accepted iteration a strict descent step.
    """
    cfg = cfg or EMConfig()
    if init is None:
        init = default_init(data)
    beta = np.asarray(init.beta, dtype=float)
    sigma2 = max(float(init.sigma2), cfg.sigma2_floor)
    alpha = cfg.clip_alpha(init.alpha)

    def obj(theta: Theta) -> float:
        return neg_pseudo_loglik(data, theta, alpha_clamp=cfg.alpha_clamp)

    trace = EMTrace()
    prev = obj(Theta(beta, sigma2, alpha))
    trace.append(prev, Theta(beta, sigma2, alpha), 0.0, True)
    converged = False
    for _ in range(cfg.max_iter):
        theta_cur = Theta(beta, sigma2, alpha)
        pi = responsibilities(data, theta_cur, theta_cur.tau2)
        alpha = cfg.clip_alpha(float(np.mean(pi)))
        theta_rate = Theta(beta, sigma2, alpha)
        pi = responsibilities(data, theta_rate, theta_rate.tau2)
        direction = fisher_direction(data, theta_rate, pi)
        slope = float(direction.gradient @ direction.step)
        f0 = obj(theta_rate)

        gamma = 1.0
        accepted = False
        beta_c, sigma2_c, f_c = beta, sigma2, f0
        if slope < 0:
            while gamma >= cfg.min_step:
                sigma2_try = sigma2 + gamma * direction.step[-1]
                if sigma2_try > cfg.sigma2_floor:
                    beta_try = beta + gamma * direction.step[:-1]
                    f_try = obj(Theta(beta_try, sigma2_try, alpha))
                    if f_try <= f0 + cfg.armijo_c * gamma * slope:
                        beta_c, sigma2_c, f_c = beta_try, sigma2_try, f_try
                        accepted = True
                        break
                gamma *= cfg.shrink
        if accepted:
            beta, sigma2 = beta_c, sigma2_c
            new = f_c
        else:
            gamma = 0.0
            new = f0
        trace.append(new, Theta(beta, sigma2, alpha), gamma, accepted)
        if _converged(prev, new, cfg.tol):
            converged = True
            prev = new
            break
        prev = new
    return _finalize(data, Theta(beta, sigma2, alpha), trace, converged, "simultaneous", None)
