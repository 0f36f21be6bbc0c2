"""scikit-learn style estimators wrapping the functional fitting routines.

All estimators implement ``fit(X, y)`` / ``predict(X)`` / ``get_params`` and
validate inputs with the scikit-learn helpers, so they compose with
pipelines, model selection and cloning.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import baselines
from .data import Dataset, SparsePermutation, Theta
from .em import EMConfig, default_init, em_known_norms, em_plugin, em_simultaneous
from .inference import sandwich

__all__ = [
    "LeastSquaresRegressor",
    "OracleLeastSquares",
    "RescaledLeastSquares",
    "LahiriLarsenRegressor",
    "MismatchEMRegressor",
]


class _LinearPredictMixin:
    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_

    def recover_permutation(self, X, y) -> SparsePermutation:
        """Rank-matching permutation estimate between y and the fitted values."""
        check_is_fitted(self, "coef_")
        X, y = check_X_y(X, y, y_numeric=True)
        return baselines.recover_permutation(y, X @ self.coef_)

    def _dataset(self, X, y) -> Dataset:
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        return Dataset(X, y)


class LeastSquaresRegressor(_LinearPredictMixin, RegressorMixin, BaseEstimator):
    """Ordinary least squares ignoring mismatches (the naive baseline)."""

    def fit(self, X, y):
        data = self._dataset(X, y)
        self.coef_ = baselines.ols_fit(data)
        return self


class OracleLeastSquares(_LinearPredictMixin, RegressorMixin, BaseEstimator):
    """Least squares given the true permutation (benchmark upper bound)."""

    def fit(self, X, y, permutation=None):
        data = self._dataset(X, y)
        if permutation is None:
            raise ValueError("OracleLeastSquares.fit requires the true permutation")
        if not isinstance(permutation, SparsePermutation):
            permutation = SparsePermutation.from_map(np.asarray(permutation))
        data = Dataset(data.X, data.y, truth=(permutation, Theta(np.zeros(data.d), 1.0, 0.0)))
        self.coef_ = baselines.oracle_fit(data)
        return self


class RescaledLeastSquares(_LinearPredictMixin, RegressorMixin, BaseEstimator):
    """OLS direction rescaled to the moment-implied norm; needs ``sigma2``."""

    def __init__(self, sigma2: float = 0.0):
        self.sigma2 = sigma2

    def fit(self, X, y):
        data = self._dataset(X, y)
        self.coef_ = baselines.rescaled_ls(data, self.sigma2)
        return self


class LahiriLarsenRegressor(_LinearPredictMixin, RegressorMixin, BaseEstimator):
    """Bias-corrected least squares under the uniform mismatch model."""

    def __init__(self, alpha: float = 0.0):
        self.alpha = alpha

    def fit(self, X, y):
        data = self._dataset(X, y)
        q = baselines.build_uniform_q(data.n, self.alpha)
        self.coef_ = baselines.lahiri_larsen_fit(data, q)
        return self


class MismatchEMRegressor(_LinearPredictMixin, RegressorMixin, BaseEstimator):
    """Mixture pseudo-likelihood regression fitted by EM.

    Parameters
    ----------
    variant : {"simultaneous", "plugin", "known_norms"}
        Fitting scheme. ``known_norms`` requires ``sigma2`` and
        ``beta_norm``; the other variants estimate the noise variance.
    sigma2, beta_norm : float, optional
        Known noise variance and coefficient norm for ``known_norms``.
    alpha0 : float
        Initial mismatch fraction.
    compute_se : bool
        If true (and the variant estimates all parameters), attach plug-in
        sandwich standard errors and Wald intervals after fitting.
    level : float
        Confidence level for the intervals.

    Remaining parameters mirror :class:`shufflereg.em.EMConfig`.

    Attributes
    ----------
    coef_, sigma2_, alpha_ : fitted parameters.
    responsibilities_ : posterior mismatch probabilities per observation.
    converged_, n_iter_, objective_, trace_ : fit diagnostics.
    se_, ci_, sandwich_ : only when ``compute_se=True``.
    """

    def __init__(
        self,
        variant: str = "simultaneous",
        sigma2: Optional[float] = None,
        beta_norm: Optional[float] = None,
        alpha0: float = 0.5,
        max_iter: int = 500,
        tol: float = 1e-8,
        alpha_clamp: float = 1e-6,
        sigma2_floor: float = 1e-12,
        armijo_c: float = 1e-4,
        shrink: float = 0.5,
        min_step: float = 2.0**-30,
        constrain_beta_norm: bool = False,
        compute_se: bool = False,
        level: float = 0.95,
    ):
        self.variant = variant
        self.sigma2 = sigma2
        self.beta_norm = beta_norm
        self.alpha0 = alpha0
        self.max_iter = max_iter
        self.tol = tol
        self.alpha_clamp = alpha_clamp
        self.sigma2_floor = sigma2_floor
        self.armijo_c = armijo_c
        self.shrink = shrink
        self.min_step = min_step
        self.constrain_beta_norm = constrain_beta_norm
        self.compute_se = compute_se
        self.level = level

    def _config(self) -> EMConfig:
        return EMConfig(
            max_iter=self.max_iter,
            tol=self.tol,
            alpha_clamp=self.alpha_clamp,
            sigma2_floor=self.sigma2_floor,
            armijo_c=self.armijo_c,
            shrink=self.shrink,
            min_step=self.min_step,
            constrain_beta_norm=self.constrain_beta_norm,
        )

    def fit(self, X, y):
        data = self._dataset(X, y)
        cfg = self._config()
        if self.variant == "known_norms":
            if self.sigma2 is None or self.beta_norm is None:
                raise ValueError("known_norms requires sigma2 and beta_norm")
            init = Theta(baselines.ols_fit(data), self.sigma2, self.alpha0)
            out = em_known_norms(data, self.sigma2, self.beta_norm, init=init, cfg=cfg)
        elif self.variant == "plugin":
            out = em_plugin(data, init=default_init(data, self.alpha0), cfg=cfg)
        elif self.variant == "simultaneous":
            out = em_simultaneous(data, init=default_init(data, self.alpha0), cfg=cfg)
        else:
            raise ValueError(f"unknown variant {self.variant!r}")
        self.coef_ = out.theta_hat.beta
        self.sigma2_ = out.theta_hat.sigma2
        self.alpha_ = out.theta_hat.alpha
        self.responsibilities_ = out.responsibilities
        self.converged_ = out.converged
        self.n_iter_ = out.n_iter
        self.objective_ = out.trace.objective[-1]
        self.trace_ = out.trace
        self.fit_output_ = out
        if self.compute_se and self.variant in ("plugin", "simultaneous"):
            sw = sandwich(data, out.theta_hat, self.level, marginal_var=out.marginal_var)
            self.se_ = sw.se
            self.ci_ = sw.ci
            self.sandwich_ = sw
        return self
