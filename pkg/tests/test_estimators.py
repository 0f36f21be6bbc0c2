import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from shufflereg import (
    Dataset,
    LahiriLarsenRegressor,
    LeastSquaresRegressor,
    MismatchEMRegressor,
    OracleLeastSquares,
    RescaledLeastSquares,
    build_uniform_q,
    em_simultaneous,
    lahiri_larsen_fit,
    ols_fit,
    rescaled_ls,
)

from conftest import make_data


@pytest.fixture
def xy():
    data = make_data(n=120, d=4, sigma=0.5, alpha=0.2, seed=80)
    return data


class TestBaselineEstimators:
    def test_least_squares_matches_functional(self, xy):
        est = LeastSquaresRegressor().fit(xy.X, xy.y)
        assert np.allclose(est.coef_, ols_fit(xy), atol=1e-12)
        assert np.allclose(est.predict(xy.X), xy.X @ est.coef_, atol=1e-12)

    def test_oracle_accepts_map_or_object(self, xy):
        perm, _ = xy.truth
        a = OracleLeastSquares().fit(xy.X, xy.y, permutation=perm)
        b = OracleLeastSquares().fit(xy.X, xy.y, permutation=np.asarray(perm.map))
        assert np.allclose(a.coef_, b.coef_, atol=1e-15)

    def test_oracle_requires_permutation(self, xy):
        with pytest.raises(ValueError):
            OracleLeastSquares().fit(xy.X, xy.y)

    def test_rescaled_matches_functional(self, xy):
        est = RescaledLeastSquares(sigma2=0.25).fit(xy.X, xy.y)
        assert np.allclose(est.coef_, rescaled_ls(xy, 0.25), atol=1e-15)

    def test_lahiri_larsen_matches_functional(self, xy):
        est = LahiriLarsenRegressor(alpha=0.2).fit(xy.X, xy.y)
        oracle = lahiri_larsen_fit(xy, build_uniform_q(xy.n, 0.2))
        assert np.allclose(est.coef_, oracle, atol=1e-15)

    def test_not_fitted_raises(self, xy):
        with pytest.raises(NotFittedError):
            LeastSquaresRegressor().predict(xy.X)


class TestMismatchEMRegressor:
    def test_simultaneous_matches_functional(self, xy):
        est = MismatchEMRegressor(variant="simultaneous").fit(xy.X, xy.y)
        out = em_simultaneous(xy)
        assert np.allclose(est.coef_, out.theta_hat.beta, atol=1e-12)
        assert est.alpha_ == pytest.approx(out.theta_hat.alpha)
        assert est.sigma2_ == pytest.approx(out.theta_hat.sigma2)
        assert est.converged_ == out.converged
        assert est.n_iter_ == out.n_iter

    def test_compute_se_attaches_intervals(self, xy):
        est = MismatchEMRegressor(variant="plugin", compute_se=True).fit(xy.X, xy.y)
        assert est.se_.shape == (6,)
        assert est.ci_.shape == (6, 2)
        assert np.all(est.se_ >= 0)

    def test_known_norms_requires_parameters(self, xy):
        with pytest.raises(ValueError, match="requires"):
            MismatchEMRegressor(variant="known_norms").fit(xy.X, xy.y)
        est = MismatchEMRegressor(variant="known_norms", sigma2=0.25, beta_norm=1.0)
        est.fit(xy.X, xy.y)
        assert hasattr(est, "coef_")

    def test_unknown_variant(self, xy):
        with pytest.raises(ValueError, match="variant"):
            MismatchEMRegressor(variant="nope").fit(xy.X, xy.y)

    def test_clone_and_params_roundtrip(self):
        est = MismatchEMRegressor(variant="plugin", max_iter=37, tol=1e-6)
        dup = clone(est)
        assert dup.get_params()["max_iter"] == 37
        dup.set_params(max_iter=11)
        assert dup.max_iter == 11 and est.max_iter == 37

    def test_recover_permutation_bijection(self, xy):
        est = MismatchEMRegressor(variant="plugin").fit(xy.X, xy.y)
        perm = est.recover_permutation(xy.X, xy.y)
        assert np.array_equal(np.sort(perm.map), np.arange(xy.n))

    def test_score_reasonable(self, xy):
        est = MismatchEMRegressor(variant="simultaneous").fit(xy.X, xy.y)
        # R^2 against the (partially shuffled) responses is still informative
        assert est.score(xy.X, xy.y) > 0.3

    def test_mismatched_rows_get_high_responsibility(self):
        data = make_data(n=200, d=4, sigma=0.05, alpha=0.15, seed=81)
        est = MismatchEMRegressor(variant="simultaneous").fit(data.X, data.y)
        perm, _ = data.truth
        # a mismatched response can coincidentally sit near its wrong row's
        # prediction, so separation is strong but not perfect
        moved = perm.map != np.arange(data.n)
        assert est.responsibilities_[moved].mean() > 0.75
        assert est.responsibilities_[~moved].mean() < 0.1
