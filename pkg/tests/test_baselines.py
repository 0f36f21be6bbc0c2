import numpy as np
import pytest

from shufflereg import (
    Dataset,
    RngSeed,
    SingularDesignError,
    SparsePermutation,
    Theta,
    apply_permutation,
    build_uniform_q,
    lahiri_larsen_fit,
    ols_fit,
    oracle_fit,
    recover_permutation,
    rescaled_ls,
    sample_beta_sphere,
    simulate,
)

from conftest import make_data


class TestOlsFit:
    def test_noiseless_exact(self):
        beta = np.array([2.0, -1.0, 0.5])
        data = simulate(30, 3, Theta(beta, 0.0, 0.0), 0, RngSeed(0))
        assert np.allclose(ols_fit(data), beta, atol=1e-10)

    def test_duplicated_column_errors(self):
        gen = RngSeed(1).generator()
        col = gen.standard_normal(20)
        X = np.column_stack([col, col, gen.standard_normal(20)])
        with pytest.raises(SingularDesignError):
            ols_fit(Dataset(X, gen.standard_normal(20)))

    @pytest.mark.slow
    def test_mc_mean_shrinks_by_match_rate(self):
        # 2000 replications at (n=200, d=10, sigma=.5, alpha=.3)
        n, d, sigma, alpha, reps = 200, 10, 0.5, 0.3, 2000
        k = int(alpha * n)
        beta_star = sample_beta_sphere(d, 1.0, RngSeed(77, 0))
        fits = np.empty((reps, d))
        for r in range(reps):
            gen = RngSeed(77, r + 1).generator()
            data = simulate(n, d, Theta(beta_star, sigma**2, alpha), k, gen)
            fits[r] = ols_fit(data)
        se = fits.std(axis=0, ddof=1) / np.sqrt(reps)
        bias = fits.mean(axis=0) - (1 - alpha) * beta_star
        assert np.all(np.abs(bias) <= 3 * se)
        # covariance trace close to the leading-order prediction
        c2 = (2 * alpha - alpha**2) * 1.0 + sigma**2
        ratio = np.trace(np.cov(fits.T)) / (d * c2 / (n - d))
        assert 0.9 <= ratio <= 1.1


class TestOracleFit:
    def test_matches_ols_when_identity(self):
        data = make_data(n=50, d=3, sigma=0.4, alpha=0.0, seed=2)
        assert np.allclose(oracle_fit(data), ols_fit(data), atol=1e-12)

    def test_noiseless_any_k_exact(self):
        beta = np.array([1.0, 2.0])
        data = simulate(24, 2, Theta(beta, 0.0, 0.0), 8, RngSeed(3))
        assert np.allclose(oracle_fit(data), beta, atol=1e-10)

    def test_equals_compose_then_fit(self):
        data = make_data(n=40, d=3, sigma=0.7, alpha=0.25, seed=4)
        perm, _ = data.truth
        unshuffled = Dataset(data.X, apply_permutation(perm.inverse(), data.y))
        assert np.allclose(oracle_fit(data), ols_fit(unshuffled), atol=1e-12)

    def test_requires_truth(self):
        data = make_data(seed=5)
        with pytest.raises(ValueError, match="truth"):
            oracle_fit(Dataset(data.X, data.y))


class TestRescaledLs:
    def test_zero_response(self):
        gen = RngSeed(6).generator()
        data = Dataset(gen.standard_normal((20, 3)), np.zeros(20))
        assert np.array_equal(rescaled_ls(data, 0.5), np.zeros(3))

    def test_norm_identity(self):
        data = make_data(n=80, d=4, sigma=0.5, alpha=0.2, seed=7)
        s2 = 0.25
        beta = rescaled_ls(data, s2)
        expected = np.sqrt(max(0.0, np.mean(data.y**2) - s2))
        assert np.linalg.norm(beta) == pytest.approx(expected, rel=1e-12)

    def test_direction_matches_ols(self):
        data = make_data(n=80, d=4, sigma=0.5, alpha=0.2, seed=8)
        b_r = rescaled_ls(data, 0.25)
        b_ls = ols_fit(data)
        cos = b_r @ b_ls / (np.linalg.norm(b_r) * np.linalg.norm(b_ls))
        assert cos == pytest.approx(1.0, abs=1e-12)

    def test_clamped_radicand(self):
        data = make_data(n=30, d=2, sigma=0.3, alpha=0.0, seed=9)
        assert np.array_equal(rescaled_ls(data, 1e6), np.zeros(2))

    def test_negative_sigma2_error(self):
        with pytest.raises(ValueError):
            rescaled_ls(make_data(seed=10), -1.0)


class TestUniformQ:
    def test_alpha_zero_is_identity(self):
        q = build_uniform_q(7, 0.0)
        assert np.allclose(q.dense(), np.eye(7), atol=1e-15)

    def test_row_sums_one(self):
        for alpha in [0.0, 0.1, 0.5, 0.9]:
            q = build_uniform_q(11, alpha)
            assert np.allclose(q.dense().sum(axis=1), 1.0, atol=1e-14)

    def test_diagonal_is_match_rate(self):
        q = build_uniform_q(9, 0.3).dense()
        assert np.allclose(np.diag(q), 0.7, atol=1e-14)
        off = q[~np.eye(9, dtype=bool)]
        assert np.allclose(off, 0.3 / 8, atol=1e-14)

    def test_entries_nonnegative_up_to_feasible_alpha(self):
        n = 8
        q = build_uniform_q(n, (n - 1) / n).dense()
        assert q.min() >= -1e-15

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            build_uniform_q(5, 1.2)


class TestLahiriLarsen:
    def test_identity_q_matches_ols(self):
        data = make_data(n=60, d=4, sigma=0.4, alpha=0.15, seed=11)
        q = build_uniform_q(data.n, 0.0)
        assert np.allclose(lahiri_larsen_fit(data, q), ols_fit(data), atol=1e-10)

    def test_matches_dense_evaluation(self):
        gen = RngSeed(12).generator()
        for n, d, alpha in [(20, 2, 0.2), (50, 5, 0.45)]:
            data = make_data(n=n, d=d, sigma=0.5, alpha=alpha, seed=int(gen.integers(1e6)))
            q = build_uniform_q(n, alpha)
            Qd = q.dense()
            A = data.X.T @ Qd.T @ Qd @ data.X
            b = data.X.T @ Qd.T @ data.y
            dense = np.linalg.solve(A, b)
            assert np.allclose(lahiri_larsen_fit(data, q), dense, atol=1e-10)

    def test_row_order_invariance(self):
        data = make_data(n=40, d=3, sigma=0.6, alpha=0.3, seed=13)
        q = build_uniform_q(data.n, 0.3)
        base = lahiri_larsen_fit(data, q)
        perm = RngSeed(14).generator().permutation(data.n)
        shuffled = Dataset(data.X[perm], data.y[perm])
        assert np.allclose(lahiri_larsen_fit(shuffled, q), base, atol=1e-10)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            lahiri_larsen_fit(make_data(n=30, seed=15), build_uniform_q(29, 0.1))

    @pytest.mark.slow
    def test_mc_unbiased(self):
        n, d, sigma, alpha, reps = 200, 10, 0.5, 0.3, 2000
        k = int(alpha * n)
        beta_star = sample_beta_sphere(d, 1.0, RngSeed(55, 0))
        q = build_uniform_q(n, alpha)
        fits = np.empty((reps, d))
        for r in range(reps):
            gen = RngSeed(55, r + 1).generator()
            data = simulate(n, d, Theta(beta_star, sigma**2, alpha), k, gen)
            fits[r] = lahiri_larsen_fit(data, q)
        se = fits.std(axis=0, ddof=1) / np.sqrt(reps)
        assert np.all(np.abs(fits.mean(axis=0) - beta_star) <= 3 * se)


class TestRecoverPermutation:
    def test_fitted_equals_y_identity(self):
        y = np.array([3.0, -1.0, 2.0, 0.5])
        assert np.array_equal(recover_permutation(y, y).map, np.arange(4))

    def test_reversed_fitted_gives_reversal(self):
        y = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        assert np.array_equal(recover_permutation(y, y[::-1]).map, np.arange(5)[::-1])

    def test_always_bijection_with_ties(self):
        gen = RngSeed(16).generator()
        for _ in range(50):
            n = int(gen.integers(2, 12))
            y = gen.integers(0, 3, size=n).astype(float)  # heavy ties
            f = gen.integers(0, 3, size=n).astype(float)
            m = recover_permutation(y, f).map
            assert np.array_equal(np.sort(m), np.arange(n))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            recover_permutation(np.zeros(3), np.zeros(4))
