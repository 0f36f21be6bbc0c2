import numpy as np
import pytest

from shufflereg import (
    GridSpec,
    RngSeed,
    bootstrap_se_median,
    power_curve,
    prop2_check,
    run_grid,
)
from shufflereg.harness import METRICS, tukey_outlier_fraction, worker_count


def small_spec(**kw):
    base = dict(
        n=60,
        d=3,
        sigma_list=(0.5,),
        alpha_list=(0.2,),
        master_seed=RngSeed(123, 0),
        reps=5,
        estimators=("ols", "oracle", "em_plugin"),
    )
    base.update(kw)
    return GridSpec(**base)


class TestBootstrapSe:
    def test_constant_vector_zero(self):
        assert bootstrap_se_median(np.full(50, 3.3), 200, RngSeed(0)) == 0.0

    def test_single_value_zero(self):
        assert bootstrap_se_median(np.array([2.0]), 200, RngSeed(0)) == 0.0

    def test_matches_asymptotic_median_se(self):
        # SE of the median of 100 standard normals ~ 1.2533 / 10
        gen = RngSeed(1).generator()
        vals = [
            bootstrap_se_median(gen.standard_normal(100), 500, RngSeed(2, r))
            for r in range(40)
        ]
        target = 1.2533 / 10.0
        assert abs(np.mean(vals) - target) / target < 0.2

    def test_validations(self):
        with pytest.raises(ValueError):
            bootstrap_se_median(np.array([]), 200, RngSeed(0))
        with pytest.raises(ValueError):
            bootstrap_se_median(np.ones(5), 10, RngSeed(0))
        with pytest.raises(ValueError):
            bootstrap_se_median(np.ones(5), 200, None)


class TestTukeyOutliers:
    def test_hand_computed(self):
        raw = np.array([1.0, 2, 3, 4, 5, 6, 7, 8, 100.0])
        q1, q3 = np.percentile(raw, [25, 75])
        expected = np.mean(raw > q3 + 1.5 * (q3 - q1))
        assert tukey_outlier_fraction(raw) == pytest.approx(expected)
        assert tukey_outlier_fraction(raw) == pytest.approx(1.0 / 9.0)

    def test_no_outliers(self):
        assert tukey_outlier_fraction(np.linspace(0, 1, 20)) == 0.0


class TestGridSpec:
    def test_validations(self):
        with pytest.raises(ValueError):
            small_spec(reps=0)
        with pytest.raises(ValueError):
            small_spec(sigma_list=(0.0,))
        with pytest.raises(ValueError):
            small_spec(alpha_list=(0.999,))  # > (n-1)/n impossible here
        with pytest.raises(ValueError):
            small_spec(estimators=("nope",))
        with pytest.raises(ValueError):
            small_spec(n=100, alpha_list=(0.01,))  # k would be 1


class TestRunGrid:
    def test_oracle_metric_identically_one(self):
        res = run_grid(small_spec())
        cs = res[(0.5, 0.2, "oracle", "beta_rel_err")]
        assert np.allclose(cs.raw, 1.0, atol=1e-12)
        assert cs.n_failed == 0

    def test_deterministic_bit_identical(self):
        a = run_grid(small_spec())
        b = run_grid(small_spec())
        assert a.keys() == b.keys()
        for key in a:
            assert a[key].median == b[key].median
            assert a[key].bootstrap_se == b[key].bootstrap_se
            assert np.array_equal(a[key].raw, b[key].raw)

    def test_serial_equals_parallel(self, monkeypatch):
        spec = small_spec(sigma_list=(0.5, 1.0), alpha_list=(0.1, 0.3))
        monkeypatch.setenv("SHUFFLEREG_THREADS", "1")
        serial = run_grid(spec)
        monkeypatch.setenv("SHUFFLEREG_THREADS", "2")
        parallel = run_grid(spec)
        for key in serial:
            assert np.array_equal(serial[key].raw, parallel[key].raw)

    def test_metrics_present_per_estimator(self):
        res = run_grid(small_spec())
        keys = set(res)
        assert (0.5, 0.2, "ols", "beta_rel_err") in keys
        assert (0.5, 0.2, "em_plugin", "sigma_rel_err") in keys
        assert (0.5, 0.2, "em_plugin", "alpha_abs_err") in keys
        assert (0.5, 0.2, "ols", "sigma_rel_err") not in keys

    def test_summaries_recomputable_from_raw(self):
        spec = small_spec(reps=8)
        res = run_grid(spec)
        n_cells = len(spec.cells)
        boot_base = spec.master_seed.stream + n_cells * spec.reps
        for (sigma, alpha, est, metric), cs in res.items():
            cell_idx = spec.cells.index((sigma, alpha))
            est_idx = spec.estimators.index(est)
            metric_idx = METRICS.index(metric)
            stream = boot_base + (
                (cell_idx * len(spec.estimators) + est_idx) * len(METRICS) + metric_idx
            )
            assert np.median(cs.raw) == cs.median
            assert tukey_outlier_fraction(cs.raw) == cs.outlier_fraction
            re_se = bootstrap_se_median(cs.raw, 1000, RngSeed(spec.master_seed.seed, stream))
            assert re_se == cs.bootstrap_se

    @pytest.mark.slow
    def test_reproduces_published_error_cell(self):
        # joint EM at (sigma=.1, alpha=.2) has median relative error ~1.21
        spec = small_spec(n=200, d=10, reps=100, estimators=("em_simul",),
                          sigma_list=(0.1,), alpha_list=(0.2,),
                          master_seed=RngSeed(2040, 0))
        res = run_grid(spec)
        med = res[(0.1, 0.2, "em_simul", "beta_rel_err")].median
        assert abs(med - 1.21) <= 0.15

    @pytest.mark.slow
    def test_proposed_estimators_not_better_than_oracle_on_average(self):
        spec = small_spec(n=200, d=10, reps=60, estimators=("em_simul",),
                          sigma_list=(0.5,), alpha_list=(0.2,))
        res = run_grid(spec)
        raw = res[(0.5, 0.2, "em_simul", "beta_rel_err")].raw
        sem = raw.std(ddof=1) / np.sqrt(raw.size)
        assert raw.mean() >= 1.0 - 3 * sem


class TestPowerCurve:
    def test_rates_bounded_and_deterministic(self):
        cells = power_curve([60], [0.0, 0.2], [0.5], reps=20, level=0.05, B=39,
                            seed=RngSeed(9), d=3)
        again = power_curve([60], [0.0, 0.2], [0.5], reps=20, level=0.05, B=39,
                            seed=RngSeed(9), d=3)
        assert [c.rate_cm for c in cells] == [c.rate_cm for c in again]
        for c in cells:
            assert 0.0 <= c.rate_cm <= 1.0
            assert 0.0 <= c.rate_ks <= 1.0

    def test_high_snr_power_near_one(self):
        cells = power_curve([200], [0.3], [0.05], reps=20, level=0.05, B=99,
                            seed=RngSeed(10), d=5)
        assert cells[0].rate_cm >= 0.95

    @pytest.mark.slow
    def test_no_mismatch_cell_rate_matches_level(self):
        reps, level = 500, 0.05
        cells = power_curve([60], [0.0], [0.7], reps=reps, level=level, B=99,
                            seed=RngSeed(13), d=3)
        half_width = 1.96 * np.sqrt(level * (1 - level) / reps)
        assert abs(cells[0].rate_cm - level) <= half_width
        assert abs(cells[0].rate_ks - level) <= half_width


class TestProp2Check:
    def test_noiseless_unshuffled_zero_bias(self):
        rep = prop2_check(n=50, d=3, sigma=0.0, alpha=0.0, reps=20, seed=RngSeed(11))
        # every replication recovers beta exactly (up to solver rounding)
        assert np.allclose(rep.bias, 0.0, atol=1e-12)
        assert rep.max_abs_z == 0.0

    def test_report_fields(self):
        rep = prop2_check(n=60, d=3, sigma=0.5, alpha=0.2, reps=50, seed=RngSeed(12))
        assert rep.alpha_star == pytest.approx(0.2)
        assert rep.c2 == pytest.approx((2 * 0.2 - 0.04) * 1.0 + 0.25)
        assert rep.trace_pred == pytest.approx(3 * rep.c2 / 57)
        assert np.isfinite(rep.trace_ratio)


class TestWorkerCount:
    def test_env_cap(self, monkeypatch):
        monkeypatch.setenv("SHUFFLEREG_THREADS", "1")
        assert worker_count(8) == 1
        monkeypatch.delenv("SHUFFLEREG_THREADS")
        assert worker_count(1) == 1
        assert worker_count(0) == 1
