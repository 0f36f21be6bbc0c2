"""Seeded Monte-Carlo benchmark: error tables, power curves, bias checks.

Replications are deterministic functions of a master seed: replication
``r`` of cell ``c`` uses stream ``master.stream + c * reps + r``, and the
bootstrap summaries draw from dedicated streams past the replication block,
so results are bit-identical across runs and across worker counts. Cells
run in parallel processes; ``SHUFFLEREG_THREADS`` caps the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import lahiri_larsen_fit, ols_fit, oracle_fit, rescaled_ls, build_uniform_q
from .data import Dataset, RngSeed, Theta, sample_beta_sphere, simulate
from .em import EMConfig, em_known_norms, em_plugin, em_simultaneous
from .exceptions import NumericalError
from .gof import mismatch_test

__all__ = [
    "ESTIMATOR_IDS",
    "METRICS",
    "GridSpec",
    "CellSummary",
    "PowerCell",
    "Prop2Report",
    "bootstrap_se_median",
    "tukey_outlier_fraction",
    "run_grid",
    "power_curve",
    "prop2_check",
    "worker_count",
]

ESTIMATOR_IDS = ("ols", "oracle", "rescaled", "lahiri_larsen", "em_known", "em_plugin", "em_simul")
METRICS = ("beta_rel_err", "sigma_rel_err", "alpha_abs_err")

# Which metrics each estimator produces (all produce beta_rel_err).
_ESTIMATOR_METRICS = {
    "ols": ("beta_rel_err",),
    "oracle": ("beta_rel_err",),
    "rescaled": ("beta_rel_err",),
    "lahiri_larsen": ("beta_rel_err",),
    "em_known": ("beta_rel_err", "alpha_abs_err"),
    "em_plugin": ("beta_rel_err", "sigma_rel_err", "alpha_abs_err"),
    "em_simul": ("beta_rel_err", "sigma_rel_err", "alpha_abs_err"),
}


def worker_count(n_tasks: int) -> int:
    """Parallel worker count, capped by the SHUFFLEREG_THREADS env var."""
    cap = os.cpu_count() or 1
    env = os.environ.get("SHUFFLEREG_THREADS")
    if env is not None:
        cap = min(cap, max(int(env), 1))
    return max(min(n_tasks, cap), 1)


@dataclass(frozen=True)
class GridSpec:
    """Benchmark grid: sample sizes, noise levels, mismatch fractions."""

    n: int
    d: int
    sigma_list: Tuple[float, ...]
    alpha_list: Tuple[float, ...]
    master_seed: RngSeed
    reps: int = 100
    estimators: Tuple[str, ...] = ("em_simul", "em_plugin", "oracle")
    beta_norm: float = 1.0
    em_config: EMConfig = field(default_factory=EMConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "sigma_list", tuple(float(s) for s in self.sigma_list))
        object.__setattr__(self, "alpha_list", tuple(float(a) for a in self.alpha_list))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if any(s <= 0 for s in self.sigma_list):
            raise ValueError("all sigma values must be positive")
        if any(not 0 <= a <= (self.n - 1) / self.n for a in self.alpha_list):
            raise ValueError("alpha values must lie in [0, (n-1)/n]")
        for a in self.alpha_list:
            if round(a * self.n) == 1:
                raise ValueError(f"alpha={a} maps to a single mismatch, which is impossible")
        unknown = set(self.estimators) - set(ESTIMATOR_IDS)
        if unknown:
            raise ValueError(f"unknown estimator ids: {sorted(unknown)}")

    @property
    def cells(self) -> List[Tuple[float, float]]:
        return [(s, a) for s in self.sigma_list for a in self.alpha_list]


@dataclass(frozen=True)
class CellSummary:
    """Median with bootstrap SE, Tukey outlier fraction, and raw values."""

    median: float
    bootstrap_se: float
    outlier_fraction: float
    raw: np.ndarray
    n_failed: int


def bootstrap_se_median(raw: np.ndarray, B: int = 1000, rng: RngSeed = None) -> float:
    """Standard deviation of the median over ``B`` resamples with replacement."""
    raw = np.asarray(raw, dtype=float)
    if raw.size == 0:
        raise ValueError("raw must be non-empty")
    if B < 100:
        raise ValueError("B must be >= 100")
    if rng is None:
        raise ValueError("rng is required")
    if raw.size == 1 or np.ptp(raw) == 0.0:
        return 0.0
    gen = rng.generator() if isinstance(rng, RngSeed) else rng
    idx = gen.integers(0, raw.size, size=(B, raw.size))
    medians = np.median(raw[idx], axis=1)
    return float(medians.std(ddof=1))


def tukey_outlier_fraction(raw: np.ndarray) -> float:
    """Fraction of values exceeding Q3 + 1.5 IQR."""
    raw = np.asarray(raw, dtype=float)
    q1, q3 = np.percentile(raw, [25.0, 75.0])
    return float(np.mean(raw > q3 + 1.5 * (q3 - q1)))


def _summarize(raw: np.ndarray, boot_rng: RngSeed, boot_B: int = 1000) -> CellSummary:
    ok = raw[np.isfinite(raw)]
    n_failed = int(raw.size - ok.size)
    if ok.size == 0:
        return CellSummary(np.nan, np.nan, np.nan, ok, n_failed)
    return CellSummary(
        median=float(np.median(ok)),
        bootstrap_se=bootstrap_se_median(ok, boot_B, boot_rng),
        outlier_fraction=tukey_outlier_fraction(ok),
        raw=ok,
        n_failed=n_failed,
    )


def _fit_estimator(
    est: str, data: Dataset, sigma: float, beta_norm: float, cfg: EMConfig
) -> Tuple[np.ndarray, Optional[float], Optional[float]]:
    """Returns (beta_hat, sigma2_hat | None, alpha_hat | None); raises on failure."""
    if est == "ols":
        return ols_fit(data), None, None
    if est == "oracle":
        return oracle_fit(data), None, None
    if est == "rescaled":
        return rescaled_ls(data, sigma**2), None, None
    if est == "lahiri_larsen":
        perm, theta = data.truth
        return lahiri_larsen_fit(data, build_uniform_q(data.n, theta.alpha)), None, None
    if est == "em_known":
        fit = em_known_norms(data, sigma**2, beta_norm, cfg=cfg)
    elif est == "em_plugin":
        fit = em_plugin(data, cfg=cfg)
    elif est == "em_simul":
        fit = em_simultaneous(data, cfg=cfg)
    else:
        raise ValueError(f"unknown estimator id {est!r}")
    if not fit.converged:
        raise NumericalError(f"{est} did not converge")
    sigma2_hat = None if est == "em_known" else fit.theta_hat.sigma2
    return fit.theta_hat.beta, sigma2_hat, fit.theta_hat.alpha


def _run_cell(spec: GridSpec, cell_idx: int) -> Dict[Tuple[float, float, str, str], CellSummary]:
    sigma, alpha = spec.cells[cell_idx]
    n, d, reps = spec.n, spec.d, spec.reps
    k = int(round(alpha * n))
    raws = {
        (est, metric): np.full(reps, np.nan)
        for est in spec.estimators
        for metric in _ESTIMATOR_METRICS[est]
    }
    for rep in range(reps):
        stream = spec.master_seed.stream + cell_idx * reps + rep
        gen = RngSeed(spec.master_seed.seed, stream).generator()
        beta_star = sample_beta_sphere(d, spec.beta_norm, gen)
        theta_star = Theta(beta_star, sigma**2, k / n)
        data = simulate(n, d, theta_star, k, gen)
        try:
            denom = float(np.linalg.norm(oracle_fit(data) - beta_star))
        except NumericalError:
            continue
        if denom == 0.0:
            continue
        for est in spec.estimators:
            try:
                beta_hat, sigma2_hat, alpha_hat = _fit_estimator(
                    est, data, sigma, spec.beta_norm, spec.em_config
                )
            except NumericalError:
                continue
            raws[(est, "beta_rel_err")][rep] = (
                float(np.linalg.norm(beta_hat - beta_star)) / denom
            )
            if "sigma_rel_err" in _ESTIMATOR_METRICS[est] and sigma2_hat is not None:
                raws[(est, "sigma_rel_err")][rep] = abs(np.sqrt(sigma2_hat) / sigma - 1.0)
            if "alpha_abs_err" in _ESTIMATOR_METRICS[est] and alpha_hat is not None:
                raws[(est, "alpha_abs_err")][rep] = abs(alpha_hat - k / n)

    boot_base = spec.master_seed.stream + len(spec.cells) * reps
    out = {}
    for est_idx, est in enumerate(spec.estimators):
        for metric_idx, metric in enumerate(METRICS):
            if metric not in _ESTIMATOR_METRICS[est]:
                continue
            boot_stream = boot_base + (
                (cell_idx * len(spec.estimators) + est_idx) * len(METRICS) + metric_idx
            )
            summary = _summarize(
                raws[(est, metric)], RngSeed(spec.master_seed.seed, boot_stream)
            )
            out[(sigma, alpha, est, metric)] = summary
    return out


def run_grid(spec: GridSpec) -> Dict[Tuple[float, float, str, str], CellSummary]:
    """Run the benchmark grid; keys are ``(sigma, alpha, estimator, metric)``.

    Per replication the oracle error is the denominator of the coefficient
    metric; estimator failures (singular fits, non-convergence) count as
    missing values and are excluded from the summaries with ``n_failed``
    reporting the exclusions. Deterministic given the master seed.
    """
    n_cells = len(spec.cells)
    workers = worker_count(n_cells)
    results: Dict[Tuple[float, float, str, str], CellSummary] = {}
    if workers == 1:
        fragments = [_run_cell(spec, c) for c in range(n_cells)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fragments = list(pool.map(_run_cell, [spec] * n_cells, range(n_cells)))
    for frag in fragments:
        results.update(frag)
    return results


@dataclass(frozen=True)
class PowerCell:
    """Rejection rates of the mismatch test at one grid point."""

    n: int
    d: int
    sigma: float
    alpha: float
    reps: int
    level: float
    mc_reps: int
    rate_cm: float
    rate_ks: float


def _power_cell(args) -> PowerCell:
    (n, d, sigma, alpha, reps, level, B, seed, beta_norm, cell_idx) = args
    k = int(round(alpha * n))
    rej_cm = 0
    rej_ks = 0
    for rep in range(reps):
        gen = RngSeed(seed.seed, seed.stream + cell_idx * reps + rep).generator()
        beta_star = sample_beta_sphere(d, beta_norm, gen)
        data = simulate(n, d, Theta(beta_star, sigma**2, k / n), k, gen)
        res = mismatch_test(data, sigma, B=B, levels=(level,), rng=gen)
        rej_cm += res.p_cm <= level
        rej_ks += res.p_ks <= level
    return PowerCell(n, d, sigma, alpha, reps, level, B, rej_cm / reps, rej_ks / reps)


def power_curve(
    n_list: Sequence[int],
    alpha_list: Sequence[float],
    sigma_list: Sequence[float],
    reps: int,
    level: float,
    B: int,
    seed: RngSeed,
    d: int = 10,
    beta_norm: float = 1.0,
) -> List[PowerCell]:
    """Empirical rejection rates over a (n, sigma, alpha) grid."""
    grid = list(product(n_list, sigma_list, alpha_list))
    tasks = [
        (int(n), d, float(s), float(a), reps, level, B, seed, beta_norm, idx)
        for idx, (n, s, a) in enumerate(grid)
    ]
    workers = worker_count(len(tasks))
    if workers == 1:
        return [_power_cell(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_power_cell, tasks))


@dataclass(frozen=True)
class Prop2Report:
    """Monte-Carlo check of the naive-OLS bias and covariance predictions."""

    beta_star: np.ndarray
    alpha_star: float
    mean_beta: np.ndarray
    bias: np.ndarray
    mc_se: np.ndarray
    max_abs_z: float
    trace_cov: float
    trace_pred: float
    trace_ratio: float
    c2: float


def prop2_check(
    n: int, d: int, sigma: float, alpha: float, reps: int, seed: RngSeed
) -> Prop2Report:
    """Compare naive-OLS sampling moments to ``(1 - alpha) beta`` and
    ``d c^2 / (n - d)`` with ``c^2 = (2 alpha - alpha^2) ||beta||^2 + sigma^2``.

    One coefficient vector is drawn on the unit sphere and held fixed; each
    replication redraws design, permutation and noise.
    """
    k = int(round(alpha * n))
    alpha_star = k / n
    beta_star = sample_beta_sphere(d, 1.0, seed)
    fits = np.empty((reps, d))
    for rep in range(reps):
        gen = RngSeed(seed.seed, seed.stream + 1 + rep).generator()
        data = simulate(n, d, Theta(beta_star, sigma**2, alpha_star), k, gen)
        fits[rep] = ols_fit(data)
    mean_beta = fits.mean(axis=0)
    bias = mean_beta - (1.0 - alpha_star) * beta_star
    mc_se = fits.std(axis=0, ddof=1) / np.sqrt(reps)
    # rounding-level bias (degenerate noiseless case) counts as exactly zero
    exact = np.abs(bias) <= 1e-12 * (1.0 + np.abs(beta_star))
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(exact, 0.0, bias / mc_se)
    c2 = (2.0 * alpha_star - alpha_star**2) * float(beta_star @ beta_star) + sigma**2
    trace_cov = float(np.trace(np.cov(fits.T))) if reps > 1 else 0.0
    trace_pred = d * c2 / (n - d)
    ratio = trace_cov / trace_pred if trace_pred > 0 else np.nan
    return Prop2Report(
        beta_star=beta_star,
        alpha_star=alpha_star,
        mean_beta=mean_beta,
        bias=bias,
        mc_se=mc_se,
        max_abs_z=float(np.max(np.abs(z))),
        trace_cov=trace_cov,
        trace_pred=trace_pred,
        trace_ratio=float(ratio),
        c2=float(c2),
    )
