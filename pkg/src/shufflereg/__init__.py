"""Linear regression with partially mismatched (shuffled) response pairs.

The response vector is modeled as a permuted linear model
``y = P X beta + sigma eps`` where the unknown permutation ``P`` moves an
unknown fraction ``alpha`` of the indices. Estimation works through a
pseudo-likelihood in which each observation follows a two-component
Gaussian mixture; EM-type solvers, baseline estimators, sandwich standard
errors, a mismatch-presence test, and a seeded simulation harness are
provided, plus scikit-learn style estimator classes and a CLI.
"""

from .baselines import (
    QMatrix,
    build_uniform_q,
    lahiri_larsen_fit,
    ols_fit,
    oracle_fit,
    recover_permutation,
    rescaled_ls,
)
from .data import (
    Dataset,
    RngSeed,
    SparsePermutation,
    Theta,
    apply_permutation,
    sample_beta_sphere,
    sample_sparse_permutation,
    simulate,
)
from .em import (
    EMConfig,
    EMTrace,
    FitOutput,
    default_init,
    em_known_norms,
    em_plugin,
    em_simultaneous,
    fisher_direction,
    weighted_ls,
)
from .estimators import (
    LahiriLarsenRegressor,
    LeastSquaresRegressor,
    MismatchEMRegressor,
    OracleLeastSquares,
    RescaledLeastSquares,
)
from .exceptions import (
    DataError,
    DegenerateWeightsError,
    FactorizationError,
    NumericalError,
    ShuffleRegError,
    SingularDesignError,
)
from .gof import (
    ProjectedResiduals,
    TestResult,
    cvm_statistic,
    ks_statistic,
    mc_pvalue,
    mismatch_test,
    project_residuals,
)
from .harness import (
    CellSummary,
    GridSpec,
    PowerCell,
    Prop2Report,
    bootstrap_se_median,
    power_curve,
    prop2_check,
    run_grid,
)
from .inference import SandwichResult, hessian_pseudo, sandwich, score_contributions
from .mixture import (
    loss_table,
    mixture_density,
    neg_pseudo_loglik,
    responsibilities,
    robust_loss,
)

__version__ = "0.1.0"
