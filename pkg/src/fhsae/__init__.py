"""Small-area estimation under the basic area-level model.

Each area reports a direct estimate ``y_i`` with known sampling variance
``d_i``; the model adds a random area effect with unknown variance ``a``.
The package fits ``a`` by residual likelihood or by an area-specific
adjusted likelihood whose maximizer is strictly positive, forms the
shrinkage predictors, and attaches MSE estimates (Taylor-series and
parametric-bootstrap flavors). A Monte Carlo driver measures relative
bias and relative RMSE of everything against simulated truth.

Hot loops run in a compiled core when available, with an equivalent
pure-Python fallback (see :mod:`fhsae.backends`).
"""

from .backends import active_backend_name, get_backend
from .errors import (
    DegreesOfFreedomTooSmall,
    DimensionMismatch,
    FhError,
    InsufficientDegreesOfFreedom,
    MaxIterExceeded,
    MultipleSignChanges,
    NoFiniteValues,
    NonFiniteInput,
    NonpositiveSamplingVariance,
    NoSignChange,
    NotBalanced,
    OptimizationDidNotConverge,
    ParseError,
    RankDeficientX,
    SchemaError,
    SingularNormalEquations,
    ZeroTruth,
)
from .fit import (
    FitConfig,
    FitMoments,
    adjusted_values,
    fit_area_adjusted,
    fit_area_adjusted_all,
    fit_bias_variance,
    fit_morris_balanced,
    fit_reml,
    fit_unbiased_balanced,
)
from .likelihood import (
    ObjectiveParts,
    adjusted_log_objective,
    evaluate_objective,
    log_area_factor,
    log_positivity_factor,
    log_residual_likelihood,
    positivity_factor_slope,
)
from .model import (
    EblupResult,
    FhDataset,
    HyperEstimate,
    ShrinkageVector,
    eblup,
    fingerprint,
    gls_beta,
    shrinkage,
    validate_dataset,
)
from .mse import (
    ALL_TAGS,
    BOOT_TAGS,
    TAYLOR_TAGS,
    BootstrapResult,
    GDecomposition,
    MseEstimatorVariances,
    MseReport,
    balanced_mse_variances,
    g_decomposition,
    mse_bootstrap,
    mse_bootstrap_area,
    mse_report,
    mse_taylor,
)
from .optimize import SearchResult, find_root_balanced, maximize_on_interval
from .sim import (
    MetricRow,
    SimDesign,
    SimResult,
    builtin_design,
    rb_rrmse,
    run_monte_carlo,
    simulate_fh,
)

__version__ = "0.1.0"

__all__ = [
    "ALL_TAGS",
    "BOOT_TAGS",
    "TAYLOR_TAGS",
    "BootstrapResult",
    "DegreesOfFreedomTooSmall",
    "DimensionMismatch",
    "EblupResult",
    "FhDataset",
    "FhError",
    "FitConfig",
    "FitMoments",
    "GDecomposition",
    "HyperEstimate",
    "InsufficientDegreesOfFreedom",
    "MaxIterExceeded",
    "MetricRow",
    "MseEstimatorVariances",
    "MseReport",
    "MultipleSignChanges",
    "NoFiniteValues",
    "NonFiniteInput",
    "NonpositiveSamplingVariance",
    "NoSignChange",
    "NotBalanced",
    "ObjectiveParts",
    "OptimizationDidNotConverge",
    "ParseError",
    "RankDeficientX",
    "SchemaError",
    "SearchResult",
    "ShrinkageVector",
    "SimDesign",
    "SimResult",
    "SingularNormalEquations",
    "ZeroTruth",
    "__version__",
    "active_backend_name",
    "adjusted_log_objective",
    "adjusted_values",
    "balanced_mse_variances",
    "builtin_design",
    "eblup",
    "evaluate_objective",
    "find_root_balanced",
    "fingerprint",
    "fit_area_adjusted",
    "fit_area_adjusted_all",
    "fit_bias_variance",
    "fit_morris_balanced",
    "fit_reml",
    "fit_unbiased_balanced",
    "g_decomposition",
    "get_backend",
    "gls_beta",
    "log_area_factor",
    "log_positivity_factor",
    "log_residual_likelihood",
    "maximize_on_interval",
    "mse_bootstrap",
    "mse_bootstrap_area",
    "mse_report",
    "mse_taylor",
    "positivity_factor_slope",
    "rb_rrmse",
    "run_monte_carlo",
    "shrinkage",
    "simulate_fh",
    "validate_dataset",
]
