"""Autocalibration and multicalibration post-processing for insurance
frequency premiums."""

from .categorical import (
    BinScheme,
    CalibrationConfig,
    CellBiasTable,
    IterativeModel,
    apply_iterative,
    balance_correct,
    cell_biases,
    iterate_multical_categorical,
    multibalance_correct,
    quantile_bins,
    select_credibility,
    shrink,
)
from .continuous import (
    ContinuousConfig,
    ContinuousModel,
    apply_continuous,
    iterate_multical_continuous,
    local_balance_correct,
    mbc_bivariate_centered,
    select_credibility_continuous,
)
from .data import (
    CsvSchema,
    PolicyRecord,
    Portfolio,
    bin_categorical,
    load_csv,
    split,
    write_csv,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DataValidationError,
    PremcalError,
    SchemaError,
)
from .glm import GlmModel, fit_baseline, predict
from .isotonic import StepFunction, step_eval, weighted_isotonic_fit
from .metrics import (
    ConvexOrderReport,
    DiagnosticsReport,
    bregman_loss,
    convex_order_check,
    diagnostics_report,
    gini_coefficient,
    poisson_deviance,
    residual_bias_table,
)
from .smoothing import (
    LocalSurface,
    SmoothConfig,
    knn_local_exposure,
    local_mean_1d,
    local_mean_2d,
)
from .synth import SynthConfig, SynthData, distorted_baseline, generate

__version__ = "0.1.0"

__all__ = [
    "BinScheme",
    "CalibrationConfig",
    "CellBiasTable",
    "ConfigError",
    "ContinuousConfig",
    "ContinuousModel",
    "ConvergenceError",
    "ConvexOrderReport",
    "CsvSchema",
    "DataValidationError",
    "DiagnosticsReport",
    "GlmModel",
    "IterativeModel",
    "LocalSurface",
    "PolicyRecord",
    "Portfolio",
    "PremcalError",
    "SchemaError",
    "SmoothConfig",
    "StepFunction",
    "SynthConfig",
    "SynthData",
    "apply_continuous",
    "apply_iterative",
    "balance_correct",
    "bin_categorical",
    "bregman_loss",
    "cell_biases",
    "convex_order_check",
    "diagnostics_report",
    "distorted_baseline",
    "fit_baseline",
    "generate",
    "gini_coefficient",
    "iterate_multical_categorical",
    "iterate_multical_continuous",
    "knn_local_exposure",
    "load_csv",
    "local_balance_correct",
    "local_mean_1d",
    "local_mean_2d",
    "mbc_bivariate_centered",
    "multibalance_correct",
    "poisson_deviance",
    "predict",
    "quantile_bins",
    "residual_bias_table",
    "select_credibility",
    "select_credibility_continuous",
    "shrink",
    "split",
    "step_eval",
    "weighted_isotonic_fit",
    "write_csv",
]
