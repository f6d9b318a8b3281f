"""Adaptive sample splitting for valid, powerful randomization tests of
subgroup treatment effects, with an imputation-based CATE estimator,
closed-testing multiplicity control, and a synthetic experiment lab."""

from .data import (
    AdaSplitConfig,
    AnalysisReport,
    Dataset,
    FoldState,
    SubgroupPartition,
    partition_by_quantiles,
    read_dataset_csv,
    validate_dataset,
    write_dataset_csv,
)
from .engine import run, split_init, write_trace_csv
from .errors import AdaSplitError, ConfigError, ValidationError
from .linmodel import LinearModel, diversity_scores, fit_wls, predict
from .multtest import RejectionSet, closed_testing, fisher_combine, holm
from .nuisance import (
    NuisanceModel,
    SelectionModel,
    certainty,
    estimate_noise_var,
    expected_beta_distance,
    fit_bar_learner,
    fit_mu,
    fit_rlearner_ols,
    fit_rlearner_weighted,
    fit_selection_prob,
    marginalized_residual,
    one_minus_c2_series,
    posterior_e,
    scaled_residual,
)
from .randtest import (
    PValue,
    TestStatisticSpec,
    exact_pvalue,
    gaussian_approx_pvalue,
    mc_pvalue,
    optimal_soft_inclusion,
    phi_aipw,
    t_dm,
)
from .simlab import generate, reproduce_table, run_method

__version__ = "0.1.0"

__all__ = [
    "AdaSplitConfig", "AnalysisReport", "Dataset", "FoldState",
    "SubgroupPartition", "partition_by_quantiles", "read_dataset_csv",
    "validate_dataset", "write_dataset_csv",
    "run", "split_init", "write_trace_csv",
    "AdaSplitError", "ConfigError", "ValidationError",
    "LinearModel", "diversity_scores", "fit_wls", "predict",
    "RejectionSet", "closed_testing", "fisher_combine", "holm",
    "NuisanceModel", "SelectionModel", "certainty", "estimate_noise_var",
    "expected_beta_distance", "fit_bar_learner", "fit_mu",
    "fit_rlearner_ols", "fit_rlearner_weighted", "fit_selection_prob",
    "marginalized_residual", "one_minus_c2_series", "posterior_e",
    "scaled_residual",
    "PValue", "TestStatisticSpec", "exact_pvalue", "gaussian_approx_pvalue",
    "mc_pvalue", "optimal_soft_inclusion", "phi_aipw", "t_dm",
    "generate", "reproduce_table", "run_method",
    "__version__",
]
