"""Bayesian mixed membership models for high-dimensional continuous data.

Observations are convex combinations of per-feature Gaussians with dependent
features: each feature contributes a mean vector and low-rank loading vectors
whose outer products form within- and cross-feature covariance blocks.
Inference is MCMC (Gibbs with embedded Metropolis-Hastings steps, optional
tempered transitions), initialized by a multi-start two-stage search.
"""

from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    DomainError,
    MixmembError,
    NumericalError,
)
from .initialize import MsaConfig, multi_start
from .io import (
    ChainStore,
    StandardizeRecord,
    destandardize_cov,
    destandardize_loadings,
    destandardize_mean,
    load_csv,
    save_csv,
    standardize,
)
from .model import (
    CovarianceSummary,
    Dataset,
    ModelDims,
    ModelState,
    PriorConfig,
    ShrinkageHyperState,
    log_prior,
    loglik_conditional,
    loglik_marginal,
    mean_matrix,
    prior_draw,
    reconstruct_covariance,
    simulate_data,
)
from .postprocess import (
    BlockSummary,
    FitReport,
    membership_rescale,
    relabel,
    summarize,
)
from .sampler import SamplerOptions, SweepPlan, TemperSchedule, run_chain, sweep
from .selection import IcReport, aic, bic, dic, elbow_data, ic_report, param_count
from .simulate import (
    SimRecipe,
    generate_from_recipe,
    generate_heller,
    generate_ss1,
    generate_ss2,
    rmse,
    rse,
    ss1_recipe,
    ss2_recipe,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "DimensionError", "DomainError",
    "MixmembError", "NumericalError",
    "CovarianceSummary", "Dataset", "ModelDims", "ModelState",
    "PriorConfig", "ShrinkageHyperState",
    "log_prior", "loglik_conditional", "loglik_marginal", "mean_matrix",
    "prior_draw", "reconstruct_covariance", "simulate_data",
    "MsaConfig", "multi_start",
    "ChainStore", "StandardizeRecord", "destandardize_cov",
    "destandardize_loadings", "destandardize_mean", "load_csv", "save_csv",
    "standardize",
    "BlockSummary", "FitReport", "membership_rescale", "relabel", "summarize",
    "SamplerOptions", "SweepPlan", "TemperSchedule", "run_chain", "sweep",
    "IcReport", "aic", "bic", "dic", "elbow_data", "ic_report", "param_count",
    "SimRecipe", "generate_from_recipe", "generate_heller", "generate_ss1",
    "generate_ss2", "rmse", "rse", "ss1_recipe", "ss2_recipe",
    "__version__",
]
