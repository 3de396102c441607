"""Multiple systems estimation of hidden populations with Poisson log-linear models."""

from .bayes import (
    McmcSettings,
    PosteriorSummary,
    PriorConfig,
    main_effects_posterior,
    mcmc_sample,
    remove_empty_overlaps,
    summarize,
    threshold_refit,
)
from .datasets import NAMES as DATASETS
from .datasets import builtin
from .design import ModelSpec, build_design, check_all_models, check_existence, check_identifiability
from .exceptions import DataError, FitError
from .poisfit import FitResult, fit_mle, fit_table, profile_ci
from .select import exhaustive_search, export_scatter, stepwise_aic
from .tables import CellTable, ListSystem, consolidate, load_csv, omit_list, zero_fill

__version__ = "0.1.0"

__all__ = [
    "CellTable", "DATASETS", "DataError", "FitError", "FitResult", "ListSystem",
    "McmcSettings", "ModelSpec", "PosteriorSummary", "PriorConfig", "build_design",
    "builtin", "check_all_models", "check_existence", "check_identifiability",
    "consolidate", "exhaustive_search", "export_scatter", "fit_mle", "fit_table",
    "load_csv", "main_effects_posterior", "mcmc_sample", "omit_list", "profile_ci",
    "remove_empty_overlaps", "stepwise_aic", "summarize", "threshold_refit", "zero_fill",
]
