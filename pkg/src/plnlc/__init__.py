"""Bayesian mortality projection with the extended Poisson log-normal
Lee-Carter model, for age-by-year tables with missing cells."""

__version__ = "0.1.0"

from .dataset import MortalityDataset, load_dataset, missing_fraction, write_dataset
from .forecast import ForecastResult, forecast, hpd_interval
from .lc_init import LcFit, default_hyperparams, fit_lc_svd, initial_values, linear_interpolate_impute, svd_impute
from .model import ConstrainedPrior, Hyperparams, ParamState, constrained_prior, log_joint_density
from .sampler import ChainStore, SamplerConfig, TimeStructure, run_chain, select_time_structure, summarize

__all__ = [
    "ChainStore",
    "ConstrainedPrior",
    "ForecastResult",
    "Hyperparams",
    "LcFit",
    "MortalityDataset",
    "ParamState",
    "SamplerConfig",
    "TimeStructure",
    "constrained_prior",
    "default_hyperparams",
    "fit_lc_svd",
    "forecast",
    "hpd_interval",
    "initial_values",
    "linear_interpolate_impute",
    "load_dataset",
    "log_joint_density",
    "missing_fraction",
    "run_chain",
    "select_time_structure",
    "summarize",
    "svd_impute",
    "write_dataset",
]
