"""Exposure-driven vaccine-hesitancy epidemic modelling toolkit.

Light submodules (data handling, dynamics, risk) import eagerly; the
inference stack is resolved lazily on first attribute access so that plain
data work does not pay the jit-compiler import cost.
"""

from importlib import import_module

from .data_io import (
    AlignedDataset,
    RunConfig,
    SamplerConfig,
    load_dataset,
    subsample_regions,
    write_report,
)
from .dynamics import EpidemicState, ModelParams, Trajectory, generate_synthetic, simulate
from .errors import DiagnosticsError, InputError, MissingArtifactError
from .exposure import ExposureSeries, compute_exposure, shuffle_exposure
from .risk import (
    AttributionReport,
    RiskInputs,
    attribute_outcomes,
    national_risk_inputs,
    unvaccinated_case_risk,
    unvaccinated_death_risk,
)

__version__ = "0.1.0"

_LAZY = {
    "LogPosterior": "likelihood",
    "build_log_posterior": "likelihood",
    "default_priors": "likelihood",
    "log_likelihood": "likelihood",
    "model_means": "likelihood",
    "neg_binomial_log_pmf": "likelihood",
    "PosteriorSamples": "inference",
    "sample_posterior": "inference",
    "read_posterior_samples": "inference",
    "hdi": "inference",
    "tail_probability": "inference",
    "ess_bulk": "inference",
    "split_r_hat": "inference",
    "EffectReport": "causal",
    "estimate_ate": "causal",
    "prevented_vaccinations": "causal",
    "counterfactual_delta_v": "causal",
    "shuffle_null_test": "causal",
    "ElpdReport": "model_selection",
    "pointwise_loglik": "model_selection",
    "psis_loo": "model_selection",
    "compare_models": "model_selection",
}

__all__ = [
    "AlignedDataset", "RunConfig", "SamplerConfig", "load_dataset",
    "subsample_regions", "write_report",
    "EpidemicState", "ModelParams", "Trajectory", "generate_synthetic", "simulate",
    "DiagnosticsError", "InputError", "MissingArtifactError",
    "ExposureSeries", "compute_exposure", "shuffle_exposure",
    "AttributionReport", "RiskInputs", "attribute_outcomes",
    "national_risk_inputs", "unvaccinated_case_risk", "unvaccinated_death_risk",
    "__version__",
    *sorted(_LAZY),
]


def __getattr__(name):
    module = _LAZY.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    return getattr(import_module(f".{module}", __name__), name)
