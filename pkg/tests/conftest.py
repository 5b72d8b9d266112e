"""Shared fixtures: one small synthetic dataset and its fitted posteriors.

The fit fixtures are session-scoped on purpose: the jitted log posterior
compiles once per (shape, variant) and every module reuses the result.
"""
import numpy as np
import pytest

from hesitancy_lab.data_io import SamplerConfig
from hesitancy_lab.dynamics import EpidemicState, ModelParams, generate_synthetic
from hesitancy_lab.inference import sample_posterior

SMALL_R, SMALL_K = 4, 10
SMALL_SUBSTEPS = 2
SMALL_TRUTH = ModelParams(
    beta=np.array([0.25]),
    rho=0.1,
    nu=np.array([0.003]),
    gamma_e=0.5,
    gamma_p=0.01,
    alpha0=np.full(SMALL_R, 0.25),
    phi=np.full(4, 50.0),
)


def small_exposure(n_regions: int = SMALL_R, n_intervals: int = SMALL_K, seed: int = 42):
    rng = np.random.default_rng(seed)
    base = rng.lognormal(np.log(5e-2), 0.7, size=(n_regions, 1))
    wave = 1.0 + 0.5 * np.sin(
        2 * np.pi * np.arange(n_intervals) / n_intervals
        + rng.uniform(0, 2 * np.pi, size=(n_regions, 1))
    )
    return base * wave


def make_small_dataset(seed: int = 7, gamma_e: float = SMALL_TRUTH.gamma_e):
    import dataclasses

    truth = dataclasses.replace(SMALL_TRUTH, gamma_e=gamma_e)
    N = np.full(SMALL_R, 1e5)
    init = EpidemicState(
        S=0.988 * N, I=0.002 * N, R=np.zeros(SMALL_R), V=0.01 * N,
        alpha=np.full(SMALL_R, truth.alpha0[0] if np.ndim(truth.alpha0) else truth.alpha0),
        N=N,
    )
    return generate_synthetic(
        truth, init, small_exposure(), SMALL_K, seed=seed,
        interval_days=8, substeps=SMALL_SUBSTEPS,
        beta_period=SMALL_K, nu_period=SMALL_K,
    )


@pytest.fixture(scope="session")
def small_dataset():
    return make_small_dataset()


AGREE_K, AGREE_SUBSTEPS = 2, 8


def make_agreement_dataset(n_regions=1, seed=5):
    """Short-horizon daily-cadence fixture with time-constant exposure.

    The local exposure-effect estimand prices one day of suppressed uptake
    per unit of exposure, while the zero-exposure counterfactual accumulates
    the suppression over the remaining horizon, so the two totals coincide
    only when the horizon is about two daily intervals. This is the regime
    the estimand's one-step derivative is built for; route-agreement checks
    belong here.
    """
    truth = ModelParams(
        beta=np.array([0.2]), rho=0.1, nu=np.array([0.0025]),
        gamma_e=0.18, gamma_p=0.0, alpha0=np.full(n_regions, 0.2),
        phi=np.full(4, 200.0),
    )
    N = np.full(n_regions, 1e5)
    init = EpidemicState(
        S=0.988 * N, I=0.002 * N, R=np.zeros(n_regions), V=0.01 * N,
        alpha=np.full(n_regions, 0.2), N=N,
    )
    levels = np.random.default_rng(seed).uniform(0.02, 0.05, (n_regions, 1))
    dataset = generate_synthetic(
        truth, init, np.repeat(levels, AGREE_K, axis=1), AGREE_K, seed=seed,
        interval_days=1, substeps=AGREE_SUBSTEPS,
        beta_period=AGREE_K, nu_period=AGREE_K,
    )
    return dataset, truth


def fit_small(dataset, variant="sirva", seed=11, draws=200):
    cfg = SamplerConfig(chains=2, warmup=200, draws=draws, seed=seed, max_depth=7)
    return sample_posterior(
        dataset, sampler=cfg, variant=variant,
        beta_period=SMALL_K, nu_period=SMALL_K, substeps=SMALL_SUBSTEPS,
    )


@pytest.fixture(scope="session")
def fitted_small(small_dataset):
    return fit_small(small_dataset)


@pytest.fixture(scope="session")
def fitted_small_sirv(small_dataset):
    return fit_small(small_dataset, variant="sirv")
