"""Shared fixtures and dataset builders for the test suite."""

import dataclasses

import numpy as np
import pytest
from scipy.special import ndtr

from vecurves import (
    EstimationOptions,
    RiskParams,
    TrialData,
    default_profile,
    fit_nuisance,
    fit_pipeline,
    risk_design,
    simulate_trial,
    validate_dataset,
)
from vecurves.model import DetectionLimit

LIMIT = 1.0
N_LEVELS = 4


def moderate_beta():
    return RiskParams(-0.7, -0.4, -0.25, 0.1, -0.3, 0.05, (0.24, 0.11, 0.20))


def complete_dataset(n, seed, beta=None, limit=LIMIT):
    """Trial with both markers measured on everyone (no missingness).

    S is generated in both arms so the likelihood reduces to a plain
    probit regression on the full design.
    """
    beta = beta or moderate_beta()
    rng = np.random.default_rng(seed)
    z = (rng.random(n) < 2 / 3).astype(np.int8)
    x = rng.integers(1, N_LEVELS + 1, size=n)
    dums = x[:, None] == np.arange(2, N_LEVELS + 1)
    b = np.maximum(limit, 1.38 + dums @ [0.93, 1.25, -0.25] + 0.86 * rng.standard_normal(n))
    s = np.maximum(limit, 1.5 + 0.5 * b + dums @ [0.2, -0.1, 0.4] + 0.4 * rng.standard_normal(n))
    risk = ndtr(risk_design(z, s, b, x, N_LEVELS) @ beta.as_array())
    y = (rng.random(n) < risk).astype(np.int8)
    data = TrialData(
        z=z, x=x, y=y,
        delta=np.ones(n, dtype=np.int8), s=s,
        delta_b=np.ones(n, dtype=np.int8), b=b,
        limit=DetectionLimit(limit), n_levels=N_LEVELS,
    )
    data, _ = validate_dataset(data, limit)
    return data


@pytest.fixture(scope="session")
def bip_trial():
    cfg = default_profile(seed=123, s_mean_uses_censored_b=True)
    return simulate_trial(cfg)


@pytest.fixture(scope="session")
def bip_nuisance(bip_trial):
    return fit_nuisance(bip_trial)


@pytest.fixture(scope="session")
def cpv_trial():
    cfg = default_profile(seed=321, s_mean_uses_censored_b=True)
    cfg = dataclasses.replace(cfg, design="bip-cpv")
    return simulate_trial(cfg)


@pytest.fixture(scope="session")
def cpv_pipeline(cpv_trial):
    return fit_pipeline(cpv_trial, EstimationOptions())
