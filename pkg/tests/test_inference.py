"""Perturbation draws, ensembles, intervals, bands, and the band test."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.special import ndtri

from vecurves import (
    EstimationOptions,
    band_inversion_test,
    default_grid,
    fit_pipeline,
    make_draw,
    pointwise_ci,
    run_ensemble,
    simultaneous_band,
)
from vecurves.errors import DesignError, NumericError
from vecurves.inference import PerturbationDraw


def test_draws_are_deterministic_and_seed_indexed():
    a = make_draw(1000, master_seed=7, index=3)
    b = make_draw(1000, master_seed=7, index=3)
    c = make_draw(1000, master_seed=7, index=4)
    assert_array_equal(a.epsilon, b.epsilon)
    assert np.any(a.epsilon != c.epsilon)
    assert a.seed_path == (7, 3)
    assert np.all(a.epsilon > 0)
    assert abs(a.epsilon.mean() - 1.0) < 5 / np.sqrt(1000)


def test_draw_accepts_composite_seed_paths():
    a = make_draw(100, master_seed=(11, 1, 5), index=2)
    assert a.seed_path == (11, 1, 5, 2)


def test_insane_weights_are_rejected():
    with pytest.raises(NumericError):
        PerturbationDraw(epsilon=np.array([1.0, -0.5, 1.5]), seed_path=(0,))
    with pytest.raises(NumericError):
        PerturbationDraw(epsilon=np.full(10000, 1.5), seed_path=(0,))


def test_pointwise_ci_is_the_normal_quantile_interval():
    est = np.array([0.2, 0.5])
    sd = np.array([0.1, 0.05])
    lo, hi, z = pointwise_ci(est, sd, alpha=0.05)
    assert_allclose(z, ndtri(0.975))
    assert_allclose(lo, est - z * sd)
    assert_allclose(hi, est + z * sd)
    lo90, hi90, z90 = pointwise_ci(est, sd, alpha=0.10)
    assert z90 < z
    assert np.all(lo90 > lo) and np.all(hi90 < hi)


def test_simultaneous_band_quantile_by_hand():
    rng = np.random.default_rng(0)
    est = np.zeros(4)
    sd = np.ones(4)
    draws = rng.standard_normal((40, 4))
    band = simultaneous_band(est, draws, sd, alpha=0.10)
    sups = np.max(np.abs(draws), axis=1)
    k = int(np.ceil(0.90 * (40 - 1)))  # upper tie convention on 40 sups
    want_q = np.sort(sups)[k]
    assert_allclose(band.q, want_q)
    assert_allclose(band.lo, -band.q)
    assert_allclose(band.hi, band.q)


def test_band_is_at_least_as_wide_as_the_pointwise_interval():
    rng = np.random.default_rng(1)
    est = rng.random(6)
    sd = 0.1 + 0.1 * rng.random(6)
    draws = est + sd * rng.standard_normal((400, 6))
    band = simultaneous_band(est, draws, sd, alpha=0.05)
    lo, hi, z = pointwise_ci(est, sd, alpha=0.05)
    assert band.q >= z
    assert np.all(band.lo <= lo) and np.all(band.hi >= hi)


def test_band_needs_enough_draws():
    with pytest.raises(DesignError):
        simultaneous_band(np.zeros(3), np.zeros((5, 3)), np.ones(3))
    with pytest.raises(DesignError):
        band_inversion_test(np.zeros(3), np.zeros((5, 3)), np.ones(3))


def test_band_test_matches_an_explicit_band_level_search():
    rng = np.random.default_rng(7)
    for _ in range(20):
        m = int(rng.integers(3, 8))
        nb = int(rng.integers(25, 80))
        est = rng.standard_normal(m)
        sd = 0.2 + rng.random(m)
        draws = est + sd * rng.standard_normal((nb, m))
        res = band_inversion_test(est, draws, sd)
        k = round(res.p_value * nb)
        assert_allclose(res.p_value, k / nb)

        # sweep band levels directly: the zero curve must leave the band
        # exactly for alpha at or above the empirical-quantile threshold
        threshold = k / (nb - 1)
        for a in np.linspace(0.01, 0.99, 50):
            band = simultaneous_band(est, draws, sd, alpha=a, min_draws=5)
            rejected = bool(np.any((band.lo > 0) | (band.hi < 0)))
            if a >= threshold + 1e-9:
                assert rejected
            elif a <= threshold - 1e-9:
                assert not rejected


def test_band_test_side_reports_the_driving_excursion():
    est = np.array([0.5, 0.1])
    sd = np.ones(2)
    draws = np.vstack([est + 0.01 * np.ones(2)] * 30)
    up = band_inversion_test(est, draws, sd)
    assert up.side == "upper" and up.sup_stat == 0.5
    down = band_inversion_test(-est, draws - 2 * est, sd)
    assert down.side == "lower"


@pytest.fixture(scope="module")
def small_pipeline(cpv_trial):
    opts = EstimationOptions(n_perturb=24)
    return fit_pipeline(cpv_trial, opts)


def test_ensemble_is_deterministic_across_thread_counts(cpv_trial, small_pipeline):
    grid = default_grid(cpv_trial, n_points=9)
    one = run_ensemble(cpv_trial, grid, small_pipeline, n_draws=8, master_seed=5)
    two = run_ensemble(cpv_trial, grid, small_pipeline, n_draws=8, master_seed=5,
                       threads=2)
    for kind in one.kinds:
        assert_array_equal(one.values[kind], two.values[kind])
    assert one.n_ok == 8


def test_ensemble_spread_and_seed_sensitivity(cpv_trial, small_pipeline):
    grid = default_grid(cpv_trial, n_points=9)
    ens = run_ensemble(cpv_trial, grid, small_pipeline, n_draws=24, master_seed=5)
    sd = ens.sd("marginal")
    assert sd.shape == (9,)
    assert np.all(sd > 0)
    other = run_ensemble(cpv_trial, grid, small_pipeline, n_draws=8, master_seed=6)
    assert np.any(other.values["marginal"] != ens.values["marginal"][:8])


def test_ensemble_aborts_when_too_many_draws_fail(cpv_trial, small_pipeline):
    grid = default_grid(cpv_trial, n_points=5)
    tight = EstimationOptions(n_perturb=8, max_iter=1)
    with pytest.raises(NumericError, match="draws failed"):
        run_ensemble(cpv_trial, grid, small_pipeline, options=tight, n_draws=8,
                     master_seed=5)
