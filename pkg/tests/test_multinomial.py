"""Weighted multinomial logit: oracle agreement, weights, separation."""

import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from vecurves.errors import DesignError, SchemaError, SeparationWarning
from vecurves.multinomial import fit_multinomial


def draw(n, gamma, seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(2.0, 0.8, n)
    design = np.column_stack([np.ones(n), s])
    eta = np.concatenate([np.zeros((n, 1)), design @ gamma.T], axis=1)
    p = np.exp(eta - eta.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    cat = 1 + (rng.random(n)[:, None] > np.cumsum(p, axis=1)).sum(axis=1)
    return cat, design


GAMMA = np.array([[0.3, -0.2], [-0.5, 0.4], [0.1, 0.1]])


def test_matches_statsmodels_mnlogit():
    sm = pytest.importorskip("statsmodels.api")
    cat, design = draw(4_000, GAMMA, seed=14)
    model = fit_multinomial(cat, design, n_levels=4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = sm.MNLogit(cat - 1, design).fit(disp=0, gtol=1e-10)
    assert_allclose(model.gamma, res.params.T, atol=1e-5)
    assert_allclose(model.loglik, res.llf, rtol=1e-9)


def test_probabilities_are_a_softmax_over_levels():
    cat, design = draw(1_500, GAMMA, seed=15)
    model = fit_multinomial(cat, design, n_levels=4)
    pts = np.column_stack([np.ones(5), np.linspace(0.5, 3.5, 5)])
    probs = model.probabilities(pts)
    assert probs.shape == (5, 4)
    assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    eta = pts @ model.gamma.T
    by_hand = np.exp(np.concatenate([np.zeros((5, 1)), eta], axis=1))
    by_hand /= by_hand.sum(axis=1, keepdims=True)
    assert_allclose(probs, by_hand, atol=1e-12)


def test_integer_weights_equal_row_replication():
    cat, design = draw(500, GAMMA, seed=16)
    w = np.random.default_rng(3).integers(1, 4, cat.shape[0]).astype(float)
    weighted = fit_multinomial(cat, design, weights=w, n_levels=4)
    idx = np.repeat(np.arange(cat.shape[0]), w.astype(int))
    replicated = fit_multinomial(cat[idx], design[idx], n_levels=4)
    assert_allclose(weighted.gamma, replicated.gamma, atol=1e-6)


def test_warm_start_reaches_the_same_optimum():
    cat, design = draw(2_000, GAMMA, seed=17)
    cold = fit_multinomial(cat, design, n_levels=4)
    warm = fit_multinomial(cat, design, n_levels=4, init=cold.gamma + 0.3)
    assert_allclose(warm.gamma, cold.gamma, atol=1e-6)


def test_separated_categories_hit_the_cap_with_a_warning():
    n = 200
    s = np.linspace(0, 1, n)
    cat = np.where(s > 0.5, 2, 1)
    design = np.column_stack([np.ones(n), s])
    with pytest.warns(SeparationWarning):
        model = fit_multinomial(cat, design, n_levels=2)
    assert model.capped
    assert np.all(np.isfinite(model.probabilities(design)))


def test_degenerate_inputs_rejected():
    cat = np.ones(30, dtype=int)
    design = np.ones((30, 1))
    with pytest.raises(DesignError):
        fit_multinomial(cat, design, n_levels=4)
    with pytest.raises(SchemaError):
        fit_multinomial(np.array([1, 2, 9]), np.ones((3, 1)), n_levels=4)
