"""Nuisance components: sampling weights and conditional biomarker laws.

Three pieces feed the estimated likelihood:

* inverse-probability sampling weights for the two-phase measurement of
  S (stratified on arm, case status, covariate, and optionally on
  delta_b) and of B (stratified on arm and covariate);
* censored-normal regressions F(B | X) fit on the measured-B subset and
  F(S | B, X) fit on vaccine recipients with both markers, IPW-weighted;
* the Bayes inversion of those two laws into the mixed conditional law
  of B given S and X, which carries a point mass at the detection limit
  plus a continuous part represented by quadrature nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .censnorm import CensoredNormalModel, fit_censored_normal
from .errors import DesignError, NumericError, SchemaError
from .quadrature import Quadrature

__all__ = [
    "SamplingWeights",
    "estimate_sampling_weights",
    "fit_b_given_x",
    "fit_s_given_b",
    "MixedConditional",
    "invert_to_b_given_s",
    "NuisanceFit",
    "fit_nuisance",
]


def b_design(x, n_levels):
    """Design rows [1, dummies(x)] for the F(B | X) regression."""
    x = np.asarray(x)
    levels = np.arange(2, n_levels + 1)
    dummies = (x[..., None] == levels).astype(float)
    return np.concatenate([np.ones(x.shape + (1,)), dummies], axis=-1)


def s_design(b, x, n_levels):
    """Design rows [1, b, dummies(x)] for the F(S | B, X) regression."""
    b, x = np.broadcast_arrays(np.asarray(b, dtype=float), np.asarray(x))
    levels = np.arange(2, n_levels + 1)
    dummies = (x[..., None] == levels).astype(float)
    return np.concatenate(
        [np.ones(b.shape + (1,)), b[..., None], dummies], axis=-1
    )


def _cell_codes(parts, sizes):
    code = np.zeros(parts[0].shape[0], dtype=np.int64)
    for arr, size in zip(parts, sizes):
        code = code * size + np.asarray(arr, dtype=np.int64)
    return code


def _estimate_table(indicator, code, n_cells, eps):
    num = np.bincount(code, weights=eps * indicator, minlength=n_cells)
    den = np.bincount(code, weights=eps, minlength=n_cells)
    with np.errstate(invalid="ignore"):
        return np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)


@dataclass
class SamplingWeights:
    """Estimated (or user-supplied) sampling probabilities, resolved per row.

    ``pi_s_marginal`` is P(delta = 1 | z, y, x); ``pi_s_fit`` additionally
    conditions on delta_b when the scheme stratifies on it, and is the table
    used for the F(S | B, X) fit and for product weights on the
    both-markers subset.  Rows where the subject was not sampled hold NaN.
    """

    pi_s_marginal: np.ndarray
    pi_s_fit: np.ndarray
    pi_b: np.ndarray
    stratified: bool
    from_user: bool
    tables: dict

    def check_positive(self, mask_s, mask_b):
        if np.any(self.pi_s_marginal[mask_s] <= 0) or np.any(self.pi_s_fit[mask_s] <= 0):
            raise NumericError("estimated S-sampling probability is zero for a sampled row")
        if np.any(self.pi_b[mask_b] <= 0):
            raise NumericError("estimated B-sampling probability is zero for a sampled row")


def estimate_sampling_weights(data, *, stratify_s_by_delta_b=False, eps=None):
    """Empirical sampling-probability tables, optionally perturbation-weighted.

    User-supplied weight columns take precedence and are never re-estimated.
    """
    n = data.n
    eps = np.ones(n) if eps is None else np.asarray(eps, dtype=float)
    x0 = data.x - 1
    D = data.n_levels
    tables = {}

    if data.weight_s is not None:
        pi_s_marginal = pi_s_fit = np.asarray(data.weight_s, dtype=float)
        s_user = True
    else:
        code = _cell_codes((data.z, data.y, x0), (2, 2, D))
        table = _estimate_table(data.delta, code, 4 * D, eps)
        pi_s_marginal = table[code]
        tables["pi_s"] = ("z y x", table.reshape(2, 2, D))
        if stratify_s_by_delta_b:
            code_f = _cell_codes((data.z, data.y, x0, data.delta_b), (2, 2, D, 2))
            table_f = _estimate_table(data.delta, code_f, 8 * D, eps)
            pi_s_fit = table_f[code_f]
            tables["pi_s_by_delta_b"] = ("z y x delta_b", table_f.reshape(2, 2, D, 2))
        else:
            pi_s_fit = pi_s_marginal
        s_user = False

    if data.weight_b is not None:
        pi_b = np.asarray(data.weight_b, dtype=float)
        b_user = True
    else:
        code_b = _cell_codes((data.z, x0), (2, D))
        table_b = _estimate_table(data.delta_b, code_b, 2 * D, eps)
        pi_b = table_b[code_b]
        tables["pi_b"] = ("z x", table_b.reshape(2, D))
        b_user = False

    sw = SamplingWeights(
        pi_s_marginal=np.where(data.delta == 1, pi_s_marginal, np.nan),
        pi_s_fit=np.where(data.delta == 1, pi_s_fit, np.nan),
        pi_b=np.where(data.delta_b == 1, pi_b, np.nan),
        stratified=bool(stratify_s_by_delta_b),
        from_user=s_user or b_user,
        tables=tables,
    )
    sw.check_positive(data.delta == 1, data.delta_b == 1)
    return sw


def fit_b_given_x(data, eps=None, init=None):
    """Censored-normal MLE of B* | X on the measured-B subset."""
    mask = data.delta_b == 1
    if not np.any(mask):
        raise DesignError("no rows with the baseline marker measured")
    labels = ("intercept",) + tuple(f"x{j}" for j in range(2, data.n_levels + 1))
    return fit_censored_normal(
        data.b[mask], b_design(data.x[mask], data.n_levels), data.limit.c,
        weights=None if eps is None else np.asarray(eps, dtype=float)[mask],
        design_labels=labels, init=init,
    )


def fit_s_given_b(data, weights, eps=None, init=None):
    """IPW censored-normal MLE of S* | B, X on vaccinees with both markers."""
    mask = (data.z == 1) & (data.delta == 1) & (data.delta_b == 1)
    if not np.any(mask):
        raise DesignError("no vaccine rows with both markers measured")
    w = 1.0 / weights.pi_s_fit[mask]
    if eps is not None:
        w = w * np.asarray(eps, dtype=float)[mask]
    labels = ("intercept", "b") + tuple(f"x{j}" for j in range(2, data.n_levels + 1))
    return fit_censored_normal(
        data.s[mask], s_design(data.b[mask], data.x[mask], data.n_levels),
        data.limit.c, weights=w, design_labels=labels, init=init,
    )


@dataclass
class MixedConditional:
    """Conditional law of B given S = s, X = x for vaccine recipients.

    ``at_limit`` is the point mass at the detection limit; the continuous
    part is represented by ``nodes`` with ``node_weights`` summing to
    1 - at_limit.  ``expectation(g)`` integrates a function of B.
    """

    s: float
    x: int
    limit: float
    at_limit: float
    nodes: np.ndarray
    node_weights: np.ndarray

    def mass(self):
        return self.at_limit + float(self.node_weights.sum())

    def expectation(self, g):
        return self.at_limit * g(self.limit) + float(
            np.dot(self.node_weights, g(self.nodes))
        )


def mixed_b_given_s(f_b_x, f_s_bx, s, x, quad, n_levels):
    """Vectorized Bayes inversion; s and x broadcast.

    Returns (at_limit, nodes, node_weights) with node_weights normalized so
    at_limit + node_weights.sum(-1) == 1.  All mixing happens in log space;
    a jointly vanishing posterior raises NumericError instead of NaN.
    """
    s, x = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(x))
    bx = b_design(x, n_levels)
    mass0_b, nodes_b, w_b = quad.censored_nodes(f_b_x.mean(bx), f_b_x.sigma, f_b_x.limit)
    # log numerator of the point-mass branch: f(s | b=c, x) * P(B = c | x)
    with np.errstate(divide="ignore"):
        log_m0 = f_s_bx.logpdf(s, s_design(np.full(x.shape, f_b_x.limit), x, n_levels)) \
            + np.log(mass0_b)
        log_cont = f_s_bx.logpdf(
            s[..., None], s_design(nodes_b, x[..., None], n_levels)
        ) + np.log(w_b)
    log_all = np.concatenate([log_m0[..., None], log_cont], axis=-1)
    log_norm = logsumexp(log_all, axis=-1)
    if np.any(~np.isfinite(log_norm)):
        raise NumericError(
            "posterior mass for B given S underflowed even in log space"
        )
    at_limit = np.exp(log_m0 - log_norm)
    node_weights = np.exp(log_cont - log_norm[..., None])
    return at_limit, nodes_b, node_weights


def invert_to_b_given_s(f_b_x, f_s_bx, s, x, quad=None, n_levels=None):
    """Public scalar form of the Bayes inversion; returns a MixedConditional."""
    if quad is None:
        quad = Quadrature(40)
    if n_levels is None:
        n_levels = len(f_b_x.coef)
    if s < f_s_bx.limit:
        raise SchemaError("s below the detection limit")
    at_limit, nodes, node_weights = mixed_b_given_s(
        f_b_x, f_s_bx, float(s), int(x), quad, n_levels
    )
    return MixedConditional(
        s=float(s), x=int(x), limit=float(f_b_x.limit),
        at_limit=float(at_limit), nodes=nodes, node_weights=node_weights,
    )


@dataclass
class NuisanceFit:
    """Everything the estimated likelihood needs besides beta."""

    b_given_x: CensoredNormalModel
    s_given_b: CensoredNormalModel
    weights: SamplingWeights
    limit: float
    n_levels: int


def fit_nuisance(data, *, stratify_s_by_delta_b=False, eps=None, warm=None):
    """Fit weights and both conditional laws; ``warm`` is a prior NuisanceFit."""
    sw = estimate_sampling_weights(
        data, stratify_s_by_delta_b=stratify_s_by_delta_b, eps=eps
    )
    init_b = init_s = None
    if warm is not None:
        init_b = (warm.b_given_x.coef, warm.b_given_x.sigma)
        init_s = (warm.s_given_b.coef, warm.s_given_b.sigma)
    return NuisanceFit(
        b_given_x=fit_b_given_x(data, eps=eps, init=init_b),
        s_given_b=fit_s_given_b(data, sw, eps=eps, init=init_s),
        weights=sw,
        limit=data.limit.c,
        n_levels=data.n_levels,
    )
