"""Maximum likelihood for left-censored (Tobit type I) normal regression.

Responses are V = max(V*, c), V* ~ N(design @ coef, sigma^2).  Rows equal
to the limit contribute the mass log Phi((c - mu)/sigma); rows above it
contribute the usual normal log density.  Fits are weighted, with the
objective and convergence checks taken per unit weight so thresholds do
not depend on sample size.

Optimization runs in the (coef/sigma, 1/sigma) parameterization, where
the log-likelihood is globally concave, and results are reported on the
natural (coef, sigma) scale.  The score used for convergence checks and
derivative tests is on the (coef, log sigma) scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_ndtr, ndtr

from .errors import ConvergenceError, DesignError, SchemaError
from .model import norm_pdf

__all__ = [
    "CensoredNormalModel",
    "fit_censored_normal",
    "censored_normal_loglik",
    "censored_normal_score",
]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class CensoredNormalModel:
    """Fitted censored-normal regression."""

    coef: np.ndarray
    sigma: float
    limit: float
    design_labels: tuple
    loglik: float = np.nan
    grad_norm: float = np.nan
    n_iter: int = 0

    def mean(self, design):
        return np.asarray(design, dtype=float) @ self.coef

    def prob_at_limit(self, design):
        """P(V = limit | design) = Phi((c - mu)/sigma)."""
        return ndtr((self.limit - self.mean(design)) / self.sigma)

    def logpdf(self, v, design):
        """Log density (v > limit) or log mass (v == limit), broadcasting."""
        v = np.asarray(v, dtype=float)
        mu = self.mean(design)
        t = (v - mu) / self.sigma
        dens = -0.5 * t * t - _LOG_SQRT_2PI - np.log(self.sigma)
        at_limit = v <= self.limit
        if not np.any(at_limit):
            return dens
        mass = log_ndtr((self.limit - mu) / self.sigma)
        return np.where(at_limit, np.broadcast_to(mass, dens.shape), dens)

    def pdf(self, v, design):
        return np.exp(self.logpdf(v, design))


def _check_inputs(responses, design, weights, limit):
    responses = np.asarray(responses, dtype=float)
    design = np.asarray(design, dtype=float)
    n = responses.shape[0]
    if design.ndim != 2 or design.shape[0] != n:
        raise SchemaError("design must be 2-d with one row per response")
    if np.any(responses < limit):
        raise SchemaError("response below the censoring limit")
    if weights is None:
        weights = np.ones(n)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (n,) or np.any(~np.isfinite(weights)) or np.any(weights < 0):
            raise SchemaError("weights must be finite and non-negative")
    wsum = weights.sum()
    if wsum <= 0:
        raise SchemaError("weights sum to zero")
    return responses, design, weights, wsum


def _olsen_negloglik(theta, v, xmat, w, wsum, censored):
    # theta = (delta, gamma) with delta = coef/sigma, gamma = 1/sigma;
    # e = gamma*v - x'delta equals the Phi argument on censored rows (v = c)
    p = xmat.shape[1]
    delta, gamma = theta[:p], theta[p]
    e = gamma * v - xmat @ delta
    unc = ~censored
    u = e[censored]
    logphi_mass = log_ndtr(u)
    nll = np.empty_like(v)
    nll[unc] = -np.log(gamma) + 0.5 * e[unc] ** 2 + _LOG_SQRT_2PI
    nll[censored] = -logphi_mass
    f = float(np.dot(w, nll)) / wsum
    ratio = np.exp(-0.5 * u * u - _LOG_SQRT_2PI - logphi_mass)  # phi/Phi
    r = np.empty_like(v)
    r[unc] = -e[unc]
    r[censored] = ratio
    gdelta = (xmat.T @ (w * r)) / wsum
    dgamma = (float(np.dot(w, -r * v)) - float(np.sum(w[unc])) / gamma) / wsum
    return f, np.concatenate([gdelta, [dgamma]])


def censored_normal_loglik(coef, sigma, responses, design, weights, limit):
    """Weighted log-likelihood (sum scale) on the natural parameterization."""
    v, xmat, w, _ = _check_inputs(responses, design, weights, limit)
    mu = xmat @ np.asarray(coef, dtype=float)
    t = (v - mu) / sigma
    censored = v <= limit
    ll = np.where(
        censored,
        log_ndtr((limit - mu) / sigma),
        -0.5 * t * t - _LOG_SQRT_2PI - np.log(sigma),
    )
    return float(np.dot(w, ll))


def censored_normal_score(coef, sigma, responses, design, weights, limit):
    """Score of the summed log-likelihood wrt (coef, log sigma)."""
    v, xmat, w, _ = _check_inputs(responses, design, weights, limit)
    mu = xmat @ np.asarray(coef, dtype=float)
    t = (v - mu) / sigma
    censored = v <= limit
    u = (limit - mu) / sigma
    ratio = np.exp(-0.5 * u * u - _LOG_SQRT_2PI - log_ndtr(u))
    drow = np.where(censored, -ratio / sigma, t / sigma)
    dcoef = xmat.T @ (w * drow)
    dlogsig_rows = np.where(censored, -ratio * u, t * t - 1.0)
    return np.concatenate([dcoef, [float(np.dot(w, dlogsig_rows))]])


def fit_censored_normal(responses, design, limit, weights=None, *, design_labels=None,
                        init=None, max_iter=500, gtol=1e-6):
    """Fit by MLE; returns a CensoredNormalModel.

    ``init`` is an optional (coef, sigma) warm start; otherwise weighted
    least squares ignoring censoring, with sigma inflated by 1.2.  The fit
    must reach a per-unit-weight score with every coordinate <= ``gtol``
    on the (coef, log sigma) scale, else ConvergenceError.
    """
    v, xmat, w, wsum = _check_inputs(responses, design, weights, limit)
    censored = v <= limit
    if np.all(censored[w > 0]):
        raise DesignError("all (positively weighted) responses are censored")
    p = xmat.shape[1]
    if design_labels is None:
        design_labels = tuple(f"x{j}" for j in range(p))

    if init is not None:
        coef0 = np.asarray(init[0], dtype=float)
        sigma0 = float(init[1])
    else:
        sw = np.sqrt(w)
        coef0, *_ = np.linalg.lstsq(xmat * sw[:, None], v * sw, rcond=None)
        resid = v - xmat @ coef0
        sigma0 = float(np.sqrt(np.dot(w, resid**2) / wsum)) * 1.2
        sigma0 = max(sigma0, 1e-3)
    theta0 = np.concatenate([coef0 / sigma0, [1.0 / sigma0]])

    res = minimize(
        _olsen_negloglik, theta0, args=(v, xmat, w, wsum, censored),
        jac=True, method="BFGS",
        options={"gtol": 1e-9, "maxiter": int(max_iter)},
    )
    delta, gamma = res.x[:p], res.x[p]
    if gamma <= 0:
        raise ConvergenceError("censored-normal fit reached a non-positive precision")
    sigma = 1.0 / gamma
    coef = delta * sigma
    score = censored_normal_score(coef, sigma, v, xmat, w, limit) / wsum
    grad_norm = float(np.max(np.abs(score)))
    model = CensoredNormalModel(
        coef=coef, sigma=sigma, limit=float(limit),
        design_labels=tuple(design_labels),
        loglik=censored_normal_loglik(coef, sigma, v, xmat, w, limit),
        grad_norm=grad_norm, n_iter=int(res.nit),
    )
    if grad_norm > gtol:
        raise ConvergenceError(
            f"censored-normal fit stopped with score norm {grad_norm:.3g} > {gtol:g} "
            f"after {res.nit} iterations", result=model,
        )
    return model
