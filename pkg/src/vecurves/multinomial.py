"""Weighted multinomial logistic regression for category mixes.

Category 1 is the reference; each of categories 2..D gets its own
coefficient row over the prediction design (intercept plus optional
continuous predictors).  Predictors are standardized internally for
optimizer conditioning, and coefficients beyond +-30 on the standardized
scale are capped with a SeparationWarning rather than diverging.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from ._optim import damped_newton
from .errors import ConvergenceError, DesignError, SchemaError, SeparationWarning

__all__ = ["MultinomialModel", "fit_multinomial"]

COEF_CAP = 30.0


@dataclass
class MultinomialModel:
    """Fitted category-mix model; ``gamma`` has shape (D - 1, q)."""

    gamma: np.ndarray
    n_levels: int
    design_labels: tuple
    loglik: float = np.nan
    grad_norm: float = np.nan
    n_iter: int = 0
    capped: bool = False

    def probabilities(self, design):
        """Category probabilities, shape design.shape[:-1] + (D,)."""
        design = np.asarray(design, dtype=float)
        eta = design @ self.gamma.T
        eta = np.concatenate([np.zeros(eta.shape[:-1] + (1,)), eta], axis=-1)
        return np.exp(eta - logsumexp(eta, axis=-1, keepdims=True))


def _negloglik(gvec, design, onehot, w, wsum, d_minus_1, need_hess=False):
    gamma = gvec.reshape(d_minus_1, design.shape[1])
    eta = design @ gamma.T
    eta = np.concatenate([np.zeros((eta.shape[0], 1)), eta], axis=1)
    lse = logsumexp(eta, axis=1)
    f = -float(np.dot(w, (eta * onehot).sum(axis=1) - lse)) / wsum
    probs = np.exp(eta - lse[:, None])
    resid = onehot[:, 1:] - probs[:, 1:]
    grad = -(resid * w[:, None]).T @ design / wsum
    if not need_hess:
        return f, grad.ravel()
    # block (a, b) is X' diag(w * P_a (1[a == b] - P_b)) X / wsum
    q = design.shape[1]
    pz = probs[:, 1:]
    wp = w[:, None] * pz
    hess = np.zeros((d_minus_1 * q, d_minus_1 * q))
    for a in range(d_minus_1):
        for b in range(a, d_minus_1):
            coef = wp[:, a] * (float(a == b) - pz[:, b]) / wsum
            blk = design.T @ (design * coef[:, None])
            hess[a * q:(a + 1) * q, b * q:(b + 1) * q] = blk
            if b != a:
                hess[b * q:(b + 1) * q, a * q:(a + 1) * q] = blk.T
    return f, grad.ravel(), hess


def fit_multinomial(categories, design, weights=None, n_levels=None, *,
                    design_labels=None, init=None, max_iter=500, gtol=1e-6):
    """Fit the weighted multinomial logit.

    ``categories`` holds integer levels 1..D; ``design`` is the prediction
    design including an intercept column.  At least two categories must
    carry positive weight.  Convergence requires a per-unit-weight score
    with max coordinate <= ``gtol`` unless the cap engaged.
    """
    cat = np.asarray(categories)
    design = np.asarray(design, dtype=float)
    n = cat.shape[0]
    if design.ndim != 2 or design.shape[0] != n:
        raise SchemaError("design must be 2-d with one row per category")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,) or np.any(~np.isfinite(w)) or np.any(w < 0):
            raise SchemaError("weights must be finite and non-negative")
    wsum = w.sum()
    if wsum <= 0:
        raise SchemaError("weights sum to zero")
    if n_levels is None:
        n_levels = int(cat.max())
    if np.any(cat < 1) or np.any(cat > n_levels):
        raise SchemaError(f"categories must lie in 1..{n_levels}")
    present = np.unique(cat[w > 0])
    if present.size < 2:
        raise DesignError("fewer than two categories carry positive weight")
    q = design.shape[1]
    if design_labels is None:
        design_labels = tuple(f"x{j}" for j in range(q))

    # standardize non-constant columns for conditioning; undo afterwards
    mean = np.average(design, axis=0, weights=w)
    sd = np.sqrt(np.average((design - mean) ** 2, axis=0, weights=w))
    const = sd < 1e-12
    mean[const] = 0.0
    sd[const] = 1.0
    std_design = (design - mean) / sd

    onehot = (cat[:, None] == np.arange(1, n_levels + 1)).astype(float)
    dm1 = n_levels - 1
    if init is not None:
        g0 = _to_standardized(np.asarray(init, dtype=float), mean, sd)
    else:
        g0 = np.zeros((dm1, q))
    def fgh(gvec, need_hess):
        return _negloglik(gvec, std_design, onehot, w, wsum, dm1, need_hess)

    xstd, n_iter, _, converged = damped_newton(fgh, g0.ravel(), max_iter=max_iter)
    if not converged and np.all(np.abs(xstd) <= COEF_CAP):
        # Newton stalls when the optimum runs off to infinity (separated
        # categories); BFGS pushes far enough to trip the cap check
        res = minimize(
            _negloglik, xstd, args=(std_design, onehot, w, wsum, dm1),
            jac=True, method="BFGS", options={"gtol": 1e-9, "maxiter": int(max_iter)},
        )
        xstd = res.x
        n_iter += int(res.nit)
    gamma_std = xstd.reshape(dm1, q)
    capped = bool(np.any(np.abs(gamma_std) > COEF_CAP))
    if capped:
        warnings.warn(
            "category-mix fit hit the coefficient cap; estimates truncated",
            SeparationWarning, stacklevel=2,
        )
        gamma_std = np.clip(gamma_std, -COEF_CAP, COEF_CAP)
    _, grad = _negloglik(gamma_std.ravel(), std_design, onehot, w, wsum, dm1)
    grad_norm = float(np.max(np.abs(grad)))
    gamma = _from_standardized(gamma_std, mean, sd)
    eta = np.concatenate([np.zeros((n, 1)), design @ gamma.T], axis=1)
    loglik = float(np.dot(w, (eta * onehot).sum(axis=1) - logsumexp(eta, axis=1)))
    model = MultinomialModel(
        gamma=gamma, n_levels=int(n_levels), design_labels=tuple(design_labels),
        loglik=loglik, grad_norm=grad_norm, n_iter=int(n_iter), capped=capped,
    )
    if not capped and grad_norm > gtol:
        raise ConvergenceError(
            f"category-mix fit stopped with score norm {grad_norm:.3g} > {gtol:g}",
            result=model,
        )
    return model


def _to_standardized(gamma, mean, sd):
    """Map natural-scale coefficients onto the standardized design.

    The intercept (column 0, constant, mean 0 / sd 1 by construction)
    absorbs the centering shift of the other columns.
    """
    g = gamma * sd[None, :]
    g[:, 0] += gamma @ mean
    return g


def _from_standardized(gamma_std, mean, sd):
    g = gamma_std / sd[None, :]
    g[:, 0] -= g @ mean
    return g