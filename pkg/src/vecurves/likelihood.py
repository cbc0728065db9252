"""Estimated likelihood for the risk model under non-monotone missingness.

Each subject contributes a Bernoulli term in the averaged infection risk

    Rbar_i = E[ risk(beta; z_i, S, B, x_i) | observed data_i, nuisance ]

where the expectation runs over whichever biomarkers are unmeasured:

* (delta_b, delta) = (1, 1): no integration, risk at the observed (s, b);
* (1, 0): integrate S over the censored law F(S | b_i, x_i);
* (0, 1): integrate B over the Bayes-inverted mixed law of B | s_i, x_i;
* (0, 0): integrate both, S inside B, over F(B | x_i) then F(S | B, x_i).

The integration nodes depend only on the fitted nuisance, so all design
tensors are built once per fit; each optimizer step then costs a batch of
normal-CDF evaluations.  The double-integral branch is identical for every
subject sharing (z, x), so it is evaluated once per such group.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr, ndtri

from ._optim import damped_newton
from .errors import ConvergenceError, DesignError
from .model import RiskParams, norm_pdf, risk_design
from .nuisance import b_design, mixed_b_given_s, s_design
from .quadrature import Quadrature

__all__ = ["FitResult", "BranchTensors", "fit_beta", "averaged_risk", "loglik_contribution"]

RBAR_CLAMP = 1e-12
ESCAPE_NORM = 20.0


@dataclass
class FitResult:
    """Maximizer of the estimated likelihood plus diagnostics.

    ``loglik`` is the weighted sum of subject log-likelihood terms;
    ``grad_norm`` is the max score coordinate per unit weight.
    """

    params: RiskParams
    loglik: float
    grad_norm: float
    n_iter: int
    n_clamped: int
    converged: bool


class BranchTensors:
    """Integration tensors for one dataset and one fitted nuisance.

    Every branch is stored as a design tensor U (m, K, p) and a weight
    tensor W (m, K) such that the averaged risk of evaluation unit m is
    sum_k W[m, k] * Phi(U[m, k, :] @ beta).  For the first three branches
    units are subjects; for the double-integral branch units are (z, x)
    groups and ``g00`` maps subjects to groups.
    """

    def __init__(self, data, nuisance, quad):
        c = nuisance.limit
        D = nuisance.n_levels
        f_b = nuisance.b_given_x
        f_s = nuisance.s_given_b

        m11 = (data.delta_b == 1) & (data.delta == 1)
        m10 = (data.delta_b == 1) & (data.delta == 0)
        m01 = (data.delta_b == 0) & (data.delta == 1)
        m00 = (data.delta_b == 0) & (data.delta == 0)
        self.masks = (m11, m10, m01, m00)
        self.y = tuple(data.y[m].astype(float) for m in self.masks)
        self.n = data.n

        u11 = risk_design(data.z[m11], data.s[m11], data.b[m11], data.x[m11], D)[:, None, :]
        w11 = np.ones((u11.shape[0], 1))

        z, b, x = data.z[m10], data.b[m10], data.x[m10]
        mass0, nodes, w = quad.censored_nodes(f_s.mean(s_design(b, x, D)), f_s.sigma, c)
        svals = np.concatenate([np.full((b.shape[0], 1), c), nodes], axis=-1)
        u10 = risk_design(z[:, None], svals, b[:, None], x[:, None], D)
        w10 = np.concatenate([mass0[:, None], w], axis=-1)

        z, s, x = data.z[m01], data.s[m01], data.x[m01]
        at_limit, nodes_b, nw = mixed_b_given_s(f_b, f_s, s, x, quad, D)
        bvals = np.concatenate([np.full((s.shape[0], 1), c), nodes_b], axis=-1)
        u01 = risk_design(z[:, None], s[:, None], bvals, x[:, None], D)
        w01 = np.concatenate([at_limit[:, None], nw], axis=-1)

        z, x = data.z[m00], data.x[m00]
        gcode = z.astype(np.int64) * D + (x - 1)
        groups = np.unique(gcode)
        self.g00 = np.searchsorted(groups, gcode)
        gz = (groups // D).astype(float)
        gx = (groups % D) + 1
        mass0_b, nodes_b, w_b = quad.censored_nodes(f_b.mean(b_design(gx, D)), f_b.sigma, c)
        bvals = np.concatenate([np.full((groups.size, 1), c), nodes_b], axis=-1)
        wb = np.concatenate([mass0_b[:, None], w_b], axis=-1)
        mass0_s, nodes_s, w_s = quad.censored_nodes(
            f_s.mean(s_design(bvals, gx[:, None], D)), f_s.sigma, c
        )
        svals = np.concatenate([np.full(bvals.shape + (1,), c), nodes_s], axis=-1)
        ws = np.concatenate([mass0_s[..., None], w_s], axis=-1)
        u00 = risk_design(gz[:, None, None], svals, bvals[..., None], gx[:, None, None], D)
        m = u00.shape[1] * u00.shape[2]
        u00 = u00.reshape(groups.size, m, u00.shape[-1])
        w00 = (wb[..., None] * ws).reshape(groups.size, m)

        self.units = ((u11, w11, None), (u10, w10, None), (u01, w01, None), (u00, w00, self.g00))

    def averaged_risks(self, beta):
        """Per-subject averaged risks (R11, R10, R01, R00) at packed beta."""
        out = []
        for u, w, gidx in self.units:
            r = np.einsum("mk,mk->m", w, ndtr(u @ beta))
            out.append(r if gidx is None else r[gidx])
        return tuple(out)

    def negloglik_grad(self, beta, eps_parts=None, hess=False):
        """Mean negative log-likelihood, gradient, clamp count, and
        (optionally) the analytic Hessian.

        ``eps_parts`` optionally weights subjects (split by branch mask);
        the mean is per unit weight so convergence thresholds are
        sample-size free.
        """
        p = beta.shape[0]
        total = 0.0
        wtot = 0.0
        grad = np.zeros(p)
        hmat = np.zeros((p, p)) if hess else None
        n_clamped = 0
        for j, ((u, w, gidx), y) in enumerate(zip(self.units, self.y)):
            lp = u @ beta
            wpdf = w * norm_pdf(lp)
            rbar_unit = np.einsum("mk,mk->m", w, ndtr(lp))
            drbar_unit = np.einsum("mk,mkp->mp", wpdf, u)
            rbar = rbar_unit if gidx is None else rbar_unit[gidx]
            clip = np.clip(rbar, RBAR_CLAMP, 1.0 - RBAR_CLAMP)
            n_clamped += int(np.sum(clip != rbar))
            ll = y * np.log(clip) + (1.0 - y) * np.log1p(-clip)
            # d loglik / d Rbar and its derivative in Rbar
            factor = y / clip - (1.0 - y) / (1.0 - clip)
            dfactor = -y / clip**2 - (1.0 - y) / (1.0 - clip) ** 2
            if eps_parts is None:
                total += float(ll.sum())
                wtot += y.shape[0]
            else:
                eps = eps_parts[j]
                total += float(np.dot(eps, ll))
                wtot += float(eps.sum())
                factor = factor * eps
                dfactor = dfactor * eps
            if gidx is None:
                gfac, gdfac = factor, dfactor
            else:
                m = rbar_unit.shape[0]
                gfac = np.bincount(gidx, weights=factor, minlength=m)
                gdfac = np.bincount(gidx, weights=dfactor, minlength=m)
            grad += gfac @ drbar_unit
            if hess:
                hmat += (drbar_unit * gdfac[:, None]).T @ drbar_unit
                flat_u = u.reshape(-1, p)
                curv = (gfac[:, None] * wpdf * (-lp)).reshape(-1)
                hmat += (flat_u * curv[:, None]).T @ flat_u
        if hess:
            return -total / wtot, -grad / wtot, -hmat / wtot, n_clamped
        return -total / wtot, -grad / wtot, n_clamped


def fit_beta(data, nuisance, quad=None, *, init=None, eps=None, max_iter=500, gtol=1e-5):
    """Maximize the estimated likelihood in beta for a fixed nuisance.

    ``init`` warm-starts from RiskParams (or a packed vector); default is
    a flat model at the observed event rate.  ``eps`` holds optional
    per-subject perturbation weights.  Raises ConvergenceError (with the
    best iterate attached) if the per-unit-weight score exceeds ``gtol``
    after ``max_iter`` iterations.
    """
    quad = quad or Quadrature(40)
    tensors = BranchTensors(data, nuisance, quad)
    eps_parts = None
    if eps is not None:
        eps = np.asarray(eps, dtype=float)
        eps_parts = tuple(eps[m] for m in tensors.masks)

    y = data.y
    if y.sum() == 0 or y.sum() == y.shape[0]:
        raise DesignError("infection outcome is constant; risk model unidentifiable")

    p = 6 + (data.n_levels - 1)
    rate = float(np.mean(y)) if eps is None else float(np.dot(eps, y) / eps.sum())
    flat0 = np.zeros(p)
    flat0[0] = ndtri(np.clip(rate, 1e-6, 1.0 - 1e-6))
    if init is None:
        x0 = flat0
    elif isinstance(init, RiskParams):
        x0 = init.as_array()
    else:
        x0 = np.asarray(init, dtype=float)

    def fgh(b, need_hess):
        if need_hess:
            return tensors.negloglik_grad(b, eps_parts, hess=True)[:3]
        return tensors.negloglik_grad(b, eps_parts)[:2]

    def solve_from(start):
        x, n_iter, hess, _ = damped_newton(fgh, start, max_iter=max_iter)
        f, g, n_clamped = tensors.negloglik_grad(x, eps_parts)
        grad_norm = float(np.max(np.abs(g)))
        if grad_norm > gtol:
            res = minimize(lambda b: tensors.negloglik_grad(b, eps_parts)[:2], x,
                           jac=True, method="BFGS",
                           options={"gtol": 1e-9, "maxiter": int(max_iter)})
            x = res.x
            n_iter += int(res.nit)
            f, g, n_clamped = tensors.negloglik_grad(x, eps_parts)
            grad_norm = float(np.max(np.abs(g)))
        return x, f, grad_norm, n_iter, hess, n_clamped

    x, f, grad_norm, n_iter, hess, n_clamped = solve_from(x0)
    if np.max(np.abs(x)) > ESCAPE_NORM and not np.array_equal(x0, flat0):
        # saturated probits zero the score along an escape ray, which can
        # park a bad start on a flat plateau; re-solve from the flat start
        # and keep whichever point has the higher likelihood
        x2, f2, gn2, n2, hess2, nc2 = solve_from(flat0)
        n_iter += n2
        if f2 < f:
            x, f, grad_norm, hess, n_clamped = x2, f2, gn2, hess2, nc2
    wtot = data.n if eps is None else float(eps.sum())
    result = FitResult(
        params=RiskParams.from_array(x),
        loglik=-f * wtot,
        grad_norm=grad_norm,
        n_iter=int(n_iter),
        n_clamped=int(n_clamped),
        converged=grad_norm <= gtol,
    )
    if not result.converged:
        raise ConvergenceError(
            f"risk-model fit stopped with score norm {grad_norm:.3g} > {gtol:g} "
            f"after {n_iter} iterations", result=result,
        )
    cond = np.linalg.cond(hess) if hess is not None else np.inf
    if not np.isfinite(cond) or cond > 1e10:
        warnings.warn("risk-model information matrix is nearly singular",
                      RuntimeWarning, stacklevel=2)
    return result


def averaged_risk(obs, params, nuisance, quad=None):
    """Averaged infection risk Rbar for a single subject."""
    from .data import TrialData
    from .model import DetectionLimit

    quad = quad or Quadrature(40)
    data = TrialData(
        z=np.array([obs.z], dtype=np.int8),
        x=np.array([obs.x]),
        y=np.array([obs.y], dtype=np.int8),
        delta=np.array([obs.delta], dtype=np.int8),
        s=np.array([obs.s if obs.s is not None else np.nan]),
        delta_b=np.array([obs.delta_b], dtype=np.int8),
        b=np.array([obs.b if obs.b is not None else np.nan]),
        limit=DetectionLimit(nuisance.limit),
        n_levels=nuisance.n_levels,
    )
    tensors = BranchTensors(data, nuisance, quad)
    risks = tensors.averaged_risks(params.as_array())
    for j, mask in enumerate(tensors.masks):
        if mask[0]:
            return float(risks[j][0])
    raise AssertionError("unreachable: every row falls in one branch")


def loglik_contribution(obs, params, nuisance, quad=None):
    """Log-likelihood term of a single subject (for audits and checks)."""
    r = averaged_risk(obs, params, nuisance, quad)
    r = min(max(r, RBAR_CLAMP), 1.0 - RBAR_CLAMP)
    return float(obs.y * np.log(r) + (1 - obs.y) * np.log1p(-r))
