"""Probit risk model for infection given arm, biomarkers, and covariates.

The model is

    P(Y = 1 | Z = z, S = s, B = b, X = x)
        = Phi(b0 + b1 z + b2 s + b3 z s + b4 b + b5 z b + b6' dummies(x))

where ``X`` is categorical with levels 1..D, dummy-coded against level 1,
and ``Phi`` is the standard normal CDF.  Biomarkers live on [c, inf) for a
shared lower detection limit ``c``; values at ``c`` are point masses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import NumericError, SchemaError

__all__ = [
    "DetectionLimit",
    "RiskParams",
    "Contrast",
    "VE",
    "DIFFERENCE",
    "LOG_RATIO",
    "CONTRASTS",
    "contrast_eval",
    "risk_design",
    "linear_predictor",
    "risk",
]

_SQRT_2PI = float(np.sqrt(2.0 * np.pi))


def norm_pdf(t):
    """Standard normal density, vectorized (faster than scipy.stats.norm)."""
    t = np.asarray(t, dtype=float)
    return np.exp(-0.5 * t * t) / _SQRT_2PI


@dataclass(frozen=True)
class DetectionLimit:
    """Shared lower detection limit for both biomarkers."""

    c: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.c):
            raise SchemaError("detection limit must be finite")


@dataclass(frozen=True)
class RiskParams:
    """Coefficients of the probit risk model.

    ``beta6`` holds the D-1 dummy coefficients for covariate levels 2..D;
    level 1 is the reference.  The packed order used throughout is
    (b0, b1, b2, b3, b4, b5, b6_2, ..., b6_D).
    """

    beta0: float
    beta1: float
    beta2: float
    beta3: float
    beta4: float
    beta5: float
    beta6: tuple = ()

    def __post_init__(self):
        vals = [self.beta0, self.beta1, self.beta2, self.beta3, self.beta4, self.beta5]
        vals.extend(self.beta6)
        if not np.all(np.isfinite(vals)):
            raise SchemaError("risk-model coefficients must be finite")
        object.__setattr__(self, "beta6", tuple(float(v) for v in self.beta6))

    @property
    def n_levels(self):
        """Number of covariate levels D implied by the dummy block."""
        return len(self.beta6) + 1

    def as_array(self):
        return np.array(
            [self.beta0, self.beta1, self.beta2, self.beta3, self.beta4, self.beta5]
            + list(self.beta6),
            dtype=float,
        )

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 1 or arr.size < 6:
            raise SchemaError("coefficient vector must be 1-d with length >= 6")
        return cls(*arr[:6], beta6=tuple(arr[6:]))


@dataclass(frozen=True)
class Contrast:
    """How vaccine and placebo risks at a common biomarker value compare.

    ``kind`` is one of ``ve`` (1 - risk1/risk0), ``difference``
    (risk1 - risk0), or ``log-ratio`` (log(risk1/risk0)).
    """

    kind: str

    def __post_init__(self):
        if self.kind not in ("ve", "difference", "log-ratio"):
            raise SchemaError(f"unknown contrast kind {self.kind!r}")

    def __call__(self, risk1, risk0):
        return contrast_eval(self, risk1, risk0)


VE = Contrast("ve")
DIFFERENCE = Contrast("difference")
LOG_RATIO = Contrast("log-ratio")
CONTRASTS = {c.kind: c for c in (VE, DIFFERENCE, LOG_RATIO)}


def contrast_eval(contrast, risk1, risk0, where=""):
    """Evaluate a contrast; ratio forms require risk0 > 0 (and risk1 > 0 for
    the log form).  ``where`` annotates the error with the offending point."""
    risk1 = np.asarray(risk1, dtype=float)
    risk0 = np.asarray(risk0, dtype=float)
    if contrast.kind == "difference":
        return risk1 - risk0
    at = f" at {where}" if where else ""
    if np.any(risk0 <= 0.0):
        raise NumericError(f"placebo risk is zero{at}; {contrast.kind} undefined")
    if contrast.kind == "ve":
        return 1.0 - risk1 / risk0
    if np.any(risk1 <= 0.0):
        raise NumericError(f"vaccine risk is zero{at}; log-ratio undefined")
    return np.log(risk1 / risk0)


def risk_design(z, s, b, x, n_levels):
    """Design rows (..., 6 + D - 1) in packed coefficient order.

    All of ``z, s, b, x`` broadcast against each other; ``x`` holds integer
    levels in 1..D.
    """
    z, s, b, x = np.broadcast_arrays(
        np.asarray(z, dtype=float),
        np.asarray(s, dtype=float),
        np.asarray(b, dtype=float),
        np.asarray(x),
    )
    levels = np.arange(2, n_levels + 1)
    dummies = (x[..., None] == levels).astype(float)
    cols = [np.ones_like(z), z, s, z * s, b, z * b]
    return np.concatenate([np.stack(cols, axis=-1), dummies], axis=-1)


def linear_predictor(params, z, s, b, x):
    return risk_design(z, s, b, x, params.n_levels) @ params.as_array()


def risk(params, z, s, b, x, limit=None):
    """Infection probability under the probit model.

    Broadcasts over array arguments.  When ``limit`` is given, enforces the
    domain s >= c, b >= c and x in 1..D.
    """
    x_arr = np.asarray(x)
    if np.any(x_arr < 1) or np.any(x_arr > params.n_levels):
        raise SchemaError("covariate level outside 1..D")
    if limit is not None:
        if np.any(np.asarray(s, dtype=float) < limit.c) or np.any(
            np.asarray(b, dtype=float) < limit.c
        ):
            raise SchemaError("biomarker value below the detection limit")
    lp = linear_predictor(params, z, s, b, x)
    if not np.all(np.isfinite(lp)):
        raise NumericError("non-finite linear predictor in risk model")
    out = ndtr(lp)
    return out.item() if out.ndim == 0 else out
