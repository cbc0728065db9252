"""Marginal risk and contrast curves over the post-randomization biomarker.

For each arm z, ``risk_by_stratum`` averages the subject-level probit risk
over the unobserved baseline marker B and the covariate X:

    risk_z(s, stratum) = sum_x P(Y=1 | z, s, stratum, x) P(X=x | s, stratum)

where the inner probability integrates B over its Bayes-inverted mixed
conditional law given (s, x) restricted to the stratum (baseline
seronegative B = c, seropositive B > c, or marginal), and the category
mix P(X | s, stratum) comes from weighted multinomial-logit fits.  The
curve of a contrast between arms is evaluated over a common grid of s
values, and the ``difference`` kind is the seropositive-minus-seronegative
gap of that contrast.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import DesignError, SchemaError
from .model import CONTRASTS, Contrast, contrast_eval, risk_design
from .multinomial import fit_multinomial
from .nuisance import mixed_b_given_s
from .quadrature import Quadrature

__all__ = [
    "CurveGrid",
    "default_grid",
    "CategoryMix",
    "fit_category_mix",
    "risk_by_stratum",
    "compute_curves",
    "CurveEstimate",
    "write_curve_table",
    "read_curve_table",
    "STRATA",
    "CURVE_KINDS",
]

STRATA = ("marginal", "seropositive", "seronegative")
CURVE_KINDS = ("marginal", "seropositive", "seronegative", "difference")
DENOM_FLOOR = 1e-10


@dataclass(frozen=True)
class CurveGrid:
    """Strictly increasing biomarker values, all at or above the limit."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise SchemaError("curve grid must be a non-empty 1-d array")
        if np.any(~np.isfinite(v)) or np.any(np.diff(v) <= 0):
            raise SchemaError("curve grid must be finite and strictly increasing")
        object.__setattr__(self, "values", v)

    @property
    def n(self):
        return self.values.shape[0]


def default_grid(data, n_points=51, lo_pct=2.5, hi_pct=97.5):
    """Evenly spaced grid between percentiles of observed S among vaccinees."""
    s = data.s[(data.z == 1) & (data.delta == 1)]
    if s.size < 2 or np.unique(s).size < 2:
        raise DesignError("too few measured vaccine-arm biomarkers to form a grid")
    lo, hi = np.percentile(s, [lo_pct, hi_pct])
    if not hi > lo:
        raise DesignError("degenerate biomarker grid (flat percentile range)")
    return CurveGrid(np.linspace(lo, hi, int(n_points)))


class _FixedMix:
    """Degenerate category mix for strata where only one level appears."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=float)

    def probabilities(self, design):
        design = np.asarray(design, dtype=float)
        return np.broadcast_to(self.probs, design.shape[:-1] + self.probs.shape).copy()


@dataclass
class CategoryMix:
    """Per-stratum covariate-mix models over s (multinomial logit in s).

    The seronegative model drops the s slope when its stratum has fewer
    rows than ``intercept_only_below``; degenerate strata (a single level
    present) fall back to fixed weighted proportions.
    """

    models: dict
    seroneg_linear: bool

    def probabilities(self, stratum, s):
        model = self.models.get(stratum)
        if model is None:
            raise DesignError(f"stratum {stratum!r} has no covariate-mix model (empty)")
        s = np.asarray(s, dtype=float)
        if isinstance(model, _FixedMix) or model.gamma.shape[1] == 1:
            design = np.ones(s.shape + (1,))
        else:
            design = np.stack([np.ones_like(s), s], axis=-1)
        return model.probabilities(design)


def _mix_fit(cat, s, w, n_levels, linear, init=None):
    present = np.unique(cat[w > 0])
    if present.size < 2:
        probs = np.bincount(cat, weights=w, minlength=n_levels + 1)[1:]
        return _FixedMix(probs / probs.sum())
    design = np.stack([np.ones_like(s), s], axis=-1) if linear else np.ones((s.shape[0], 1))
    if init is not None and init.shape[1] != design.shape[1]:
        init = None
    return fit_multinomial(cat, design, weights=w, n_levels=n_levels,
                           design_labels=("intercept", "s") if linear else ("intercept",),
                           init=init)


def fit_category_mix(data, weights, *, eps=None, intercept_only_below=50,
                     linear_in_s=True, warm=None):
    """Fit the three per-stratum covariate mixes with IPW (times eps) weights.

    The marginal stratum uses every S-measured row with marginal S-sampling
    weights; the two baseline strata use rows with both markers measured and
    product S- and B-sampling weights.
    """
    eps = np.ones(data.n) if eps is None else np.asarray(eps, dtype=float)
    c = data.limit.c
    models = {}

    m = data.delta == 1
    w = eps[m] / weights.pi_s_marginal[m]
    init = _warm_gamma(warm, "marginal")
    models["marginal"] = _mix_fit(data.x[m], data.s[m], w, data.n_levels,
                                  linear_in_s, init)

    both = (data.delta == 1) & (data.delta_b == 1)
    w_both = eps / np.where(both, weights.pi_s_fit * weights.pi_b, np.nan)

    pos = both & (data.b > c)
    if np.any(pos):
        models["seropositive"] = _mix_fit(
            data.x[pos], data.s[pos], w_both[pos], data.n_levels,
            linear_in_s, _warm_gamma(warm, "seropositive"),
        )
    neg = both & (data.b <= c)
    seroneg_linear = linear_in_s and int(np.sum(neg)) >= int(intercept_only_below)
    if np.any(neg):
        models["seronegative"] = _mix_fit(
            data.x[neg], data.s[neg], w_both[neg], data.n_levels,
            seroneg_linear, _warm_gamma(warm, "seronegative"),
        )
    return CategoryMix(models=models, seroneg_linear=seroneg_linear)


def _warm_gamma(warm, stratum):
    if warm is None:
        return None
    model = warm.models.get(stratum)
    if model is None or isinstance(model, _FixedMix):
        return None
    return model.gamma


def _stratum_risks(beta, nuisance, s, x, quad):
    """Risks per stratum for both arms; shapes (2,) + broadcast(s, x).

    Shares one Bayes-inversion batch across strata; the marginal risk is
    assembled as the exact mixture of the two baseline strata.
    """
    s = np.asarray(s, dtype=float)
    x = np.asarray(x)
    c = nuisance.limit
    D = nuisance.n_levels
    at_limit, nodes, nw = mixed_b_given_s(
        nuisance.b_given_x, nuisance.s_given_b, s, x, quad, D
    )
    out = {st: [] for st in STRATA}
    for zv in (0.0, 1.0):
        sn = ndtr(risk_design(zv, s, c, x, D) @ beta)
        lp = risk_design(zv, s[..., None], nodes, x[..., None], D) @ beta
        cont = np.einsum("...k,...k->...", nw, ndtr(lp))
        sp = cont / np.maximum(1.0 - at_limit, DENOM_FLOOR)
        out["seronegative"].append(sn)
        out["seropositive"].append(sp)
        out["marginal"].append(at_limit * sn + (1.0 - at_limit) * sp)
    return {st: np.stack(v) for st, v in out.items()}


def risk_by_stratum(params, nuisance, s, x, stratum, quad=None, z=None):
    """P(Y=1 | z, S=s, stratum, X=x) for z in {0, 1} (or one arm via ``z``).

    ``s`` and ``x`` broadcast; returns risks shaped (2,) + broadcast shape
    when z is None (placebo row first), else the broadcast shape.
    """
    if stratum not in STRATA:
        raise SchemaError(f"unknown stratum {stratum!r}")
    quad = quad or Quadrature(40)
    risks = _stratum_risks(params.as_array(), nuisance, s, x, quad)[stratum]
    if z is None:
        return risks
    res = risks[int(z)]
    return res.item() if res.ndim == 0 else res


def compute_curves(params, nuisance, mix, grid, contrast=None, quad=None,
                   kinds=CURVE_KINDS):
    """Evaluate contrast curves over the grid.

    Returns {kind: {"est": ..., "risk1": ..., "risk0": ...}}; the
    ``difference`` kind is the seropositive-minus-seronegative contrast
    gap and carries no per-arm risks.
    """
    contrast = contrast or CONTRASTS["ve"]
    if isinstance(contrast, str):
        contrast = CONTRASTS[contrast]
    quad = quad or Quadrature(40)
    D = nuisance.n_levels
    svals = grid.values
    xlev = np.arange(1, D + 1)
    strata_needed = {k for k in kinds if k != "difference"}
    if "difference" in kinds:
        strata_needed.update(("seropositive", "seronegative"))
    rx = _stratum_risks(params.as_array(), nuisance, svals[:, None],
                        xlev[None, :], quad)  # each (2, m, D)
    ests = {}
    for stratum in strata_needed:
        probs = mix.probabilities(stratum, svals)  # (m, D)
        r = np.einsum("zmd,md->zm", rx[stratum], probs)
        ests[stratum] = {
            "est": contrast_eval(contrast, r[1], r[0], where=f"{stratum} curve"),
            "risk1": r[1],
            "risk0": r[0],
        }
    out = {}
    for kind in kinds:
        if kind == "difference":
            out[kind] = {
                "est": ests["seropositive"]["est"] - ests["seronegative"]["est"],
                "risk1": np.full(grid.n, np.nan),
                "risk0": np.full(grid.n, np.nan),
            }
        else:
            out[kind] = ests[kind]
    return out


@dataclass
class CurveEstimate:
    """One curve with optional uncertainty annotations."""

    kind: str
    grid: CurveGrid
    est: np.ndarray
    risk1: np.ndarray
    risk0: np.ndarray
    se: np.ndarray | None = None
    ci_lo: np.ndarray | None = None
    ci_hi: np.ndarray | None = None
    band_lo: np.ndarray | None = None
    band_hi: np.ndarray | None = None
    q_point: float | None = None
    q_simul: float | None = None


def write_curve_table(path, estimates):
    """Write curves as CSV: s,risk1,risk0,mcep,se,ci_lo,ci_hi,band_lo,band_hi,kind."""
    import csv

    def cell(arr, i):
        if arr is None:
            return ""
        v = arr[i]
        return "" if not np.isfinite(v) else repr(float(v))

    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["s", "risk1", "risk0", "mcep", "se",
                     "ci_lo", "ci_hi", "band_lo", "band_hi", "kind"])
        for cu in estimates:
            for i, s in enumerate(cu.grid.values):
                wr.writerow([
                    repr(float(s)), cell(cu.risk1, i), cell(cu.risk0, i),
                    cell(cu.est, i), cell(cu.se, i), cell(cu.ci_lo, i),
                    cell(cu.ci_hi, i), cell(cu.band_lo, i), cell(cu.band_hi, i),
                    cu.kind,
                ])


def read_curve_table(path):
    """Inverse of write_curve_table; returns a list of CurveEstimate."""
    import csv

    rows = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        expected = ["s", "risk1", "risk0", "mcep", "se",
                    "ci_lo", "ci_hi", "band_lo", "band_hi", "kind"]
        if header != expected:
            raise SchemaError(f"{path}: unexpected curve-table header")
        for cells in rd:
            if not cells:
                continue
            kind = cells[-1]
            rows.setdefault(kind, []).append(
                [float(c) if c != "" else np.nan for c in cells[:-1]]
            )
    out = []
    for kind, recs in rows.items():
        arr = np.asarray(recs)
        cols = {name: arr[:, j] for j, name in enumerate(
            ["s", "risk1", "risk0", "mcep", "se", "ci_lo", "ci_hi", "band_lo", "band_hi"])}

        def opt(name):
            col = cols[name]
            return None if np.all(np.isnan(col)) else col

        out.append(CurveEstimate(
            kind=kind, grid=CurveGrid(cols["s"]), est=cols["mcep"],
            risk1=cols["risk1"], risk0=cols["risk0"], se=opt("se"),
            ci_lo=opt("ci_lo"), ci_hi=opt("ci_hi"),
            band_lo=opt("band_lo"), band_hi=opt("band_hi"),
        ))
    return out
