"""Perturbation resampling: pointwise CIs, simultaneous bands, band test.

Each draw multiplies every subject's contribution to every estimating
step by an independent mean-one, variance-one exponential weight and
reruns the whole pipeline warm-started at the baseline estimates.  The
spread of the perturbed curves around the baseline curve yields
standard errors, normal-quantile pointwise intervals, and sup-statistic
simultaneous bands; inverting the band family for the seropositive-
minus-seronegative gap curve gives a p-value for a flat zero gap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy.special import ndtri

from .curves import CURVE_KINDS
from .errors import DesignError, NumericError, VecurvesError
from .pipeline import fit_pipeline, pipeline_curves

__all__ = [
    "PerturbationDraw",
    "make_draw",
    "PerturbationEnsemble",
    "run_ensemble",
    "pointwise_ci",
    "simultaneous_band",
    "BandResult",
    "band_inversion_test",
    "TestResult",
]

MIN_BAND_DRAWS = 20
MAX_FAILURE_FRACTION = 0.05


@dataclass
class PerturbationDraw:
    """One vector of positive resampling weights with its seed path."""

    epsilon: np.ndarray
    seed_path: tuple

    def __post_init__(self):
        eps = np.asarray(self.epsilon, dtype=float)
        if np.any(eps <= 0) or np.any(~np.isfinite(eps)):
            raise NumericError("perturbation weights must be positive and finite")
        n = eps.shape[0]
        if abs(eps.mean() - 1.0) > 5.0 / np.sqrt(n):
            raise NumericError(
                f"perturbation weight mean {eps.mean():.4f} outside the sanity "
                f"window 1 +- {5.0 / np.sqrt(n):.4f}"
            )
        self.epsilon = eps


def make_draw(n, master_seed, index):
    """Mean-one exponential weights from the (master_seed, index) stream."""
    path = _seed_path(master_seed) + (int(index),)
    rng = np.random.default_rng(path)
    return PerturbationDraw(epsilon=rng.standard_exponential(int(n)), seed_path=path)


def _seed_path(master_seed):
    if isinstance(master_seed, (tuple, list, np.ndarray)):
        return tuple(int(v) for v in master_seed)
    return (int(master_seed),)


@dataclass
class PerturbationEnsemble:
    """Perturbed curves stacked per kind: arrays of shape (n_ok, n_grid)."""

    grid: object
    kinds: tuple
    values: dict
    n_requested: int
    failures: list
    master_seed: object

    @property
    def n_ok(self):
        first = next(iter(self.values.values()))
        return int(first.shape[0])

    def sd(self, kind):
        """Per-point sample standard deviation around the ensemble mean."""
        v = self.values[kind]
        if v.shape[0] < 2:
            raise DesignError("need at least two successful draws for a spread")
        sd = v.std(axis=0, ddof=1)
        if np.any(sd <= 0.0):
            raise NumericError(f"zero perturbation spread on the {kind} curve")
        return sd


def _one_draw(data, options, grid, kinds, baseline, master_seed, index):
    try:
        draw = make_draw(data.n, master_seed, index)
        pf = fit_pipeline(data, options, eps=draw.epsilon, warm=baseline)
        cur = pipeline_curves(pf, grid, kinds)
        return index, {k: cur[k]["est"] for k in kinds}, None
    except VecurvesError as err:
        return index, None, f"{type(err).__name__}: {err}"


def run_ensemble(data, grid, baseline, *, options=None, n_draws=None,
                 master_seed=0, kinds=CURVE_KINDS, threads=1,
                 max_failure_fraction=MAX_FAILURE_FRACTION):
    """Run the perturbation ensemble; deterministic for any thread count.

    Individual draws may fail (optimizer or sanity-window violations); more
    than ``max_failure_fraction`` of failures aborts with NumericError.
    """
    options = options or baseline.options
    if n_draws is None:
        n_draws = options.n_perturb
    kinds = tuple(kinds)
    if int(threads) > 1:
        results = Parallel(n_jobs=int(threads), backend="loky")(
            delayed(_one_draw)(data, options, grid, kinds, baseline, master_seed, i)
            for i in range(int(n_draws))
        )
    else:
        results = [
            _one_draw(data, options, grid, kinds, baseline, master_seed, i)
            for i in range(int(n_draws))
        ]
    results.sort(key=lambda r: r[0])
    failures = [(i, msg) for i, val, msg in results if val is None]
    good = [val for _, val, msg in results if val is not None]
    if len(failures) > max_failure_fraction * n_draws:
        raise NumericError(
            f"{len(failures)} of {n_draws} perturbation draws failed "
            f"(limit {max_failure_fraction:.0%}); first: {failures[0][1]}"
        )
    values = {k: np.vstack([g[k] for g in good]) for k in kinds}
    return PerturbationEnsemble(
        grid=grid, kinds=kinds, values=values, n_requested=int(n_draws),
        failures=failures, master_seed=master_seed,
    )


def pointwise_ci(est, sd, alpha=0.05):
    """Normal-quantile interval est +- z_{1-alpha/2} sd; returns (lo, hi, z)."""
    z = float(ndtri(1.0 - alpha / 2.0))
    est = np.asarray(est, dtype=float)
    sd = np.asarray(sd, dtype=float)
    return est - z * sd, est + z * sd, z


@dataclass
class BandResult:
    lo: np.ndarray
    hi: np.ndarray
    q: float
    alpha: float


def simultaneous_band(est, draws, sd, alpha=0.05, min_draws=MIN_BAND_DRAWS):
    """Sup-statistic simultaneous band over the grid.

    ``q`` is the empirical (1 - alpha) quantile (upper tie convention) of
    sup_s |(perturbed - est)/sd|; the band is est +- q sd.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] < min_draws:
        raise DesignError(
            f"simultaneous band needs at least {min_draws} draws, got {draws.shape[0]}"
        )
    est = np.asarray(est, dtype=float)
    sd = np.asarray(sd, dtype=float)
    sups = np.max(np.abs((draws - est) / sd), axis=1)
    q = float(np.quantile(sups, 1.0 - alpha, method="higher"))
    return BandResult(lo=est - q * sd, hi=est + q * sd, q=q, alpha=alpha)


@dataclass
class TestResult:
    """Band-inversion test of a flat zero curve."""

    p_value: float
    side: str
    sup_stat: float
    n_draws: int


def band_inversion_test(est, draws, sd, min_draws=MIN_BAND_DRAWS):
    """Smallest band level at which the zero curve leaves the band.

    With T_b = sup_s |(draw_b - est)/sd| and T_obs = sup_s |est/sd|, the
    returned p-value is #{T_b >= T_obs}/B, the minimum over the valid
    one-sided inversions; ``side`` reports which excursion drove it.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] < min_draws:
        raise DesignError(
            f"band-inversion test needs at least {min_draws} draws, got {draws.shape[0]}"
        )
    est = np.asarray(est, dtype=float)
    sd = np.asarray(sd, dtype=float)
    t_draws = np.max(np.abs((draws - est) / sd), axis=1)
    ratio = est / sd
    sup_plus = float(np.max(ratio))
    sup_minus = float(np.max(-ratio))
    sup_abs = max(sup_plus, sup_minus)
    p = float(np.mean(t_draws >= sup_abs))
    side = "upper" if sup_plus >= sup_minus else "lower"
    return TestResult(p_value=p, side=side, sup_stat=sup_abs, n_draws=int(draws.shape[0]))
