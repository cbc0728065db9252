"""End-to-end estimation pipeline: weights, nuisance, mixes, risk model.

``fit_pipeline`` runs the full two-stage procedure on one dataset and is
the unit re-executed under perturbation weights, so every stage accepts
the same per-subject ``eps`` vector and optional warm starts from a
baseline fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .curves import CategoryMix, compute_curves, fit_category_mix
from .errors import ConfigError
from .likelihood import FitResult, fit_beta
from .model import CONTRASTS
from .nuisance import NuisanceFit, fit_nuisance
from .quadrature import Quadrature

__all__ = ["EstimationOptions", "PipelineFit", "fit_pipeline", "pipeline_curves"]


@dataclass
class EstimationOptions:
    """Tuning knobs of the estimation pipeline and its inference wrapper."""

    quad_nodes: int = 40
    stratify_s_weights_by_delta_b: bool = False
    mix_intercept_only_below: int = 50
    mix_linear_in_s: bool = True
    contrast: str = "ve"
    alpha: float = 0.05
    n_perturb: int = 500
    grid_points: int = 51
    max_iter: int = 500

    def __post_init__(self):
        if self.contrast not in CONTRASTS:
            raise ConfigError(f"unknown contrast {self.contrast!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.quad_nodes < 2:
            raise ConfigError("quad_nodes must be at least 2")
        if self.n_perturb < 0 or self.grid_points < 1:
            raise ConfigError("n_perturb and grid_points must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown estimation options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class PipelineFit:
    """All fitted components for one dataset (one eps draw)."""

    nuisance: NuisanceFit
    mix: CategoryMix
    fit: FitResult
    quad: Quadrature
    options: EstimationOptions


def fit_pipeline(data, options=None, *, eps=None, warm=None):
    """Fit weights, nuisance laws, covariate mixes, then the risk model.

    ``eps`` are perturbation weights (None for the baseline fit); ``warm``
    is a baseline PipelineFit whose estimates seed every optimizer.
    """
    options = options or EstimationOptions()
    quad = warm.quad if warm is not None and warm.quad.n_nodes == options.quad_nodes \
        else Quadrature(options.quad_nodes)
    nuisance = fit_nuisance(
        data,
        stratify_s_by_delta_b=options.stratify_s_weights_by_delta_b,
        eps=eps,
        warm=None if warm is None else warm.nuisance,
    )
    mix = fit_category_mix(
        data, nuisance.weights, eps=eps,
        intercept_only_below=options.mix_intercept_only_below,
        linear_in_s=options.mix_linear_in_s,
        warm=None if warm is None else warm.mix,
    )
    fit = fit_beta(
        data, nuisance, quad,
        init=None if warm is None else warm.fit.params,
        eps=eps, max_iter=options.max_iter,
    )
    return PipelineFit(nuisance=nuisance, mix=mix, fit=fit, quad=quad, options=options)


def pipeline_curves(pipefit, grid, kinds=None):
    """Contrast curves of a fitted pipeline over a grid."""
    from .curves import CURVE_KINDS

    return compute_curves(
        pipefit.fit.params, pipefit.nuisance, pipefit.mix, grid,
        contrast=pipefit.options.contrast, quad=pipefit.quad,
        kinds=kinds or CURVE_KINDS,
    )
