"""Vaccine-efficacy curve estimation by a post-randomization biomarker and a
sub-sampled baseline biomarker under non-monotone missingness."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    CONTRASTS,
    DIFFERENCE,
    LOG_RATIO,
    VE,
    Contrast,
    DetectionLimit,
    RiskParams,
    contrast_eval,
    risk,
    risk_design,
)
from .data import Observation, TrialData, read_dataset, validate_dataset, write_dataset  # noqa: F401
from .quadrature import Quadrature  # noqa: F401
from .censnorm import CensoredNormalModel, fit_censored_normal  # noqa: F401
from .multinomial import MultinomialModel, fit_multinomial  # noqa: F401
from .nuisance import (  # noqa: F401
    MixedConditional,
    NuisanceFit,
    SamplingWeights,
    estimate_sampling_weights,
    fit_nuisance,
    invert_to_b_given_s,
)
from .likelihood import FitResult, averaged_risk, fit_beta, loglik_contribution  # noqa: F401
from .curves import (  # noqa: F401
    CURVE_KINDS,
    CurveEstimate,
    CurveGrid,
    compute_curves,
    default_grid,
    fit_category_mix,
    risk_by_stratum,
)
from .pipeline import EstimationOptions, PipelineFit, fit_pipeline, pipeline_curves  # noqa: F401
from .inference import (  # noqa: F401
    BandResult,
    PerturbationEnsemble,
    TestResult,
    band_inversion_test,
    make_draw,
    pointwise_ci,
    run_ensemble,
    simultaneous_band,
)
from .simulate import (  # noqa: F401
    MonteCarloReport,
    SimConfig,
    default_profile,
    monte_carlo,
    null_baseline_profile,
    simulate_trial,
    strong_baseline_profile,
    true_curves,
)
