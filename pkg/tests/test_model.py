"""Risk model: design packing, probabilities, and contrast arithmetic."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import ndtr

from vecurves.errors import NumericError, SchemaError
from vecurves.model import (
    CONTRASTS, DetectionLimit, RiskParams, contrast_eval, linear_predictor,
    risk, risk_design,
)

BETA = RiskParams(-0.5, 0.16, -0.34, -0.21, -0.25, 0.0, beta6=(0.24, 0.11, 0.20))


def test_params_pack_round_trip():
    arr = BETA.as_array()
    assert arr.shape == (9,)
    again = RiskParams.from_array(arr)
    assert again == BETA
    assert BETA.n_levels == 4


def test_params_reject_non_finite():
    with pytest.raises(SchemaError):
        RiskParams(np.nan, 0, 0, 0, 0, 0)
    with pytest.raises(SchemaError):
        RiskParams.from_array(np.zeros(5))


def test_risk_matches_hand_computed_probit():
    z, s, b, x = 1, 2.2, 1.7, 3
    lp = (BETA.beta0 + BETA.beta1 * z + BETA.beta2 * s + BETA.beta3 * z * s
          + BETA.beta4 * b + BETA.beta5 * z * b + BETA.beta6[x - 2])
    assert_allclose(risk(BETA, z, s, b, x), ndtr(lp), rtol=0, atol=1e-15)
    assert_allclose(linear_predictor(BETA, z, s, b, x), lp, atol=1e-15)


def test_risk_design_reference_level_has_no_dummy():
    row = risk_design(0, 1.5, 1.0, 1, 4)
    assert_allclose(row, [1.0, 0.0, 1.5, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    row4 = risk_design(1, 2.0, 1.2, 4, 4)
    assert_allclose(row4[-3:], [0.0, 0.0, 1.0])


def test_risk_broadcasts_and_checks_domain():
    out = risk(BETA, 1, np.array([1.0, 2.0, 3.0]), 1.4, np.array([1, 2, 3]))
    assert out.shape == (3,)
    with pytest.raises(SchemaError):
        risk(BETA, 1, 2.0, 1.5, 5)
    with pytest.raises(SchemaError):
        risk(BETA, 1, 0.5, 1.5, 2, limit=DetectionLimit(1.0))


def test_contrast_forms():
    r1, r0 = 0.02, 0.05
    assert_allclose(contrast_eval(CONTRASTS["ve"], r1, r0), 1 - r1 / r0)
    assert_allclose(contrast_eval(CONTRASTS["difference"], r1, r0), r1 - r0)
    assert_allclose(contrast_eval(CONTRASTS["log-ratio"], r1, r0), np.log(r1 / r0))


def test_ratio_contrasts_require_positive_risks():
    with pytest.raises(NumericError):
        contrast_eval(CONTRASTS["ve"], 0.02, 0.0)
    with pytest.raises(NumericError):
        contrast_eval(CONTRASTS["log-ratio"], 0.0, 0.05)
    # difference is defined everywhere
    assert contrast_eval(CONTRASTS["difference"], 0.0, 0.0) == 0.0


def test_unknown_contrast_rejected():
    from vecurves.model import Contrast

    with pytest.raises(SchemaError):
        Contrast("hazard")
