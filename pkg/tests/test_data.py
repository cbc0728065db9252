"""Dataset validation and CSV round trips."""

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from vecurves.data import Observation, read_dataset, validate_dataset, write_dataset
from vecurves.errors import DesignError, SchemaError
from vecurves.model import DetectionLimit

LIMIT = DetectionLimit(1.0)


def obs(**kw):
    base = dict(z=1, x=1, y_tau=0, y=0, delta=1, s=2.0, delta_b=1, b=1.5)
    base.update(kw)
    return Observation(**base)


def small_rows():
    return [
        obs(),
        obs(z=0, delta=0, s=None, x=2),
        obs(z=1, y=1, delta_b=0, b=None, x=3, s=1.0),
        obs(z=0, delta=0, s=None, delta_b=0, b=None, x=4),
    ]


def test_validate_basic_counts():
    data, report = validate_dataset(small_rows(), LIMIT)
    assert data.n == 4
    assert report.arm_sizes == {1: 2, 0: 2}
    assert report.pattern_counts[(1, 1)] == 1
    assert report.pattern_counts[(0, 0)] == 1
    assert data.n_levels == 4


def test_early_infections_are_excluded():
    rows = small_rows() + [obs(y_tau=1, y=1, delta=0, s=None, delta_b=0, b=None)]
    data, report = validate_dataset(rows, LIMIT)
    assert report.n_input == 5
    assert report.n_excluded_early == 1
    assert data.n == 4


@pytest.mark.parametrize("bad, message", [
    (dict(z=2), "z must be 0 or 1"),
    (dict(x=0), "x must be an integer level"),
    (dict(delta=1, s=None), "s is missing"),
    (dict(delta=0), "s is present"),
    (dict(delta_b=1, b=None), "b is missing"),
    (dict(delta_b=0), "b is present"),
    (dict(s=0.2), "below the detection limit"),
    (dict(y_tau=1, delta=1), "y_tau=1 rows cannot"),
])
def test_validate_rejects_bad_rows(bad, message):
    rows = small_rows() + [obs(**bad)]
    with pytest.raises(SchemaError, match=message):
        validate_dataset(rows, LIMIT)


def test_weight_columns_checked_only_where_sampled():
    rows = [obs(weight_s=0.5, weight_b=1.0),
            obs(z=0, delta=0, s=None, weight_s=None, weight_b=0.4)]
    data, _ = validate_dataset(rows, LIMIT)
    assert data.has_user_weights()
    bad = [obs(weight_s=1.5)] + small_rows()
    with pytest.raises(SchemaError, match="weight_s"):
        validate_dataset(bad, LIMIT)


def test_empty_arm_is_a_design_error():
    rows = [obs(), obs(y=1)]
    with pytest.raises(DesignError):
        validate_dataset(rows, LIMIT)


def test_empty_dataset_rejected():
    with pytest.raises(SchemaError, match="empty"):
        validate_dataset([], LIMIT)


def test_csv_round_trip(tmp_path):
    data, _ = validate_dataset(small_rows(), LIMIT)
    path = tmp_path / "trial.csv"
    write_dataset(path, data)
    back, report = read_dataset(path, LIMIT)
    assert back.n == data.n
    assert_array_equal(back.z, data.z)
    assert_array_equal(back.x, data.x)
    assert_array_equal(back.delta_b, data.delta_b)
    assert_array_equal(np.isnan(back.s), np.isnan(data.s))
    ok = ~np.isnan(data.s)
    assert_array_equal(back.s[ok], data.s[ok])
    assert_array_equal(back.b[~np.isnan(data.b)], data.b[~np.isnan(data.b)])


def test_csv_round_trip_with_weights(tmp_path):
    rows = [obs(weight_s=0.25, weight_b=0.5),
            obs(z=0, delta=0, s=None, weight_b=0.5)]
    data, _ = validate_dataset(rows, LIMIT)
    path = tmp_path / "trial.csv"
    write_dataset(path, data)
    back, _ = read_dataset(path, LIMIT)
    assert back.weight_s is not None and back.weight_b is not None
    assert back.weight_s[back.delta == 1][0] == 0.25
    assert np.isnan(back.weight_s[back.delta == 0][0])


def test_read_rejects_malformed_files(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("")
    with pytest.raises(SchemaError, match="empty"):
        read_dataset(p)
    p.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(SchemaError, match="header"):
        read_dataset(p)
    p.write_text("z,x,y_tau,y,delta,s,delta_b,b\n1,1,0,0,1,oops,1,1.5\n")
    with pytest.raises(SchemaError, match="cannot parse"):
        read_dataset(p)
    p.write_text("z,x,y_tau,y,delta,s,delta_b,b\n1,1,0,0\n")
    with pytest.raises(SchemaError, match="expected 8 fields"):
        read_dataset(p)
