import json
import math
from decimal import Decimal, getcontext

import pytest
from hypothesis import given
from hypothesis import strategies as st

from care import vcbound as vc
from care.errors import ConfigError

getcontext().prec = 50


def exact_difference(n, h2, d=1):
    """d n^2 (sqrt(4 h2^2 + h2) - 2 h2) in 50-digit decimal arithmetic."""
    return Decimal(d * n * n) * ((Decimal(4 * h2 * h2 + h2)).sqrt() - 2 * h2)


def test_gcn_mults_examples():
    assert vc.mults_gcn(vc.VcProfile.gcn(10, 4)) == 560
    assert vc.mults_gcn(vc.VcProfile.gcn(1, 1)) == 2
    assert vc.mults_gcn(vc.VcProfile.gcn(10, 4, d=3)) == 3 * 560


def test_care_mults_examples():
    assert vc.mults_care(vc.VcProfile.care(10, 4)) == 1480
    assert isinstance(vc.mults_care(vc.VcProfile.care(7, 5, d=2)), int)


@given(st.integers(1, 60), st.integers(1, 60))
def test_schedule_matches_base_forms(n, h):
    assert vc.mults_gcn(vc.VcProfile.gcn(n, h)) == vc.q1_base(n, h)
    assert vc.mults_care(vc.VcProfile.care(n, h)) == vc.q2_base(n, h)
    assert vc.params_care(vc.VcProfile.care(n, h)) == vc.t2_base(h)
    assert vc.params_gcn(vc.VcProfile.gcn(n, h)) == vc.t1_base(h)


def test_care_mults_increase_in_each_dimension():
    base = dict(h_gcn_in=3, h_gcn_out=3, h_set_in=3, h_set_out=3, h_trans_in=6, h_trans_out=3)
    q = vc.mults_care(vc.VcProfile(5, (vc.LayerDims(**base),)))
    for key in ("h_gcn_in", "h_set_in", "h_trans_out"):
        bumped = dict(base, **{key: base[key] + 1})
        assert vc.mults_care(vc.VcProfile(5, (vc.LayerDims(**bumped),))) > q
    assert vc.mults_care(vc.VcProfile(6, (vc.LayerDims(**base),))) > q


def test_parameter_examples():
    assert vc.t2_base(4) == 68
    assert vc.t1_base(10) == 100
    assert vc.t2_base(10) > vc.t1_base(10)
    assert vc.match_parameters(4) == pytest.approx(math.sqrt(68))
    assert vc.match_parameters(4) == pytest.approx(8.24621, abs=1e-5)
    assert vc.match_parameters(10**6) / 10**6 == pytest.approx(2.0, abs=1e-6)
    assert all(vc.match_parameters(h) > 2 * h for h in range(1, 300))


def test_layer_dims_validation():
    with pytest.raises(ConfigError):
        vc.LayerDims(0, 3)
    with pytest.raises(ConfigError, match="h_trans_in"):
        vc.LayerDims(3, 3, 3, 3, 5, 3)
    with pytest.raises(ConfigError):
        vc.mults_care(vc.VcProfile.gcn(3, 3))
    with pytest.raises(ConfigError):
        vc.VcProfile(0, (vc.LayerDims(1, 1),))
    with pytest.raises(ConfigError):
        vc.theorem1_check(0, 4)


def test_theorem1_example():
    r = vc.theorem1_check(10, 4, 1)
    assert r.difference == pytest.approx(100 * (math.sqrt(68) - 8))
    assert r.difference == pytest.approx(24.621, abs=1e-3)
    assert r.verdict
    assert r.q2 == 1480 and r.t2 == 68
    assert r.q1 - r.q2 == pytest.approx(r.difference, rel=1e-9)
    assert r.bound_ratio == pytest.approx((r.q1 / r.q2) ** 2) and r.bound_ratio > 1


def test_difference_against_decimal_oracle():
    for n in (1, 7, 100):
        for h2 in (1, 2, 3, 50, 256, 10**6):
            for d in (1, 2, 4):
                r = vc.theorem1_check(n, h2, d)
                assert abs(Decimal(r.difference) - exact_difference(n, h2, d)) < Decimal("1e-9")


def test_difference_grows_towards_quarter_n_squared():
    # h2 / (sqrt(4 h2^2 + h2) + 2 h2) increases to 1/4, so the gap never vanishes
    diffs = [vc.theorem1_check(20, h2).difference for h2 in (1, 10, 100, 1000, 10**5)]
    assert all(0 < a < b < 100 for a, b in zip(diffs, diffs[1:]))
    assert diffs[-1] == pytest.approx(400 / 4, rel=1e-4)


def test_sweep_small_grid():
    reports = vc.sweep(range(1, 6), range(1, 9), (1, 2))
    assert len(reports) == 5 * 8 * 2
    assert all(r.verdict and r.difference > 0 for r in reports)


def test_bound_expression():
    assert str(vc.vc_upper_bound_expr(1, 1)) == "α·1"
    a, b = vc.vc_upper_bound_expr(30, 2), vc.vc_upper_bound_expr(10, 2)
    assert a.ratio(b) == pytest.approx(9.0)
    with pytest.raises(ConfigError):
        vc.vc_upper_bound_expr(0, 1)


def test_table_and_json():
    reports = [vc.theorem1_check(10, 4), vc.theorem1_check(3, 2, 2)]
    lines = vc.format_table(reports).splitlines()
    assert lines[0].split() == list(vc.TABLE_COLUMNS)
    assert lines[1].split()[-1] == "true"
    data = json.loads(vc.reports_json(reports))
    assert data[0]["q2"] == 1480 and data[1]["d"] == 2
