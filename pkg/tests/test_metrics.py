"""Interval scores (RMSE/PICP/PINAW/CWC) and the control-run report."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from voltgrid.errors import NumericalError
from voltgrid.metrics import (IntervalSeries, control_report, cwc, energy_kwh,
                              interval_metrics, picp, pinaw, rmse)


def _series(true, est=None, half=None):
    true = np.asarray(true, float)
    est = true.copy() if est is None else np.asarray(est, float)
    half = np.zeros_like(true) if half is None else np.asarray(half, float)
    return IntervalSeries(true=true, est=est, half=half)


# ---------------------------------------------------------------------------
# rmse


def test_rmse_identity_is_zero():
    assert rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0


def test_rmse_unit_example():
    # ||[1,0]-[0,0]|| / ||[1,0]|| = 1
    assert abs(rmse([1.0, 0.0], [0.0, 0.0]) - 1.0) < 1e-12


def test_rmse_errors():
    with pytest.raises(NumericalError, match="equal-shape"):
        rmse([1.0, 2.0], [1.0])
    with pytest.raises(NumericalError, match="zero-norm"):
        rmse([0.0, 0.0], [1.0, 0.0])


# ---------------------------------------------------------------------------
# picp / pinaw


def test_picp_alternating_coverage():
    true = np.ones(10)
    est = np.ones(10)
    est[1::2] += 0.5          # every other step misses by 0.5
    s = _series(true, est, half=np.full(10, 0.2))
    assert abs(picp(s) - 0.5) < 1e-12


def test_picp_boundary_counts_as_covered():
    s = _series([1.0], [1.2], [0.2])
    assert picp(s) == 1.0


def test_pinaw_zero_width():
    assert pinaw(_series([1.0, 2.0])) == 0.0


def test_pinaw_half_of_kmax_is_one():
    true = np.array([1.0, 2.0, 4.0])
    s = _series(true, half=np.full(3, 2.0))  # 2*half = k_max = 4
    assert abs(pinaw(s) - 1.0) < 1e-12


def test_pinaw_worked_example():
    # halves [0.1, 0.3], k_max = 1, N = 2 -> (0.2 + 0.6) / 2 = 0.4
    s = _series([1.0, 0.5], [1.0, 0.5], [0.1, 0.3])
    assert abs(pinaw(s) - 0.4) < 1e-12


def test_pinaw_undefined_for_zero_k_max():
    with pytest.raises(NumericalError, match="max true value"):
        pinaw(_series([0.0, -1.0]))


def test_interval_series_validation():
    with pytest.raises(NumericalError, match="equal-length 1-D"):
        IntervalSeries(np.ones(3), np.ones(2), np.ones(3))
    with pytest.raises(NumericalError, match="equal-length 1-D"):
        IntervalSeries(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(NumericalError, match="negative half-width"):
        IntervalSeries(np.ones(2), np.ones(2), np.array([0.1, -0.1]))


# ---------------------------------------------------------------------------
# cwc


def test_cwc_full_coverage_equals_pinaw():
    assert cwc(1.0, 0.37) == 0.37


def test_cwc_at_the_target_equals_pinaw():
    assert cwc(0.99, 0.37) == 0.37


def test_cwc_undercoverage_branch_value():
    # PICP = 0.9, alpha = 0.99, nu = 50: 0.2 * (1 + e^{4.5})
    expected = 0.2 * (1.0 + np.exp(4.5))
    assert abs(cwc(0.9, 0.2) - expected) < 1e-12
    assert abs(expected - 18.203426260104362) < 1e-10


def test_cwc_literal_flag_flips_the_penalty_cases():
    # the printed variant applies the exponential only at full coverage
    assert cwc(0.9, 0.2, literal=True) == 0.2
    assert cwc(1.0, 0.2, literal=True) > 0.2


def test_cwc_exceeds_pinaw_exactly_when_undercovering():
    for p in (0.0, 0.5, 0.9, 0.98):
        assert cwc(p, 0.2) > 0.2
    for p in (0.99, 0.995, 1.0):
        assert cwc(p, 0.2) == 0.2
    assert cwc(0.5, 0.0) == 0.0  # zero width stays zero either way


@given(
    scale=st.floats(min_value=1e-6, max_value=1e6),
    picp_value=st.floats(min_value=0.0, max_value=1.0),
    pinaw_value=st.floats(min_value=0.0, max_value=10.0),
)
@settings(max_examples=200, deadline=None)
def test_cwc_scales_linearly_in_pinaw(scale, picp_value, pinaw_value):
    a = cwc(picp_value, pinaw_value)
    b = cwc(picp_value, scale * pinaw_value)
    assert abs(b - scale * a) <= 1e-9 * max(1.0, abs(b), abs(scale * a))


@given(
    data=st.lists(st.tuples(st.floats(0.1, 10.0), st.floats(-1.0, 1.0),
                            st.floats(0.0, 5.0)), min_size=2, max_size=30),
    scale=st.floats(min_value=1e-3, max_value=1e3),
)
@settings(max_examples=150, deadline=None)
def test_interval_scores_invariant_to_positive_rescaling(data, scale):
    true = np.array([d[0] for d in data])
    est = true + np.array([d[1] for d in data])
    half = np.array([d[2] for d in data])
    # skip knife-edge cases where coverage sits exactly on the interval
    # boundary; an ulp of rescaling noise legitimately flips those
    assume(bool(np.all(np.abs(np.abs(true - est) - half) > 1e-9)))
    s1 = _series(true, est, half)
    s2 = _series(scale * true, scale * est, scale * half)
    assert abs(picp(s1) - picp(s2)) < 1e-12
    assert abs(pinaw(s1) - pinaw(s2)) < 1e-9 * max(1.0, pinaw(s1))
    assert abs(rmse(true, est) - rmse(scale * true, scale * est)) \
        < 1e-9 * max(1.0, rmse(true, est))


def test_interval_metrics_bundle():
    s = _series([1.0, 1.0], [1.0, 1.6], [0.2, 0.2])
    m = interval_metrics(s)
    assert set(m) == {"rmse", "picp", "pinaw", "cwc"}
    assert abs(m["picp"] - 0.5) < 1e-12
    assert abs(m["pinaw"] - 0.4) < 1e-12
    assert m["cwc"] > m["pinaw"]


# ---------------------------------------------------------------------------
# energy and the control report


def test_energy_integration():
    # 0.5 pu for 3600 s on a 400 kVA base = 200 kWh
    assert abs(energy_kwh(np.full(3600, 0.5), 1.0, 400e3) - 200.0) < 1e-9
    assert energy_kwh(np.zeros(10), 1.0, 400e3) == 0.0


def test_control_report_counts_and_energies():
    vm = np.array([
        [1.00, 1.02],
        [1.04, 1.03],
        [0.96, 1.00],
        [1.00, 1.05],
    ])
    p_applied = np.array([[0.1], [0.2], [0.2], [0.1]])
    p_mpp = np.array([[0.1], [0.3], [0.2], [0.3]])
    q_applied = np.array([[0.0], [-0.1], [0.1], [0.0]])
    rep = control_report(vm, [2, 3], 0.97, 1.03,
                         p_applied=p_applied, p_mpp=p_mpp,
                         q_applied=q_applied, plant_ids=[3],
                         dt_s=1.0, s_base_va=3.6e6)
    assert rep["v_max_bound"] == 1.03 and rep["v_min_bound"] == 0.97
    assert rep["nodes"]["2"]["max_v"] == 1.04
    assert rep["nodes"]["2"]["overvoltage_steps"] == 1
    assert rep["nodes"]["2"]["undervoltage_steps"] == 1
    assert rep["nodes"]["3"]["overvoltage_steps"] == 1
    assert rep["overvoltage_steps_total"] == 2
    assert rep["undervoltage_steps_total"] == 1
    assert rep["max_v_overall"] == 1.05 and rep["min_v_overall"] == 0.96
    # base chosen so 1 pu*s = 1 kWh
    assert abs(rep["curtailed_kwh"] - 0.3) < 1e-12
    assert abs(rep["produced_kwh"] - 0.6) < 1e-12
    assert abs(rep["available_kwh"] - 0.9) < 1e-12
    assert abs(rep["curtailed_kwh_per_plant"]["3"] - 0.3) < 1e-12
    assert abs(rep["reactive_kvarh"] - 0.2) < 1e-12


def test_control_report_boundary_is_not_a_violation():
    vm = np.array([[1.03], [0.97]])
    rep = control_report(vm, [1], 0.97, 1.03)
    assert rep["overvoltage_steps_total"] == 0
    assert rep["undervoltage_steps_total"] == 0


def test_control_report_validation():
    with pytest.raises(NumericalError, match="voltage trace"):
        control_report(np.ones(5), [1], 0.97, 1.03)
    with pytest.raises(NumericalError, match="node id count"):
        control_report(np.ones((3, 2)), [1], 0.97, 1.03)
    with pytest.raises(NumericalError, match="shapes differ"):
        control_report(np.ones((3, 1)), [1], 0.97, 1.03,
                       p_applied=np.ones((3, 1)), p_mpp=np.ones((2, 1)))
