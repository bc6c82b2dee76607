"""Admittance assembly, Newton load flow and analytic sensitivities."""

from __future__ import annotations

import csv

import numpy as np
import pytest

from voltgrid.errors import LoadFlowError, ModelError
from voltgrid.network import (Branch, build_admittance, build_network,
                              data_path, finite_difference_sensitivities,
                              load_builtin, load_network, solve_load_flow,
                              true_sensitivities)

from conftest import make_two_bus
from oracles import (fd_sensitivities, gauss_zbus_voltages, hand_admittance,
                     series_active_loss, total_active_injection, two_bus_vm)


# ---------------------------------------------------------------------------
# admittance assembly


def test_single_branch_admittance_pure_reactance():
    y = build_admittance([0, 1], [Branch(0, 1, 0.0, 0.1)])
    expected = np.array([[-10j, 10j], [10j, -10j]])
    assert np.allclose(y, expected, atol=1e-12)


def test_no_branches_leaves_buses_disconnected():
    with pytest.raises(ModelError, match="disconnected"):
        build_admittance([0, 1], [])


def test_partial_branch_set_reports_unreachable_buses():
    with pytest.raises(ModelError, match="disconnected"):
        build_admittance([0, 1, 2], [Branch(0, 1, 0.01, 0.01)])


def test_feeder4_admittance_matches_hand_assembly():
    rows = []
    with open(data_path("feeder4") / "branches.csv", newline="") as f:
        for rec in csv.DictReader(f):
            rows.append((int(rec["from"]), int(rec["to"]), float(rec["r_pu"]),
                         float(rec["x_pu"]), float(rec["b_pu"])))
    model = load_builtin("feeder4")
    assert np.allclose(model.Y, hand_admittance(4, rows), atol=1e-13)


def test_parallel_branches_sum_admittances():
    br = Branch(0, 1, 0.0, 0.1)
    y = build_admittance([0, 1], [br, br])
    assert np.allclose(y[0, 1], 20j, atol=1e-12)
    assert np.allclose(y[0, 0], -20j, atol=1e-12)


def test_invalid_branches_rejected():
    with pytest.raises(ModelError, match="zero-impedance"):
        build_admittance([0, 1], [Branch(0, 1, 0.0, 0.0)])
    with pytest.raises(ModelError, match="negative resistance"):
        build_admittance([0, 1], [Branch(0, 1, -0.01, 0.1)])
    with pytest.raises(ModelError, match="unknown bus"):
        build_admittance([0, 1], [Branch(0, 2, 0.01, 0.1)])
    with pytest.raises(ModelError, match="duplicate"):
        build_admittance([0, 0], [Branch(0, 0, 0.01, 0.1)])


def test_admittance_symmetry_and_row_sums(feeder4, feeder18):
    for model in (feeder4, feeder18):
        assert np.allclose(model.Y, model.Y.T, atol=1e-13)
        shunt = np.zeros(model.n_bus, dtype=complex)
        for br in model.branches:
            shunt[model.pos(br.from_bus)] += 0.5j * br.b_pu
            shunt[model.pos(br.to_bus)] += 0.5j * br.b_pu
        assert np.allclose(model.Y.sum(axis=1), shunt, atol=1e-12)


def test_build_network_requires_one_slack():
    with pytest.raises(ModelError, match="slack"):
        build_network([(0, False), (1, False)], [Branch(0, 1, 0.01, 0.1)])
    with pytest.raises(ModelError, match="slack"):
        build_network([(0, True), (1, True)], [Branch(0, 1, 0.01, 0.1)])


# ---------------------------------------------------------------------------
# load flow


def test_no_load_solution_is_flat(two_bus):
    state = solve_load_flow(two_bus, np.zeros(1), np.zeros(1))
    assert np.all(state.V == 1.0 + 0.0j)
    assert np.all(state.I == 0.0 + 0.0j)


def test_two_bus_voltage_matches_closed_form(two_bus):
    state = solve_load_flow(two_bus, np.array([-0.5]), np.array([0.0]))
    expected = two_bus_vm(0.01, 0.1, -0.5, 0.0)
    assert abs(state.vm_non_slack()[0] - expected) < 1e-9
    # the discriminant route: |V|^2 = (0.99 + sqrt(0.97)) / 2 for this case
    assert abs(expected ** 2 - 0.5 * (0.99 + np.sqrt(0.97))) < 1e-15


@pytest.mark.parametrize("q_load", [0.0, -0.2, 0.15])
def test_two_bus_closed_form_with_reactive(q_load):
    model = make_two_bus(r=0.03, x=0.08, slack_v=1.02)
    state = solve_load_flow(model, np.array([-0.4]), np.array([q_load]))
    assert abs(state.vm_non_slack()[0]
               - two_bus_vm(0.03, 0.08, -0.4, q_load, v_slack=1.02)) < 1e-9


def _feeder4_midday():
    """Loads at buses 1-2, PV injecting at bus 3."""
    return np.array([-0.08, -0.05, 0.35]), np.array([-0.03, -0.02, 0.05])


def test_converged_state_reproduces_injections(feeder4):
    p, q = _feeder4_midday()
    state = solve_load_flow(feeder4, p, q)
    s = state.V * np.conj(state.I)
    keep = np.arange(feeder4.n_bus) != feeder4.slack_pos
    assert np.allclose(s.real[keep], p, atol=1e-10)
    assert np.allclose(s.imag[keep], q, atol=1e-10)
    assert state.V[feeder4.slack_pos] == feeder4.slack_v_pu + 0.0j


def test_newton_agrees_with_fixed_point_iteration(feeder4, feeder18):
    p4, q4 = _feeder4_midday()
    cases = [(feeder4, p4, q4)]
    nb = feeder18.n_non_slack
    rng = np.random.default_rng(3)
    cases.append((feeder18, -0.03 + 0.01 * rng.standard_normal(nb),
                  -0.01 + 0.005 * rng.standard_normal(nb)))
    for model, p, q in cases:
        state = solve_load_flow(model, p, q)
        v_oracle = gauss_zbus_voltages(model, p, q)
        assert np.max(np.abs(state.V - v_oracle)) < 1e-9


def test_active_power_balances_series_losses(feeder4):
    p, q = _feeder4_midday()
    state = solve_load_flow(feeder4, p, q)
    injected = total_active_injection(feeder4, state.V)
    assert abs(injected - series_active_loss(feeder4, state.V)) < 1e-9


def test_load_flow_is_bit_deterministic(feeder4):
    p, q = _feeder4_midday()
    a = solve_load_flow(feeder4, p, q)
    b = solve_load_flow(feeder4, p, q)
    assert a.V.tobytes() == b.V.tobytes()
    assert a.I.tobytes() == b.I.tobytes()


def test_warm_start_converges_to_same_point(feeder4):
    p, q = _feeder4_midday()
    cold = solve_load_flow(feeder4, p, q)
    other = solve_load_flow(feeder4, 0.5 * p, 0.5 * q)
    warm = solve_load_flow(feeder4, p, q, v0=other.V)
    assert np.max(np.abs(cold.V - warm.V)) < 1e-9


def test_unsolvable_loading_raises_with_diagnostics(two_bus):
    with pytest.raises(LoadFlowError) as exc_info:
        solve_load_flow(two_bus, np.array([-50.0]), np.array([0.0]))
    assert exc_info.value.max_mismatch is not None


def test_injection_length_is_checked(feeder4):
    with pytest.raises(ModelError, match="length 3"):
        solve_load_flow(feeder4, np.zeros(2), np.zeros(2))


# ---------------------------------------------------------------------------
# sensitivities


def test_no_load_self_sensitivity_equals_r_and_x_over_v():
    model = make_two_bus(r=0.01, x=0.1)
    state = solve_load_flow(model, np.zeros(1), np.zeros(1))
    sens = true_sensitivities(model, state)
    assert abs(sens.KP[0, 0] - 0.01) < 1e-9
    assert abs(sens.KQ[0, 0] - 0.10) < 1e-9
    kp_fd, kq_fd = fd_sensitivities(model, np.zeros(1), np.zeros(1))
    assert abs(sens.KP[0, 0] - kp_fd[0, 0]) < 1e-4
    assert abs(sens.KQ[0, 0] - kq_fd[0, 0]) < 1e-4


@pytest.mark.parametrize("scale", [0.0, 1.0])
def test_analytic_sensitivities_match_finite_differences(feeder4, scale):
    p, q = _feeder4_midday()
    p, q = scale * p, scale * q
    state = solve_load_flow(feeder4, p, q)
    sens = true_sensitivities(feeder4, state)
    kp_fd, kq_fd = fd_sensitivities(feeder4, p, q)
    assert np.max(np.abs(sens.KP - kp_fd)) < 1e-4
    assert np.max(np.abs(sens.KQ - kq_fd)) < 1e-4


def test_bundled_fd_helper_agrees_with_oracle(feeder4):
    p, q = _feeder4_midday()
    state = solve_load_flow(feeder4, p, q)
    sens = finite_difference_sensitivities(feeder4, state)
    kp_fd, kq_fd = fd_sensitivities(feeder4, p, q)
    assert np.max(np.abs(sens.KP - kp_fd)) < 1e-9
    assert np.max(np.abs(sens.KQ - kq_fd)) < 1e-9


def test_self_sensitivities_positive_on_radial_feeder(feeder4):
    p, q = _feeder4_midday()
    sens = true_sensitivities(feeder4, solve_load_flow(feeder4, p, q))
    assert np.all(np.diag(sens.KP) > 0)
    assert np.all(np.diag(sens.KQ) > 0)
    assert np.all(np.isfinite(sens.KP)) and np.all(np.isfinite(sens.KQ))


def test_sensitivity_rows_address_by_bus_id(feeder4):
    p, q = _feeder4_midday()
    sens = true_sensitivities(feeder4, solve_load_flow(feeder4, p, q))
    kp_row, kq_row = sens.row(3)
    assert np.array_equal(kp_row, sens.KP[2])
    assert np.array_equal(kq_row, sens.KQ[2])


def test_linearized_prediction_error_is_second_order(feeder4):
    p, q = _feeder4_midday()
    base = solve_load_flow(feeder4, p, q)
    sens = true_sensitivities(feeder4, base)
    step = 1e-3
    dp = np.array([step, 0.0, step])
    dq = np.array([0.0, -step, 0.0])
    moved = solve_load_flow(feeder4, p + dp, q + dq)
    predicted = base.vm_non_slack() + sens.KP @ dp + sens.KQ @ dq
    assert np.max(np.abs(predicted - moved.vm_non_slack())) < 1e-5


# ---------------------------------------------------------------------------
# file loading


def test_csv_loader_requires_headers(tmp_path):
    buses = tmp_path / "buses.csv"
    branches = tmp_path / "branches.csv"
    buses.write_text("0,1\n1,0\n")
    branches.write_text("from,to,r_pu,x_pu,b_pu\n0,1,0.01,0.1,0\n")
    with pytest.raises(ModelError, match="header"):
        load_network(buses, branches)
    buses.write_text("id,is_slack\n0,1\n1,0\n")
    branches.write_text("0,1,0.01,0.1,0\n")
    with pytest.raises(ModelError, match="header"):
        load_network(buses, branches)


def test_empty_bus_file_rejected(tmp_path):
    buses = tmp_path / "buses.csv"
    branches = tmp_path / "branches.csv"
    buses.write_text("id,is_slack\n")
    branches.write_text("from,to,r_pu,x_pu,b_pu\n")
    with pytest.raises(ModelError, match="no buses"):
        load_network(buses, branches)


def test_unknown_bundled_data_name():
    with pytest.raises(ModelError, match="no bundled data"):
        load_builtin("feeder99")


def test_bundled_feeders_load_and_validate(feeder4, feeder18):
    assert feeder4.n_bus == 4 and feeder4.slack_id == 0
    assert feeder18.n_bus == 18 and feeder18.slack_id == 0
    assert feeder4.non_slack_ids == (1, 2, 3)
    assert feeder4.non_slack_index(3) == 2
    with pytest.raises(ModelError):
        feeder4.non_slack_index(0)
    with pytest.raises(ModelError):
        feeder4.pos(99)
