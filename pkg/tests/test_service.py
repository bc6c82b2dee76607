"""HTTP API tests run in-process against the ASGI app (no sockets)."""

from __future__ import annotations

import copy
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import TINY_SCENARIO
from voltgrid.config import config_from_dict
from voltgrid.network import solve_load_flow, true_sensitivities
from voltgrid.scenario import resolve_network
from voltgrid.service.app import create_app
from voltgrid.version import __version__


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app()) as c:
        yield c


def _scenario(**sections) -> dict:
    """TINY_SCENARIO as a JSON-ready dict with per-section overrides."""
    data = copy.deepcopy(TINY_SCENARIO)
    for name, value in sections.items():
        if isinstance(value, dict):
            data.setdefault(name, {}).update(value)
        else:
            data[name] = value
    return data


@pytest.fixture(scope="module")
def persisted_runs(client, tmp_path_factory):
    """Three runs written to disk: robust, off, and one with other profiles."""
    root = tmp_path_factory.mktemp("runs")
    dirs = {}
    for name, payload in (
        ("robust", {"config": _scenario()}),
        ("off", {"config": _scenario(), "mode": "off"}),
        ("other", {"config": _scenario(profiles={"seed": 99}), "mode": "off"}),
    ):
        out = root / name
        payload["out_dir"] = str(out)
        r = client.post("/scenario/run", json=payload)
        assert r.status_code == 200, r.text
        dirs[name] = out
    return dirs


# ---------------------------------------------------------------------------
# health and scenario runs


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok", "version": __version__}


def test_run_returns_report_and_manifest(client):
    r = client.post("/scenario/run", json={"config": _scenario()})
    assert r.status_code == 200
    body = r.json()
    assert body["out_dir"] is None
    assert body["manifest"]["files"] == {}  # nothing persisted
    assert body["manifest"]["seed"] == 7
    assert body["report"]["scenario"]["mode"] == "robust"
    assert body["report"]["scenario"]["n_steps"] == 1800


def test_run_persists_artifacts(client, persisted_runs):
    out = persisted_runs["robust"]
    for name in ("report.json", "manifest.json", "voltages.csv",
                 "decisions.csv", "estimates_3.csv"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["control"]["mode"] == "robust"


def test_run_applies_scalar_overrides(client):
    r = client.post("/scenario/run",
                    json={"config": _scenario(), "mode": "off", "seed": 11})
    assert r.status_code == 200
    body = r.json()
    assert body["manifest"]["seed"] == 11
    assert body["report"]["scenario"]["mode"] == "off"
    assert body["report"]["control"]["curtailed_kwh"] == 0.0


def test_require_control_rejects_off_mode(client):
    payload = {"config": _scenario(control={"mode": "off"}),
               "require_control": True}
    r = client.post("/scenario/run", json=payload)
    assert r.status_code == 400
    body = r.json()
    assert body["kind"] == "config"
    assert "control mode" in body["message"]
    # a mode override is applied first, so it satisfies the requirement
    payload["mode"] = "nonrobust"
    r = client.post("/scenario/run", json=payload)
    assert r.status_code == 200
    assert r.json()["report"]["scenario"]["mode"] == "nonrobust"


def test_config_and_config_path_are_exclusive(client, tmp_path):
    path = tmp_path / "s.toml"
    path.write_text('[network]\nfeeder = "feeder4"\n')
    r = client.post("/scenario/run",
                    json={"config": _scenario(), "config_path": str(path)})
    assert r.status_code == 400
    assert "not both" in r.json()["message"]


def test_config_path_loads_toml_file(client, tmp_path):
    path = tmp_path / "scenario.toml"
    path.write_text("\n".join([
        '[network]',
        'feeder = "feeder4"',
        '[profiles]',
        'days = 0.020833333333333332',
        'sunrise_h = 0.0',
        'sunset_h = 1.0',
        '[measurement]',
        'sample_period_s = 1',
        'window_s = 60',
        '[control]',
        'mode = "off"',
        'period_s = 60',
        '[metrics]',
        'window_start_h = 0.25',
        'window_end_h = 0.5',
        '[run]',
        'seed = 3',
        'day_split_s = 900',
        '[[plants]]',
        'bus = 3',
        's_max = 0.6',
    ]) + "\n")
    r = client.post("/scenario/run", json={"config_path": str(path)})
    assert r.status_code == 200
    rep = r.json()["report"]
    assert rep["scenario"]["mode"] == "off"
    assert rep["scenario"]["n_steps"] == 1800


def test_unknown_config_section_is_a_config_error(client):
    r = client.post("/scenario/run", json={"config": _scenario(bogus={"a": 1})})
    assert r.status_code == 400
    assert r.json()["kind"] == "config"


def test_diverging_load_flow_maps_to_422(client):
    r = client.post("/scenario/run",
                    json={"config": _scenario(profiles={"load_p": 50.0})})
    assert r.status_code == 422
    body = r.json()
    assert body["kind"] == "numerical"
    assert "[stage day1]" in body["message"]


def test_infeasible_scenario_maps_to_409(client):
    cfg = _scenario(control={"mode": "nonrobust", "v_max": 0.9, "v_min": 0.5})
    r = client.post("/scenario/run", json={"config": cfg})
    assert r.status_code == 409
    body = r.json()
    assert body["kind"] == "infeasible"
    assert body["worst_row"] is not None and body["violation"] > 0


# ---------------------------------------------------------------------------
# dataset and estimation endpoints


def test_dataset_requires_an_output_directory(client):
    r = client.post("/scenario/dataset", json={"config": _scenario()})
    assert r.status_code == 400
    assert "output directory" in r.json()["message"]


def test_dataset_writes_files(client, tmp_path):
    out = tmp_path / "ds"
    r = client.post("/scenario/dataset",
                    json={"config": _scenario(), "out_dir": str(out)})
    assert r.status_code == 200
    body = r.json()
    assert body["out_dir"] == str(out)
    assert body["files"] == ["dataset.csv", "dataset_seed.json", "profiles.csv"]
    assert (out / "dataset.csv").exists() and (out / "manifest.json").exists()


def test_estimate_endpoint_runs_selected_variants(client, tmp_path):
    out = tmp_path / "bench"
    r = client.post("/scenario/estimate",
                    json={"config": _scenario(), "variants": ["ls", "rls-df"],
                          "out_dir": str(out)})
    assert r.status_code == 200
    body = r.json()
    bench = body["benchmark"]
    assert set(bench["variants"]) == {"ls", "rls-df"}
    node = bench["variants"]["rls-df"]["nodes"]["3"]
    assert node["n_refresh"] == 15
    assert 0.0 <= node["kp_self"]["picp"] <= 1.0
    assert body["out_dir"] == str(out)
    assert (out / "benchmark.json").exists()
    assert (out / "benchmark.csv").exists()


def test_estimate_rejects_unknown_variant(client):
    r = client.post("/scenario/estimate",
                    json={"config": _scenario(), "variants": ["lms"]})
    assert r.status_code == 400
    assert "unknown variant" in r.json()["message"]


# ---------------------------------------------------------------------------
# one-shot dispatch solves


def _solve_payload(**over) -> dict:
    payload = {
        "plants": [{"bus": 3, "s_max": 1.0, "pf_min": 0.9}],
        "mpp": [0.6],
        "prev_p": [0.3],
        "prev_q": [0.0],
        "voltage": {
            "v_min": 0.97, "v_max": 1.03,
            "node_ids": [3], "v_prev": [1.035],
            "kp": [[0.05]], "kq": [[0.02]],
        },
    }
    payload.update(over)
    return payload


def test_solve_without_voltage_rows_tracks_mpp(client):
    payload = {"plants": [{"bus": 3, "s_max": 1.0}],
               "mpp": [0.6], "prev_p": [0.0], "prev_q": [0.0]}
    r = client.post("/control/solve", json=payload)
    assert r.status_code == 200
    body = r.json()
    assert body["plant_buses"] == [3]
    assert body["p_set"][0] == pytest.approx(0.6, abs=1e-7)
    assert body["q_set"][0] == pytest.approx(0.0, abs=1e-7)
    assert body["status"] in ("optimal", "polished")


def test_solve_with_binding_voltage_row_curtails(client):
    r = client.post("/control/solve", json=_solve_payload())
    assert r.status_code == 200
    body = r.json()
    assert body["p_set"][0] < 0.6 - 1e-4
    assert any(a.startswith("vmax[") for a in body["active"])
    # the setpoint puts the predicted voltage on the upper bound
    dv = (0.05 * (body["p_set"][0] - 0.3) + 0.02 * (body["q_set"][0] - 0.0))
    assert 1.035 + dv == pytest.approx(1.03, abs=1e-6)


def test_robust_with_zero_halfwidths_matches_nonrobust(client):
    voltage = _solve_payload()["voltage"]
    voltage["dkp"] = [[0.0]]
    voltage["dkq"] = [[0.0]]
    plain = client.post("/control/solve", json=_solve_payload()).json()
    robust = client.post("/control/solve",
                         json=_solve_payload(voltage=voltage, robust=True))
    assert robust.status_code == 200
    body = robust.json()
    assert body["p_set"][0] == pytest.approx(plain["p_set"][0], abs=1e-7)
    assert body["q_set"][0] == pytest.approx(plain["q_set"][0], abs=1e-7)


def test_robust_halfwidths_curtail_more(client):
    voltage = _solve_payload()["voltage"]
    voltage["dkp"] = [[0.02]]
    voltage["dkq"] = [[0.01]]
    voltage["omega"] = [1.0]
    plain = client.post("/control/solve", json=_solve_payload()).json()
    robust = client.post(
        "/control/solve",
        json=_solve_payload(voltage=voltage, robust=True)).json()
    assert robust["p_set"][0] < plain["p_set"][0] - 1e-4


def test_solve_infeasible_returns_409_with_diagnosis(client):
    voltage = {"v_min": 0.97, "v_max": 1.03, "node_ids": [7],
               "v_prev": [1.2], "kp": [[0.0]], "kq": [[0.0]]}
    r = client.post("/control/solve", json=_solve_payload(voltage=voltage))
    assert r.status_code == 409
    body = r.json()
    assert body["kind"] == "infeasible"
    assert body["worst_row"] == "vmax[7]"
    assert body["violation"] == pytest.approx(0.17, abs=1e-6)


def test_solve_validates_weights(client):
    r = client.post("/control/solve",
                    json=_solve_payload(weights=[1.0, 2.0, 3.0]))
    assert r.status_code == 400
    assert "wp, wq" in r.json()["message"]


def test_solve_rejects_malformed_body(client):
    # pydantic-level validation, not the toolkit's ConfigError path
    r = client.post("/control/solve", json={"plants": "nope"})
    assert r.status_code == 422
    assert "detail" in r.json()


# ---------------------------------------------------------------------------
# sensitivities and run comparison


def test_sensitivities_match_in_process_model(client):
    req = {"network": {"feeder": "feeder4"},
           "p": {"3": -0.3, "2": 0.05}, "q": {"1": 0.1}}
    r = client.post("/network/sensitivities", json=req)
    assert r.status_code == 200
    body = r.json()

    cfg = config_from_dict({"network": {"feeder": "feeder4"}})
    model = resolve_network(cfg)
    p = np.zeros(model.n_non_slack)
    q = np.zeros(model.n_non_slack)
    p[model.non_slack_index(3)] = -0.3
    p[model.non_slack_index(2)] = 0.05
    q[model.non_slack_index(1)] = 0.1
    state = solve_load_flow(model, p, q)
    sens = true_sensitivities(model, state)

    assert body["bus_ids"] == list(sens.bus_ids)
    assert np.allclose(body["vm"], state.vm_non_slack(), rtol=0, atol=1e-12)
    assert np.allclose(body["kp"], sens.KP, rtol=0, atol=1e-12)
    assert np.allclose(body["kq"], sens.KQ, rtol=0, atol=1e-12)


def test_sensitivities_reject_unknown_bus(client):
    r = client.post("/network/sensitivities",
                    json={"network": {"feeder": "feeder4"}, "p": {"99": 0.1}})
    assert r.status_code == 400
    assert "not a non-slack bus" in r.json()["message"]


def test_compare_endpoint(client, persisted_runs, tmp_path):
    out = tmp_path / "cmp"
    r = client.post("/report/compare",
                    json={"run_dirs": [str(persisted_runs["off"]),
                                       str(persisted_runs["robust"])],
                          "out_dir": str(out)})
    assert r.status_code == 200
    body = r.json()
    cmp = body["comparison"]
    assert [row["mode"] for row in cmp["runs"]] == ["off", "robust"]
    assert cmp["deltas_vs_first"][0]["max_v_delta"] < 0.0
    assert body["out_dir"] == str(out)
    assert (out / "comparison.json").exists()
    assert (out / "comparison.csv").exists()


def test_compare_refuses_different_inputs(client, persisted_runs, tmp_path):
    r = client.post("/report/compare",
                    json={"run_dirs": [str(persisted_runs["robust"]),
                                       str(persisted_runs["other"])]})
    assert r.status_code == 400
    assert "not comparable" in r.json()["message"]
    r = client.post("/report/compare",
                    json={"run_dirs": [str(tmp_path / "nope")]})
    assert r.status_code == 400
    assert "missing manifest.json" in r.json()["message"]
