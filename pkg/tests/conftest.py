"""Shared fixtures: bundled feeders, a two-bus factory and a fast scenario."""

from __future__ import annotations

import copy

import numpy as np
import pytest

from voltgrid.config import ScenarioConfig, config_from_dict
from voltgrid.network import Branch, NetworkModel, build_network, load_builtin


def make_two_bus(r: float = 0.01, x: float = 0.1, b: float = 0.0,
                 slack_v: float = 1.0) -> NetworkModel:
    return build_network([(0, True), (1, False)], [Branch(0, 1, r, x, b)],
                         slack_v_pu=slack_v)


@pytest.fixture
def two_bus() -> NetworkModel:
    return make_two_bus()


@pytest.fixture(scope="session")
def feeder4() -> NetworkModel:
    return load_builtin("feeder4")


@pytest.fixture(scope="session")
def feeder18() -> NetworkModel:
    return load_builtin("feeder18")


# A 30-minute, 4-bus scenario that exercises the full pipeline (open-loop
# day, LS init, recursive tracking, periodic dispatch) in about a second.
# The compressed solar day puts the PV peak right at the end of the run.
TINY_SCENARIO = {
    "network": {"feeder": "feeder4"},
    "profiles": {"days": 1800 / 86400, "load_p": 0.05, "load_pf": 0.9,
                 "jitter_frac": 0.4, "q_jitter_frac": 0.5, "rho": 0.3,
                 "pv_jitter_frac": 0.1, "pv_q_jitter_frac": 0.05,
                 "sunrise_h": 0.0, "sunset_h": 1.0},
    "plants": [{"bus": 3, "s_max": 0.6}],
    "measurement": {"it_class": "0.5", "sample_period_s": 1, "window_s": 60},
    "estimator": {"variant": "rls-df", "mu": 0.999, "sigma_mu": 0.99},
    "control": {"mode": "robust", "v_max": 1.02, "period_s": 60},
    "metrics": {"window_start_h": 0.25, "window_end_h": 0.5},
    "run": {"seed": 7, "day_split_s": 900},
}


def tiny_config(**sections) -> ScenarioConfig:
    """TINY_SCENARIO with per-section overrides merged in."""
    data = copy.deepcopy(TINY_SCENARIO)
    for name, value in sections.items():
        if isinstance(value, dict):
            data.setdefault(name, {}).update(value)
        else:
            data[name] = value
    return config_from_dict(data)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)
