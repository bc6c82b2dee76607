"""Estimation- and control-quality metrics.

Interval metrics (PICP/PINAW/CWC) score a scalar coefficient series
against the oracle truth; control_report aggregates post-control voltage
traces and dispatch decisions into the numbers worth comparing across
modes (max voltage, violation counts, curtailed energy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError


@dataclass(frozen=True)
class IntervalSeries:
    """Aligned (true, estimate, half-width) series for one coefficient."""

    true: np.ndarray
    est: np.ndarray
    half: np.ndarray

    def __post_init__(self):
        t, e, h = map(np.asarray, (self.true, self.est, self.half))
        if not (t.shape == e.shape == h.shape) or t.ndim != 1 or len(t) < 1:
            raise NumericalError("interval series must be equal-length 1-D")
        if np.any(h < 0):
            raise NumericalError("negative half-width in interval series")

    @property
    def n(self) -> int:
        return len(self.true)

    @property
    def k_max(self) -> float:
        return float(np.max(self.true))


def rmse(true: np.ndarray, est: np.ndarray) -> float:
    """Normalized L2 error ||true - est|| / ||true||."""
    true = np.asarray(true, dtype=float)
    est = np.asarray(est, dtype=float)
    if true.shape != est.shape:
        raise NumericalError("rmse needs equal-shape inputs")
    denom = float(np.linalg.norm(true))
    if denom == 0.0:
        raise NumericalError("rmse undefined for a zero-norm reference")
    return float(np.linalg.norm(true - est)) / denom


def picp(s: IntervalSeries) -> float:
    """Fraction of steps whose true value falls inside [est-half, est+half]."""
    inside = np.abs(s.true - s.est) <= s.half
    return float(np.mean(inside))


def pinaw(s: IntervalSeries) -> float:
    """Mean interval width 2*half normalized by the series' max true value."""
    k_max = s.k_max
    if k_max == 0.0:
        raise NumericalError("pinaw undefined when max true value is zero")
    return float(np.sum(2.0 * s.half)) / (s.n * k_max)


def cwc(picp_value: float, pinaw_value: float, alpha: float = 0.99,
        nu: float = 50.0, *, literal: bool = False) -> float:
    """Coverage-width criterion: PINAW * (1 + eta * exp(-nu*(PICP - alpha))).

    eta = 1 when PICP < alpha (under-coverage is penalized). literal=True
    flips the eta cases to match a printed variant of the definition.
    """
    under = picp_value < alpha
    eta = (not under) if literal else under
    if not eta:
        return float(pinaw_value)
    return float(pinaw_value * (1.0 + np.exp(-nu * (picp_value - alpha))))


def interval_metrics(s: IntervalSeries, alpha: float = 0.99,
                     nu: float = 50.0) -> dict:
    """All four scores for one coefficient series."""
    p = picp(s)
    w = pinaw(s)
    return {
        "rmse": rmse(s.true, s.est),
        "picp": p,
        "pinaw": w,
        "cwc": cwc(p, w, alpha, nu),
    }


def energy_kwh(power_pu: np.ndarray, dt_s: float, s_base_va: float) -> float:
    """Integrate a per-unit power series into kWh on the given base."""
    return float(np.sum(power_pu) * dt_s * s_base_va / 3.6e6)


def control_report(vm: np.ndarray, node_ids, v_min: float, v_max: float,
                   *,
                   p_applied: np.ndarray | None = None,
                   p_mpp: np.ndarray | None = None,
                   q_applied: np.ndarray | None = None,
                   plant_ids=None,
                   dt_s: float = 1.0,
                   s_base_va: float = 400e3) -> dict:
    """Aggregate a post-control run: voltage extrema, violations, energies.

    vm is (T, n_nodes) load-flow voltage magnitudes; the optional series
    are (T, n_plants) applied active power, available MPP and applied
    reactive power on the same clock.
    """
    vm = np.asarray(vm, dtype=float)
    if vm.ndim != 2 or vm.shape[0] < 1:
        raise NumericalError("need a (T, n_nodes) voltage trace")
    node_ids = list(node_ids)
    if len(node_ids) != vm.shape[1]:
        raise NumericalError("node id count does not match the voltage trace")
    nodes = {}
    for k, node in enumerate(node_ids):
        col = vm[:, k]
        nodes[str(node)] = {
            "max_v": float(np.max(col)),
            "min_v": float(np.min(col)),
            "overvoltage_steps": int(np.sum(col > v_max)),
            "undervoltage_steps": int(np.sum(col < v_min)),
        }
    report = {
        "v_min_bound": v_min,
        "v_max_bound": v_max,
        "nodes": nodes,
        "max_v_overall": float(np.max(vm)),
        "min_v_overall": float(np.min(vm)),
        "overvoltage_steps_total": int(np.sum(vm > v_max)),
        "undervoltage_steps_total": int(np.sum(vm < v_min)),
    }
    if p_applied is not None and p_mpp is not None:
        p_applied = np.asarray(p_applied, dtype=float)
        p_mpp = np.asarray(p_mpp, dtype=float)
        if p_applied.shape != p_mpp.shape:
            raise NumericalError("applied/MPP series shapes differ")
        report["curtailed_kwh"] = energy_kwh(p_mpp - p_applied, dt_s, s_base_va)
        report["produced_kwh"] = energy_kwh(p_applied, dt_s, s_base_va)
        report["available_kwh"] = energy_kwh(p_mpp, dt_s, s_base_va)
        if plant_ids is not None:
            per = {}
            for k, pid in enumerate(plant_ids):
                per[str(pid)] = energy_kwh(p_mpp[:, k] - p_applied[:, k],
                                           dt_s, s_base_va)
            report["curtailed_kwh_per_plant"] = per
    if q_applied is not None:
        report["reactive_kvarh"] = energy_kwh(np.abs(q_applied), dt_s, s_base_va)
    return report
