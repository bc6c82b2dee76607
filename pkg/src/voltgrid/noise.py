"""Instrument-transformer noise model and measurement stream synthesis.

Voltage and current phasors at non-slack buses are corrupted in polar
coordinates: magnitude gets a Gaussian error with standard deviation
sigma_m*|beta|/3, phase gets one with standard deviation sigma_p/3 (the
class limit is read as the 3-sigma point). Noisy nodal powers are then
recomputed from the corrupted phasors, so power noise is fully
determined by the phasor noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError
from .network import GridState, NetworkModel, solve_load_flow


@dataclass(frozen=True)
class ItClass:
    """Accuracy class of the voltage/current instrument transformers.

    Magnitude sigmas are fractions of the true magnitude, phase sigmas
    are absolute radians; all four are 3-sigma class limits.
    """

    name: str
    sigma_m_v: float  # voltage magnitude, fraction
    sigma_p_v: float  # voltage phase, rad
    sigma_m_i: float  # current magnitude, fraction
    sigma_p_i: float  # current phase, rad

    def __post_init__(self):
        for f in ("sigma_m_v", "sigma_p_v", "sigma_m_i", "sigma_p_i"):
            if getattr(self, f) < 0:
                raise ConfigError(f"ItClass {self.name}: {f} must be >= 0")


IT_CLASSES = {
    "0.2": ItClass("0.2", 0.002, 3e-3, 0.002, 3e-3),
    "0.5": ItClass("0.5", 0.005, 6e-3, 0.005, 9e-3),
    "1.0": ItClass("1.0", 0.010, 12e-3, 0.010, 18e-3),
}


def it_class(name_or_cls: str | float | ItClass) -> ItClass:
    """Resolve an IT class by name; accepts 1.0 / "1.0" / "1" spellings."""
    if isinstance(name_or_cls, ItClass):
        return name_or_cls
    key = str(name_or_cls)
    if key == "1":
        key = "1.0"
    try:
        return IT_CLASSES[key]
    except KeyError:
        raise ConfigError(
            f"unknown IT class {name_or_cls!r}; expected one of "
            f"{sorted(IT_CLASSES)}") from None


@dataclass(frozen=True)
class MeasurementSample:
    """One timestamped noisy record over non-slack buses."""

    t_s: int
    vm: np.ndarray  # noisy |V| per non-slack bus, pu
    p: np.ndarray   # noisy nodal P, pu
    q: np.ndarray   # noisy nodal Q, pu


def _corrupt_phasors(beta: np.ndarray, sigma_m: float, sigma_p: float,
                     rng: np.random.Generator,
                     literal_phase: bool) -> np.ndarray:
    mag = np.abs(beta)
    ang = np.angle(beta)
    dm = rng.standard_normal(beta.shape) * (sigma_m * mag / 3.0)
    dp = rng.standard_normal(beta.shape) * (sigma_p / 3.0)
    # literal_phase replays a transcription quirk of the generation
    # procedure where the magnitude deviate is re-added to the phase;
    # the default adds the phase deviate. Draw order is identical in
    # both modes so streams stay comparable.
    ang_noisy = ang + (dm if literal_phase else dp)
    return (mag + dm) * np.exp(1j * ang_noisy)


def corrupt_sample(state: GridState, it: ItClass, rng: np.random.Generator,
                   *, t_s: int = 0, literal_phase: bool = False) -> MeasurementSample:
    """Corrupt one converged grid state into a measurement record.

    Draw order is fixed and documented: voltage deviates for all
    non-slack buses (ascending id), then current deviates. Zero sigmas
    reproduce the true magnitudes and powers exactly.
    """
    keep = np.arange(len(state.V)) != state.slack_pos
    v = state.V[keep]
    i = state.I[keep]
    v_noisy = _corrupt_phasors(v, it.sigma_m_v, it.sigma_p_v, rng, literal_phase)
    i_noisy = _corrupt_phasors(i, it.sigma_m_i, it.sigma_p_i, rng, literal_phase)
    s_noisy = v_noisy * np.conj(i_noisy)
    return MeasurementSample(t_s=int(t_s), vm=np.abs(v_noisy),
                             p=s_noisy.real, q=s_noisy.imag)


def synthesize_dataset(model: NetworkModel,
                       p_series: np.ndarray,
                       q_series: np.ndarray,
                       it: ItClass,
                       seed: int,
                       *,
                       t_start: int = 0,
                       dt_s: int = 1,
                       literal_phase: bool = False,
                       ) -> Iterator[tuple[GridState, MeasurementSample]]:
    """Yield (true state, noisy sample) pairs for an injection time series.

    p_series/q_series have shape (T, N_b) over non-slack buses in
    ascending id order. One load flow and one corruption per row; the
    stream is fully determined by (model, series, it, seed).
    """
    p_series = np.asarray(p_series, dtype=float)
    q_series = np.asarray(q_series, dtype=float)
    if p_series.shape != q_series.shape or p_series.ndim != 2:
        raise ConfigError("p_series and q_series must both be (T, N_b)")
    rng = np.random.default_rng(seed)
    for k in range(p_series.shape[0]):
        state = solve_load_flow(model, p_series[k], q_series[k])
        sample = corrupt_sample(state, it, rng, t_s=t_start + k * dt_s,
                                literal_phase=literal_phase)
        yield state, sample


def stack_samples(samples: Sequence[MeasurementSample]
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Pack a sample list into (t, Vm, P, Q) arrays of shape (T,), (T, N_b)."""
    t = np.array([s.t_s for s in samples], dtype=int)
    vm = np.stack([s.vm for s in samples])
    p = np.stack([s.p for s in samples])
    q = np.stack([s.q for s in samples])
    return t, vm, p, q
