"""Injection profiles: synthesis and CSV round-tripping.

A ProfileSet is the open-loop injection plan: per-unit P and Q for every
non-slack bus at every sample instant. Load buses carry negative
(consumption) values with a daily shape plus AR(1) jitter; PV buses
carry the plant's available maximum power point, so the p column at a PV
bus doubles as the MPP forecast during control runs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError
from .network import NetworkModel


@dataclass(frozen=True)
class ProfileSet:
    """Time-indexed per-unit injections over non-slack buses (ascending id)."""

    t_s: np.ndarray
    bus_ids: tuple[int, ...]
    p: np.ndarray  # (T, N_b)
    q: np.ndarray  # (T, N_b)

    def __post_init__(self):
        if self.p.shape != self.q.shape or self.p.ndim != 2:
            raise ConfigError("profile P and Q must both be (T, N_b)")
        if self.p.shape != (len(self.t_s), len(self.bus_ids)):
            raise ConfigError("profile shapes inconsistent with t_s/bus_ids")

    @property
    def n_steps(self) -> int:
        return len(self.t_s)

    @property
    def dt_s(self) -> int:
        if len(self.t_s) < 2:
            return 1
        return int(self.t_s[1] - self.t_s[0])

    def column(self, bus_id: int) -> int:
        try:
            return self.bus_ids.index(bus_id)
        except ValueError:
            raise ConfigError(f"bus {bus_id} not in profile") from None

    def slice(self, start: int, stop: int) -> "ProfileSet":
        return ProfileSet(self.t_s[start:stop], self.bus_ids,
                          self.p[start:stop], self.q[start:stop])


def save_profiles(path: str | Path, profiles: ProfileSet) -> None:
    header = ["t_s"]
    for b in profiles.bus_ids:
        header += [f"p_{b}", f"q_{b}"]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for k in range(profiles.n_steps):
            row = [str(int(profiles.t_s[k]))]
            for j in range(len(profiles.bus_ids)):
                row += [f"{profiles.p[k, j]:.12g}", f"{profiles.q[k, j]:.12g}"]
            w.writerow(row)


def load_profiles(path: str | Path, model: NetworkModel) -> ProfileSet:
    """Read profiles.csv, requiring p_<bus>/q_<bus> for every non-slack bus."""
    bus_ids = model.non_slack_ids
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty profile file") from None
        required = ["t_s"] + [c for b in bus_ids for c in (f"p_{b}", f"q_{b}")]
        missing = [c for c in required if c not in header]
        if missing:
            raise ConfigError(f"{path}: missing profile columns {missing}")
        idx = {c: header.index(c) for c in required}
        t, rows_p, rows_q = [], [], []
        for row in reader:
            t.append(int(float(row[idx["t_s"]])))
            rows_p.append([float(row[idx[f"p_{b}"]]) for b in bus_ids])
            rows_q.append([float(row[idx[f"q_{b}"]]) for b in bus_ids])
    if not t:
        raise ConfigError(f"{path}: no profile rows")
    t_arr = np.array(t)
    if np.any(np.diff(t_arr) <= 0):
        raise ConfigError(f"{path}: t_s must be strictly increasing")
    return ProfileSet(t_arr, bus_ids, np.array(rows_p), np.array(rows_q))


def _ar1(rng: np.random.Generator, shape: tuple[int, ...], rho: float,
         sigma: float) -> np.ndarray:
    eps = rng.standard_normal(shape) * sigma
    return lfilter([1.0], [1.0, -rho], eps, axis=0)


def pv_bell(t_h: np.ndarray, sunrise_h: float, sunset_h: float) -> np.ndarray:
    """Smooth clear-sky availability in [0, 1], zero outside daylight."""
    daylight = (t_h % 24.0 >= sunrise_h) & (t_h % 24.0 <= sunset_h)
    phase = (t_h % 24.0 - sunrise_h) / (sunset_h - sunrise_h)
    return np.where(daylight, np.sin(np.pi * np.clip(phase, 0, 1)) ** 2, 0.0)


def synthesize_profiles(model: NetworkModel,
                        pv_ratings: Mapping[int, float],
                        *,
                        days: float = 2.0,
                        dt_s: int = 1,
                        seed: int = 0,
                        load_p: float | Mapping[int, float] = 0.03,
                        load_pf: float = 0.95,
                        jitter_frac: float = 0.05,
                        q_jitter_frac: float = 0.05,
                        rho: float = 0.9,
                        sunrise_h: float = 7.0,
                        sunset_h: float = 19.0,
                        pv_jitter_frac: float = 0.02,
                        pv_q_jitter_frac: float = 0.0,
                        pv_rho: float | None = None) -> ProfileSet:
    """Two-channel daily profiles: loads everywhere, PV bells at plant buses.

    pv_ratings maps bus id -> noon MPP in per-unit. Loads follow an
    evening-peaked cosine shape scaled by AR(1) jitter; Q jitter is drawn
    independently of P jitter so power differences excite both channels.
    pv_q_jitter_frac adds a zero-mean converter reactive dither (as a
    fraction of the rating): without any Q activity at a plant bus, the
    reactive sensitivity columns there are unidentifiable from data.
    pv_rho sets a separate AR(1) pole for the PV channels (cloud cover
    persists for minutes while load jitter decorrelates fast); it
    defaults to the load pole. All jitter fractions are the AR(1)
    innovation scale, so the stationary spread grows with the pole.
    Fully determined by (model, arguments, seed).
    """
    if dt_s <= 0:
        raise ConfigError("dt_s must be positive")
    if not 0 < load_pf <= 1:
        raise ConfigError("load_pf must be in (0, 1]")
    bus_ids = model.non_slack_ids
    n_steps = int(round(days * 86400 / dt_s))
    t_s = np.arange(n_steps, dtype=int) * dt_s
    t_h = t_s / 3600.0
    rng = np.random.default_rng(seed)

    if isinstance(load_p, Mapping):
        base = np.array([float(load_p.get(b, 0.0)) for b in bus_ids])
    else:
        base = np.full(len(bus_ids), float(load_p))
    for b in pv_ratings:
        if b not in bus_ids:
            raise ConfigError(f"PV bus {b} is not a non-slack bus")
    pv_cols = [k for k, b in enumerate(bus_ids) if b in pv_ratings]
    base[pv_cols] = 0.0  # plant buses host only the converter

    shape = 0.75 + 0.25 * np.cos(2 * np.pi * (t_h - 21.0) / 24.0)
    tan_phi = np.sqrt(1.0 / load_pf ** 2 - 1.0)
    jit_p = _ar1(rng, (n_steps, len(bus_ids)), rho, jitter_frac)
    jit_q = _ar1(rng, (n_steps, len(bus_ids)), rho, q_jitter_frac)
    p = -base[None, :] * shape[:, None] * (1.0 + jit_p)
    q = -base[None, :] * tan_phi * shape[:, None] * (1.0 + jit_q)

    bell = pv_bell(t_h, sunrise_h, sunset_h)
    rho_pv = rho if pv_rho is None else pv_rho
    for b in sorted(pv_ratings):
        k = bus_ids.index(b)
        jit = _ar1(rng, (n_steps,), rho_pv, pv_jitter_frac)
        p[:, k] = np.clip(pv_ratings[b] * bell * (1.0 + jit), 0.0, None)
        q[:, k] = pv_ratings[b] * _ar1(rng, (n_steps,), rho_pv, pv_q_jitter_frac)
    return ProfileSet(t_s, bus_ids, p, q)


def excitation_profiles(model: NetworkModel,
                        n_steps: int,
                        *,
                        dt_s: int = 1,
                        seed: int = 0,
                        base_p: Sequence[float] | None = None,
                        base_q: Sequence[float] | None = None,
                        level: float = 5e-3) -> ProfileSet:
    """Persistently exciting injections: i.i.d. Gaussian moves per channel.

    Small independent perturbations around a base operating point keep
    the first-difference regressor full rank while staying inside the
    linearization region; used for recovery and equivalence checks.
    """
    bus_ids = model.non_slack_ids
    nb = len(bus_ids)
    rng = np.random.default_rng(seed)
    bp = np.zeros(nb) if base_p is None else np.asarray(base_p, dtype=float)
    bq = np.zeros(nb) if base_q is None else np.asarray(base_q, dtype=float)
    p = bp[None, :] + rng.standard_normal((n_steps, nb)) * level
    q = bq[None, :] + rng.standard_normal((n_steps, nb)) * level
    t_s = np.arange(n_steps, dtype=int) * dt_s
    return ProfileSet(t_s, bus_ids, p, q)
