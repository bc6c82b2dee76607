"""Sensitivity-coefficient estimation: batch LS plus four online RLS schemes.

Each monitored node i carries one EstimatorState whose coefficient
vector x stacks [KP_i | KQ_i] over all non-slack buses. Regressor rows
are first differences of the noisy nodal powers, the regressand is the
first difference of the node's noisy voltage magnitude.

Variants:
  rls-f   exponential forgetting (covariance inflated by 1/mu each step)
  rls-ct  constant trace (covariance rescaled to trace c1 + n*c2)
  rls-sf  selective forgetting (eigenvalue-wise clamp into [tau_min, tau_max])
  rls-df  directional forgetting (forgets only along the excited direction)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, EstimationError
from .noise import MeasurementSample

VARIANTS = ("ls", "rls-f", "rls-ct", "rls-sf", "rls-df")

# hR h^T below this is treated as an uninformative direction: the
# directional-forgetting step degenerates to a plain no-forgetting update.
DF_GUARD = 1e-12


@dataclass(frozen=True)
class EstimatorParams:
    """Variant selection and tuning knobs; defaults follow the scenario setup."""

    variant: str = "rls-df"
    mu: float = 0.85            # forgetting factor (rls-f, rls-df)
    lam: float | None = None    # ridge weight for the LS init; None = scale-aware
    c1: float = 100.0           # constant-trace numerator
    c2: float = 0.01            # constant-trace floor
    tau_min: float = 1e-2       # selective-forgetting eigenvalue floor
    tau_max: float = 1e4        # selective-forgetting eigenvalue cap
    sf_mu: float | tuple[float, ...] = 1.0  # per-eigendirection forgetting
    sigma_mu: float = 0.85      # residual-scale memory for ct/sf

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown estimator variant {self.variant!r}; "
                              f"expected one of {VARIANTS}")


@dataclass
class EstimatorState:
    """Recursive state for one monitored node.

    x stacks the active-power row first: x[:n_bus] is KP_i over non-slack
    buses (ascending id), x[n_bus:] is KQ_i. P is the covariance shape
    (sigma_r**2 * P approximates cov(x)), R the information matrix.
    """

    node: int
    x: np.ndarray
    P: np.ndarray
    R: np.ndarray
    sigma_r: float
    params: EstimatorParams = field(default_factory=EstimatorParams)
    steps: int = 0

    @property
    def n_bus(self) -> int:
        return len(self.x) // 2

    def copy(self) -> "EstimatorState":
        return EstimatorState(node=self.node, x=self.x.copy(), P=self.P.copy(),
                              R=self.R.copy(), sigma_r=self.sigma_r,
                              params=self.params, steps=self.steps)


@dataclass(frozen=True)
class CoefficientEstimate:
    """Point estimates and +-half-width intervals for one node's rows."""

    node: int
    kp: np.ndarray
    kq: np.ndarray
    dkp: np.ndarray
    dkq: np.ndarray


@dataclass(frozen=True)
class RegressorWindow:
    """First-difference regression data for one monitored node."""

    H: np.ndarray       # (N, 2*n_bus) rows [dP | dQ]
    gamma: np.ndarray   # (N,) matching dV at the node
    node: int

    @property
    def n_samples(self) -> int:
        return self.H.shape[0]


def difference_matrix(samples: Sequence[MeasurementSample]
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Stack consecutive first differences: H rows [dP | dQ], dVm columns."""
    if len(samples) < 2:
        raise EstimationError("need at least 2 samples to form differences")
    t = np.array([s.t_s for s in samples])
    if np.any(np.diff(t) <= 0):
        raise EstimationError("sample timestamps must be strictly increasing")
    p = np.stack([s.p for s in samples])
    q = np.stack([s.q for s in samples])
    vm = np.stack([s.vm for s in samples])
    h = np.hstack([np.diff(p, axis=0), np.diff(q, axis=0)])
    return h, np.diff(vm, axis=0)


def build_regressor_window(samples: Sequence[MeasurementSample],
                           node_index: int, *, node: int | None = None
                           ) -> RegressorWindow:
    """Regressor window for the node at position node_index in the vm vector."""
    h, dvm = difference_matrix(samples)
    return RegressorWindow(H=h, gamma=dvm[:, node_index],
                           node=node_index if node is None else node)


def default_ridge(h: np.ndarray) -> float:
    """Scale-aware default ridge: 1e-6 * trace(H^T H) / n_columns."""
    n = h.shape[1]
    return 1e-6 * float(np.einsum("ij,ij->", h, h)) / n


def ls_estimate(window: RegressorWindow, lam: float | None = None,
                params: EstimatorParams | None = None) -> EstimatorState:
    """Regularized batch least squares; the offline initializer.

    x = (H^T H + lam*I)^-1 H^T gamma. The residual scale sigma_r is the
    unbiased sample std of gamma - Hx (zero when fewer than 2 rows).
    """
    h, gamma = window.H, window.gamma
    if params is None:
        params = EstimatorParams()
    if lam is None:
        lam = params.lam if params.lam is not None else default_ridge(h)
    if lam < 0:
        raise ConfigError("ridge weight must be >= 0")
    n = h.shape[1]
    r = h.T @ h + lam * np.eye(n)
    try:
        p = np.linalg.inv(r)
    except np.linalg.LinAlgError:
        p = None
    if p is None or not np.all(np.isfinite(p)):
        raise EstimationError(
            "rank-deficient information matrix; increase the ridge weight "
            "(lam > 0) or widen the window")
    x = p @ (h.T @ gamma)
    res = gamma - h @ x
    sigma_r = float(np.std(res, ddof=1)) if len(res) >= 2 else 0.0
    p = 0.5 * (p + p.T)
    return EstimatorState(node=window.node, x=x, P=p, R=r, sigma_r=sigma_r,
                          params=params)


def blank_state(n_bus: int, lam: float, params: EstimatorParams,
                node: int = 0) -> EstimatorState:
    """Prior-only state (R0 = lam*I, x0 = 0); used by equivalence tests."""
    if lam <= 0:
        raise ConfigError("blank state needs lam > 0")
    n = 2 * n_bus
    return EstimatorState(node=node, x=np.zeros(n), P=np.eye(n) / lam,
                          R=lam * np.eye(n), sigma_r=0.0, params=params)


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _update_sigma(s: EstimatorState, e: float, weight: float) -> None:
    s.sigma_r = float(np.sqrt(weight * s.sigma_r ** 2 + (1.0 - weight) * e * e))


def rls_step_f(s: EstimatorState, h: np.ndarray, gamma: float,
               mu: float | None = None) -> EstimatorState:
    """Exponential-forgetting RLS step."""
    if mu is None:
        mu = s.params.mu
    if not 0.0 < mu <= 1.0:
        raise ConfigError(f"forgetting factor mu must be in (0, 1], got {mu}")
    h = np.asarray(h, dtype=float)
    e = float(gamma - h @ s.x)
    ph = s.P @ h
    gain = ph / (mu + h @ ph)
    s.x = s.x + gain * e
    s.P = _symmetrize((s.P - np.outer(gain, ph)) / mu)
    s.R = mu * s.R + np.outer(h, h)
    _update_sigma(s, e, mu)
    s.steps += 1
    return s


def rls_step_ct(s: EstimatorState, h: np.ndarray, gamma: float,
                c1: float | None = None, c2: float | None = None) -> EstimatorState:
    """Constant-trace RLS step: unit-gain update, then trace rescale."""
    if c1 is None:
        c1 = s.params.c1
    if c2 is None:
        c2 = s.params.c2
    if c1 <= 0 or c2 <= 0:
        raise ConfigError("constant-trace parameters c1, c2 must be > 0")
    h = np.asarray(h, dtype=float)
    e = float(gamma - h @ s.x)
    ph = s.P @ h
    gain = ph / (1.0 + h @ ph)
    s.x = s.x + gain * e
    p = _symmetrize(s.P - np.outer(gain, ph))
    tr = float(np.trace(p))
    if not np.isfinite(tr) or tr <= 0:
        raise EstimationError(f"covariance trace degenerated to {tr}")
    s.P = _symmetrize(c1 * p / tr + c2 * np.eye(len(p)))
    s.R = s.R + np.outer(h, h)
    _update_sigma(s, e, s.params.sigma_mu)
    s.steps += 1
    return s


def _sf_clamp(eig: np.ndarray, tau_min: float, tau_max: float) -> np.ndarray:
    """Piecewise eigenvalue map: cap at tau_max, floor small values near
    tau_min (tau_min + (1 - tau_min/tau_max)*x), pass the middle through."""
    lifted = tau_min + (1.0 - tau_min / tau_max) * eig
    return np.where(eig > tau_max, tau_max,
                    np.where(eig <= tau_min, lifted, eig))


def rls_step_sf(s: EstimatorState, h: np.ndarray, gamma: float,
                tau_min: float | None = None,
                tau_max: float | None = None) -> EstimatorState:
    """Selective-forgetting RLS step with eigenvalue-wise covariance control."""
    if tau_min is None:
        tau_min = s.params.tau_min
    if tau_max is None:
        tau_max = s.params.tau_max
    if not 0.0 < tau_min < tau_max:
        raise ConfigError("need 0 < tau_min < tau_max")
    h = np.asarray(h, dtype=float)
    e = float(gamma - h @ s.x)
    ph = s.P @ h
    gain = ph / (1.0 + h @ ph)
    s.x = s.x + gain * e
    p = _symmetrize(s.P - np.outer(gain, ph))
    try:
        eig, u = np.linalg.eigh(p)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("eigendecomposition of the covariance failed") from exc
    # inflate by the per-direction forgetting factors first, then clamp,
    # so the published spectrum honors [tau_min, tau_max] for any sf_mu
    eig = np.maximum(eig, 0.0) / np.asarray(s.params.sf_mu, dtype=float)
    eig = _sf_clamp(eig, tau_min, tau_max)
    s.P = _symmetrize((u * eig) @ u.T)
    s.R = s.R + np.outer(h, h)
    _update_sigma(s, e, s.params.sigma_mu)
    s.steps += 1
    return s


def rls_step_df(s: EstimatorState, h: np.ndarray, gamma: float,
                mu: float | None = None) -> EstimatorState:
    """Directional-forgetting RLS step.

    Discounts the information matrix only along the current regressor
    direction, so unexcited directions keep their information and the
    covariance cannot wind up. Maintains P = R^-1 exactly in real
    arithmetic; when hR h^T falls under DF_GUARD the step falls back to
    a plain no-forgetting update (h = 0 changes nothing).
    """
    if mu is None:
        mu = s.params.mu
    if not 0.0 < mu < 1.0:
        raise ConfigError(f"directional forgetting needs mu in (0, 1), got {mu}")
    h = np.asarray(h, dtype=float)
    e = float(gamma - h @ s.x)
    rh = s.R @ h
    hrh = float(h @ rh)
    if hrh < DF_GUARD:
        ph = s.P @ h
        gain = ph / (1.0 + h @ ph)
        s.x = s.x + gain * e
        s.P = _symmetrize(s.P - np.outer(gain, ph))
        s.R = s.R + np.outer(h, h)
    else:
        hh = np.outer(h, h)
        p_bar = s.P + ((1.0 - mu) / mu) * hh / hrh
        pbh = p_bar @ h
        p_new = p_bar - np.outer(pbh, pbh) / (1.0 + h @ pbh)
        m = (1.0 - mu) * np.outer(rh, h) / hrh
        s.R = _symmetrize(s.R - m @ s.R + hh)
        s.P = _symmetrize(p_new)
        s.x = s.x + (s.P @ h) * e
    _update_sigma(s, e, mu)
    s.steps += 1
    return s


_STEPPERS = {
    "rls-f": rls_step_f,
    "rls-ct": rls_step_ct,
    "rls-sf": rls_step_sf,
    "rls-df": rls_step_df,
}


def rls_step(s: EstimatorState, h: np.ndarray, gamma: float) -> EstimatorState:
    """Dispatch one recursive update according to the state's variant."""
    variant = s.params.variant
    if variant == "ls":
        raise ConfigError("variant 'ls' is batch-only; no recursive step")
    return _STEPPERS[variant](s, h, gamma)


def coefficient_intervals(s: EstimatorState) -> CoefficientEstimate:
    """Point estimate with +-3*sigma_x half-widths, sigma_x = sigma_r*sqrt(diag P)."""
    d = np.clip(np.diag(s.P), 0.0, None)
    half = 3.0 * s.sigma_r * np.sqrt(d)
    nb = s.n_bus
    return CoefficientEstimate(node=s.node, kp=s.x[:nb].copy(),
                               kq=s.x[nb:].copy(), dkp=half[:nb],
                               dkq=half[nb:])


def with_params(s: EstimatorState, params: EstimatorParams) -> EstimatorState:
    """Clone a state under a different variant/parameter set (shared init)."""
    c = s.copy()
    c.params = params
    return c
