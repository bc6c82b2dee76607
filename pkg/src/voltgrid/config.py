"""Scenario configuration: TOML parsing, strict validation, defaults.

A scenario file has sections [network], [profiles], [measurement],
[estimator], [control], [metrics], [run] and a [[plants]] array. Every
key is validated; unknown keys are rejected with their section path so
typos never silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError
from .estimators import VARIANTS, EstimatorParams

CONTROL_MODES = ("off", "nonrobust", "robust", "model-based")


@dataclass(frozen=True)
class NetworkCfg:
    feeder: str = "feeder18"      # bundled data set name
    buses: str | None = None      # or explicit CSV paths
    branches: str | None = None
    s_base_va: float = 400e3
    v_base_v: float = 400.0
    slack_v_pu: float = 1.0


@dataclass(frozen=True)
class ProfilesCfg:
    path: str | None = None       # load from CSV; otherwise synthesize:
    days: float = 2.0
    seed: int = 12345             # independent of the run seed on purpose
    load_p: float = 0.03
    load_pf: float = 0.95
    jitter_frac: float = 0.05
    q_jitter_frac: float = 0.05
    rho: float = 0.9
    sunrise_h: float = 7.0
    sunset_h: float = 19.0
    pv_jitter_frac: float = 0.02
    pv_q_jitter_frac: float = 0.0
    pv_rho: float | None = None   # None -> same pole as the loads


@dataclass(frozen=True)
class PlantCfg:
    bus: int
    s_max: float
    pf_min: float = 0.9
    mpp_frac: float = 0.95        # noon MPP as a fraction of s_max


@dataclass(frozen=True)
class MeasurementCfg:
    it_class: str = "1.0"
    sample_period_s: int = 1
    window_s: int = 300
    literal_phase: bool = False


@dataclass(frozen=True)
class EstimatorCfg:
    variant: str = "rls-df"
    mu: float = 0.85
    lam: float | None = None
    c1: float = 100.0
    c2: float = 0.01
    tau_min: float = 0.01
    tau_max: float = 1e4
    sf_mu: float = 1.0
    sigma_mu: float = 0.85
    step_every_sample: bool = True
    monitor: tuple[int, ...] = ()   # extra monitored buses besides plants
    refresh_s: int | None = None    # None -> control period

    def params(self) -> EstimatorParams:
        return EstimatorParams(variant=self.variant, mu=self.mu, lam=self.lam,
                               c1=self.c1, c2=self.c2, tau_min=self.tau_min,
                               tau_max=self.tau_max, sf_mu=self.sf_mu,
                               sigma_mu=self.sigma_mu)


@dataclass(frozen=True)
class ControlCfg:
    mode: str = "off"
    v_min: float = 0.97
    v_max: float = 1.03
    period_s: int = 300
    omega: float | None = None      # None -> full budget (= plant count)
    wp: float = 1.0
    wq: float = 1.0
    linking: str = "sum"
    v_prev: str = "window-mean"     # or "last"
    model_based_recompute: bool = True
    forecast_noise_frac: float = 0.0


@dataclass(frozen=True)
class MetricsCfg:
    alpha: float = 0.99
    nu: float = 50.0
    cwc_literal: bool = False
    window_start_h: float = 32.0
    window_end_h: float = 42.0


@dataclass(frozen=True)
class RunCfg:
    seed: int = 0
    out: str | None = None
    day_split_s: int = 86400
    duration_s: int = 0             # 0 -> full profile length


@dataclass(frozen=True)
class ScenarioConfig:
    network: NetworkCfg = field(default_factory=NetworkCfg)
    profiles: ProfilesCfg = field(default_factory=ProfilesCfg)
    plants: tuple[PlantCfg, ...] = ()
    measurement: MeasurementCfg = field(default_factory=MeasurementCfg)
    estimator: EstimatorCfg = field(default_factory=EstimatorCfg)
    control: ControlCfg = field(default_factory=ControlCfg)
    metrics: MetricsCfg = field(default_factory=MetricsCfg)
    run: RunCfg = field(default_factory=RunCfg)

    @property
    def refresh_s(self) -> int:
        r = self.estimator.refresh_s
        return self.control.period_s if r is None else r

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build_section(cls, data: Mapping[str, Any], path: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in [{path}]")
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"[{path}]: {exc}") from exc


def config_from_dict(data: Mapping[str, Any]) -> ScenarioConfig:
    """Build and validate a ScenarioConfig from nested plain dicts."""
    known = {"network", "profiles", "plants", "measurement", "estimator",
             "control", "metrics", "run"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown top-level section(s) {unknown}")
    plants_raw = data.get("plants", [])
    if not isinstance(plants_raw, (list, tuple)):
        raise ConfigError("plants must be an array of tables")
    plants = tuple(_build_section(PlantCfg, p, f"plants[{k}]")
                   for k, p in enumerate(plants_raw))
    cfg = ScenarioConfig(
        network=_build_section(NetworkCfg, data.get("network", {}), "network"),
        profiles=_build_section(ProfilesCfg, data.get("profiles", {}), "profiles"),
        plants=plants,
        measurement=_build_section(MeasurementCfg, data.get("measurement", {}),
                                   "measurement"),
        estimator=_build_section(EstimatorCfg, data.get("estimator", {}),
                                 "estimator"),
        control=_build_section(ControlCfg, data.get("control", {}), "control"),
        metrics=_build_section(MetricsCfg, data.get("metrics", {}), "metrics"),
        run=_build_section(RunCfg, data.get("run", {}), "run"),
    )
    validate_config(cfg)
    return cfg


def builtin_config_path(name: str) -> Path:
    """Path of a bundled scenario config, by stem or file name."""
    base = Path(__file__).parent / "data" / "configs"
    p = base / (name if name.endswith(".toml") else name + ".toml")
    if not p.exists():
        names = sorted(q.stem for q in base.glob("*.toml"))
        raise ConfigError(f"no bundled config named {name!r}; "
                          f"available: {names}")
    return p


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)


def validate_config(cfg: ScenarioConfig) -> None:
    m, c, e, r = cfg.measurement, cfg.control, cfg.estimator, cfg.run
    if m.sample_period_s <= 0:
        raise ConfigError("measurement.sample_period_s must be positive")
    if m.window_s < 2 * m.sample_period_s:
        raise ConfigError("measurement.window_s must cover at least 2 samples")
    if m.window_s % m.sample_period_s:
        raise ConfigError("measurement.window_s must be a multiple of "
                          "sample_period_s")
    if c.period_s <= 0:
        raise ConfigError("control.period_s must be positive")
    if c.period_s % m.sample_period_s:
        raise ConfigError("control.period_s must be a multiple of "
                          "measurement.sample_period_s")
    if c.period_s % m.window_s:
        raise ConfigError("control.period_s must be a whole number of "
                          "estimation windows (measurement.window_s)")
    if e.refresh_s is not None and e.refresh_s % m.sample_period_s:
        raise ConfigError("estimator.refresh_s must be a multiple of "
                          "measurement.sample_period_s")
    if e.variant not in VARIANTS:
        raise ConfigError(f"estimator.variant must be one of {VARIANTS}")
    if c.mode not in CONTROL_MODES:
        raise ConfigError(f"control.mode must be one of {CONTROL_MODES}")
    if c.v_min >= c.v_max:
        raise ConfigError("control.v_min must be below control.v_max")
    if c.linking not in ("sum", "max", "literal"):
        raise ConfigError("control.linking must be sum, max or literal")
    if c.v_prev not in ("window-mean", "last"):
        raise ConfigError("control.v_prev must be 'window-mean' or 'last'")
    if c.omega is not None and c.omega < 0:
        raise ConfigError("control.omega must be >= 0")
    if r.day_split_s <= 0 or r.day_split_s % m.sample_period_s:
        raise ConfigError("run.day_split_s must be a positive multiple of "
                          "measurement.sample_period_s")
    if r.duration_s < 0:
        raise ConfigError("run.duration_s must be >= 0 (0 = full profile)")
    if cfg.network.feeder is None and not (cfg.network.buses and
                                           cfg.network.branches):
        raise ConfigError("network needs a bundled feeder name or "
                          "buses+branches paths")
    seen = set()
    for p in cfg.plants:
        if p.bus in seen:
            raise ConfigError(f"duplicate plant bus {p.bus}")
        seen.add(p.bus)
        if p.s_max <= 0:
            raise ConfigError(f"plant {p.bus}: s_max must be > 0")
        if not 0 < p.pf_min <= 1:
            raise ConfigError(f"plant {p.bus}: pf_min must be in (0, 1]")
        if not 0 <= p.mpp_frac <= 1:
            raise ConfigError(f"plant {p.bus}: mpp_frac must be in [0, 1]")
    if c.mode != "off" and not cfg.plants:
        raise ConfigError(f"control mode {c.mode!r} needs at least one plant")
    for name, section in (("metrics.alpha", cfg.metrics.alpha),):
        if not 0 < section <= 1:
            raise ConfigError(f"{name} must be in (0, 1]")


def override(cfg: ScenarioConfig, **updates) -> ScenarioConfig:
    """Functional update helper: override(cfg, control=dict(mode='robust'))."""
    parts = {}
    for section, value in updates.items():
        current = getattr(cfg, section)
        if isinstance(value, Mapping):
            parts[section] = dataclasses.replace(current, **value)
        else:
            parts[section] = value
    out = dataclasses.replace(cfg, **parts)
    validate_config(out)
    return out


def apply_option_overrides(cfg: ScenarioConfig, *, seed: int | None = None,
                           it_class: str | None = None,
                           estimator: str | None = None,
                           mode: str | None = None,
                           omega: float | None = None,
                           out: str | None = None) -> ScenarioConfig:
    """Fold the common command-line switches into a loaded scenario.

    Each switch maps onto one config key; ``None`` leaves the file value
    untouched.  Shared by the CLI and the HTTP service so both accept the
    same knobs.
    """
    updates: dict[str, dict] = {}
    if seed is not None:
        updates.setdefault("run", {})["seed"] = int(seed)
    if out is not None:
        updates.setdefault("run", {})["out"] = str(out)
    if it_class is not None:
        updates.setdefault("measurement", {})["it_class"] = str(it_class)
    if estimator is not None:
        updates.setdefault("estimator", {})["variant"] = estimator
    if mode is not None:
        updates.setdefault("control", {})["mode"] = mode
    if omega is not None:
        updates.setdefault("control", {})["omega"] = float(omega)
    return override(cfg, **updates) if updates else cfg
