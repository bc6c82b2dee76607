"""Scenario orchestration: measurement -> estimation -> control -> metrics.

A run covers two phases on one clock. The first day is open loop: load
flows follow the injection profiles, the noisy stream accumulates, and a
batch LS fit at the day boundary initializes one estimator state per
monitored node. From the boundary on, the loop optionally closes:
recursive updates track the coefficients sample by sample and a dispatch
QP retunes the PV setpoints every control period using the freshest
estimates (or the oracle, in model-based mode).

Everything a run emits is a pure function of (config, seed); wall-clock
timings live in a dedicated manifest block that the byte-comparison
helper ignores.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import ScenarioConfig, override
from .dispatch import (ControlDecision, PvPlant, VoltageConstraintSet,
                       build_nonrobust, build_robust, solve_qp)
from .errors import ConfigError, VoltgridError
from .estimators import (CoefficientEstimate, EstimatorState, VARIANTS,
                         coefficient_intervals, ls_estimate, rls_step,
                         with_params, RegressorWindow)
from .metrics import IntervalSeries, control_report, cwc, picp, pinaw, rmse
from .network import (GridState, NetworkModel, load_builtin, load_network,
                      solve_load_flow, true_sensitivities)
from .noise import MeasurementSample, corrupt_sample, it_class
from .profiles import ProfileSet, load_profiles, save_profiles, synthesize_profiles
from .version import __version__

_FLOAT_FMT = "%.12g"


@dataclass
class RunManifest:
    """Reproducibility record written next to the run artifacts."""

    version: str
    seed: int
    config: dict
    inputs: dict
    timing: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunResult:
    manifest: RunManifest
    report: dict
    out_dir: Path | None


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _sha256_file(path: Path) -> str:
    return _sha256_bytes(path.read_bytes())


def _json_dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _fmt(x: float) -> str:
    return _FLOAT_FMT % x


def resolve_network(cfg: ScenarioConfig) -> NetworkModel:
    net = cfg.network
    kwargs = dict(s_base_va=net.s_base_va, v_base_v=net.v_base_v,
                  slack_v_pu=net.slack_v_pu)
    if net.buses and net.branches:
        return load_network(net.buses, net.branches, **kwargs)
    return load_builtin(net.feeder, **kwargs)


def resolve_profiles(cfg: ScenarioConfig, model: NetworkModel
                     ) -> tuple[ProfileSet, dict]:
    """Profiles plus a provenance record for the manifest."""
    pc = cfg.profiles
    dt = cfg.measurement.sample_period_s
    if pc.path:
        profiles = load_profiles(pc.path, model)
        steps = np.diff(profiles.t_s)
        if len(steps) and not np.all(steps == dt):
            raise ConfigError(
                f"profile time step must equal sample_period_s ({dt} s)")
        prov = {"source": str(pc.path), "sha256": _sha256_file(Path(pc.path))}
    else:
        ratings = {p.bus: p.s_max * p.mpp_frac for p in cfg.plants}
        profiles = synthesize_profiles(
            model, ratings, days=pc.days, dt_s=dt, seed=pc.seed,
            load_p=pc.load_p, load_pf=pc.load_pf, jitter_frac=pc.jitter_frac,
            q_jitter_frac=pc.q_jitter_frac, rho=pc.rho,
            sunrise_h=pc.sunrise_h, sunset_h=pc.sunset_h,
            pv_jitter_frac=pc.pv_jitter_frac,
            pv_q_jitter_frac=pc.pv_q_jitter_frac, pv_rho=pc.pv_rho)
        prov = {
            "source": "synthesized",
            "params": dataclasses.asdict(pc),
            "sha256": _sha256_bytes(profiles.p.tobytes() + profiles.q.tobytes()),
        }
    return profiles, prov


def _network_sha(model: NetworkModel) -> str:
    parts = [repr(model.bus_ids), repr(model.slack_id)]
    for b in model.branches:
        parts.append(f"{b.from_bus},{b.to_bus},{b.r_pu!r},{b.x_pu!r},{b.b_pu!r}")
    return _sha256_bytes("|".join(parts).encode())


def _monitored_buses(cfg: ScenarioConfig, model: NetworkModel) -> list[int]:
    buses = {p.bus for p in cfg.plants} | set(cfg.estimator.monitor)
    for b in buses:
        model.non_slack_index(b)  # raises on unknown/slack
    if not buses:
        raise ConfigError("nothing to monitor: configure plants or "
                          "estimator.monitor buses")
    return sorted(buses)


@dataclass
class _Series:
    """Per-node metric accumulators at refresh instants."""

    t_s: list[int] = field(default_factory=list)
    x_true: list[np.ndarray] = field(default_factory=list)
    x_est: list[np.ndarray] = field(default_factory=list)
    half: list[np.ndarray] = field(default_factory=list)

    def add(self, t_s: int, x_true: np.ndarray, est: CoefficientEstimate):
        self.t_s.append(int(t_s))
        self.x_true.append(x_true)
        self.x_est.append(np.concatenate([est.kp, est.kq]))
        self.half.append(np.concatenate([est.dkp, est.dkq]))

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (np.array(self.t_s), np.stack(self.x_true),
                np.stack(self.x_est), np.stack(self.half))


def _node_metrics(series: _Series, self_idx: int, nb: int,
                  window_s: tuple[float, float], alpha: float, nu: float,
                  literal_cwc: bool) -> dict:
    """Score one node's estimate track; restricted to the metrics window
    when it contains refresh points, otherwise over all of them."""
    t, xt, xe, xh = series.stacked()
    mask = (t >= window_s[0]) & (t <= window_s[1])
    if not np.any(mask):
        mask = np.ones(len(t), dtype=bool)
    t, xt, xe, xh = t[mask], xt[mask], xe[mask], xh[mask]
    out = {
        "n_refresh": int(len(t)),
        "rmse_vector": rmse(xt.ravel(), xe.ravel()),
    }
    for label, col in (("kp_self", self_idx), ("kq_self", nb + self_idx)):
        s = IntervalSeries(xt[:, col], xe[:, col], xh[:, col])
        p = picp(s)
        w = pinaw(s)
        out[label] = {
            "rmse": rmse(s.true, s.est),
            "picp": p,
            "pinaw": w,
            "cwc": cwc(p, w, alpha, nu, literal=literal_cwc),
            "median_half": float(np.median(s.half)),
        }
    return out


class _Run:
    """One scenario execution; split into phases for timing and reuse."""

    def __init__(self, cfg: ScenarioConfig, out_dir: str | Path | None = None):
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir else (
            Path(cfg.run.out) if cfg.run.out else None)
        self.model = resolve_network(cfg)
        self.profiles, self.profile_prov = resolve_profiles(cfg, self.model)
        self.it = it_class(cfg.measurement.it_class)
        self.dt = cfg.measurement.sample_period_s
        self.nb = self.model.n_non_slack

        total = cfg.run.duration_s or int(self.profiles.t_s[-1]) + self.dt
        self.n_steps = total // self.dt
        if self.n_steps > self.profiles.n_steps:
            raise ConfigError(
                f"duration {total} s exceeds the profile span "
                f"({self.profiles.n_steps * self.dt} s)")
        self.k_split = min(cfg.run.day_split_s // self.dt, self.n_steps)
        if self.k_split < 2:
            raise ConfigError("day-1 phase needs at least 2 samples "
                              "(run.day_split_s too small)")

        self.plants = [PvPlant(p.bus, p.s_max, p.pf_min) for p in cfg.plants]
        self.plant_cols = [self.model.non_slack_index(p.bus) for p in self.plants]
        self.monitored = _monitored_buses(cfg, self.model)
        self.monitored_idx = [self.model.non_slack_index(b) for b in self.monitored]
        self.window_n = cfg.measurement.window_s // self.dt

        self.rng = np.random.default_rng(cfg.run.seed)
        t = self.n_steps
        self.t_s = self.profiles.t_s[:t].copy()
        self.v_true = np.zeros((t, self.model.n_bus), dtype=complex)
        self.vm_noisy = np.zeros((t, self.nb))
        self.p_noisy = np.zeros((t, self.nb))
        self.q_noisy = np.zeros((t, self.nb))
        self.p_inj = np.zeros((t, self.nb))
        self.q_inj = np.zeros((t, self.nb))

        self.states: dict[int, EstimatorState] = {}
        self.series: dict[int, _Series] = {b: _Series() for b in self.monitored}
        self.estimate_rows: dict[int, list[list[str]]] = {b: [] for b in self.monitored}
        self.decision_rows: list[list[str]] = []
        self.solver_stats: list[dict] = []
        self.decision: ControlDecision | None = None
        self.true_k_cache = None          # model-based, recompute disabled
        self.timing: dict[str, float] = {}
        self._v_warm: np.ndarray | None = None

    # ---- phases ----------------------------------------------------

    def _load_flow(self, k: int) -> GridState:
        state = solve_load_flow(self.model, self.p_inj[k], self.q_inj[k],
                                v0=self._v_warm)
        self._v_warm = state.V
        self.v_true[k] = state.V
        return state

    def _measure(self, k: int, state: GridState) -> MeasurementSample:
        sample = corrupt_sample(state, self.it, self.rng, t_s=int(self.t_s[k]),
                                literal_phase=self.cfg.measurement.literal_phase)
        self.vm_noisy[k] = sample.vm
        self.p_noisy[k] = sample.p
        self.q_noisy[k] = sample.q
        return sample

    def day1(self) -> None:
        for k in range(self.k_split):
            self.p_inj[k] = self.profiles.p[k]
            self.q_inj[k] = self.profiles.q[k]
            self._measure(k, self._load_flow(k))

    def init_estimators(self) -> None:
        h = np.hstack([np.diff(self.p_noisy[:self.k_split], axis=0),
                       np.diff(self.q_noisy[:self.k_split], axis=0)])
        dvm = np.diff(self.vm_noisy[:self.k_split], axis=0)
        params = self.cfg.estimator.params()
        for bus, idx in zip(self.monitored, self.monitored_idx):
            window = RegressorWindow(H=h, gamma=dvm[:, idx], node=bus)
            self.states[bus] = ls_estimate(window, params=params)

    def _regressor_at(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        h = np.concatenate([self.p_noisy[k] - self.p_noisy[k - 1],
                            self.q_noisy[k] - self.q_noisy[k - 1]])
        dvm = self.vm_noisy[k] - self.vm_noisy[k - 1]
        return h, dvm

    def _step_estimators(self, k: int) -> None:
        if self.cfg.estimator.variant == "ls":
            return
        h, dvm = self._regressor_at(k)
        for bus, idx in zip(self.monitored, self.monitored_idx):
            rls_step(self.states[bus], h, float(dvm[idx]))

    def _ls_window(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Trailing-window first-difference regressors ending at sample k."""
        lo = max(1, k - self.window_n + 1)
        h = np.hstack([self.p_noisy[lo:k + 1] - self.p_noisy[lo - 1:k],
                       self.q_noisy[lo:k + 1] - self.q_noisy[lo - 1:k]])
        dvm = self.vm_noisy[lo:k + 1] - self.vm_noisy[lo - 1:k]
        return h, dvm

    def _ls_refit(self, k: int) -> None:
        """Batch LS over the trailing window (the non-recursive baseline)."""
        h, dvm = self._ls_window(k)
        params = self.cfg.estimator.params()
        for bus, idx in zip(self.monitored, self.monitored_idx):
            window = RegressorWindow(H=h, gamma=dvm[:, idx], node=bus)
            self.states[bus] = ls_estimate(window, params=params)

    def _baseline(self, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Linearization point for the dispatch rows.

        Voltages and plant injections must come from the same averaging
        window: the predicted voltage is v_prev + K (x - x_prev), so a
        mismatched pair would leak intra-window PV fluctuations into the
        prediction.
        """
        idx = self.monitored_idx
        cols = self.plant_cols
        if self.cfg.control.v_prev == "last":
            return (self.vm_noisy[k, idx],
                    self.p_inj[k, cols].copy(), self.q_inj[k, cols].copy())
        lo = max(0, k + 1 - self.window_n)
        return (self.vm_noisy[lo:k + 1, idx].mean(axis=0),
                self.p_inj[lo:k + 1, cols].mean(axis=0),
                self.q_inj[lo:k + 1, cols].mean(axis=0))

    def _publish(self, k: int) -> dict[int, CoefficientEstimate]:
        return {b: coefficient_intervals(self.states[b]) for b in self.monitored}

    def _truth(self, k: int):
        state = GridState(V=self.v_true[k], I=self.model.Y @ self.v_true[k],
                          p=self.p_inj[k], q=self.q_inj[k],
                          slack_pos=self.model.slack_pos)
        return true_sensitivities(self.model, state)

    def _log_refresh(self, k: int, est: dict[int, CoefficientEstimate]) -> None:
        truth = self._truth(k)
        for bus, idx in zip(self.monitored, self.monitored_idx):
            row_true = np.concatenate([truth.KP[idx], truth.KQ[idx]])
            e = est[bus]
            self.series[bus].add(int(self.t_s[k]), row_true, e)
            row = [str(int(self.t_s[k]))]
            est_vec = np.concatenate([e.kp, e.kq])
            half_vec = np.concatenate([e.dkp, e.dkq])
            for j in range(2 * self.nb):
                row += [_fmt(row_true[j]), _fmt(est_vec[j]), _fmt(half_vec[j])]
            self.estimate_rows[bus].append(row)

    def _constraint_set(self, k: int, est: dict[int, CoefficientEstimate],
                        v_prev: np.ndarray, robust: bool
                        ) -> VoltageConstraintSet:
        cc = self.cfg.control
        nodes = tuple(self.monitored)
        idx = self.monitored_idx
        j_cols = self.plant_cols
        if self.cfg.control.mode == "model-based":
            if cc.model_based_recompute or self.true_k_cache is None:
                self.true_k_cache = self._truth(k)
            truth = self.true_k_cache
            kp = truth.KP[np.ix_(idx, j_cols)]
            kq = truth.KQ[np.ix_(idx, j_cols)]
            dkp = np.zeros_like(kp)
            dkq = np.zeros_like(kq)
        else:
            kp = np.stack([est[b].kp[j_cols] for b in nodes])
            kq = np.stack([est[b].kq[j_cols] for b in nodes])
            dkp = np.stack([est[b].dkp[j_cols] for b in nodes])
            dkq = np.stack([est[b].dkq[j_cols] for b in nodes])
        omega = None if cc.omega is None else np.full(len(nodes), cc.omega)
        return VoltageConstraintSet(
            v_min=cc.v_min, v_max=cc.v_max, node_ids=nodes,
            v_prev=v_prev, kp=kp, kq=kq,
            dkp=dkp if robust else None, dkq=dkq if robust else None,
            omega=omega)

    def _decide(self, k: int, est: dict[int, CoefficientEstimate],
                curtailed_cum_kwh: float) -> None:
        cc = self.cfg.control
        mpp = self.profiles.p[k, self.plant_cols].copy()
        if cc.forecast_noise_frac > 0:
            noise = self.rng.standard_normal(len(mpp))
            mpp = np.clip(mpp * (1.0 + cc.forecast_noise_frac * noise), 0, None)
        v_prev, prev_p, prev_q = self._baseline(k)
        robust = cc.mode == "robust"
        vset = self._constraint_set(k, est, v_prev, robust)
        weights = (cc.wp, cc.wq)
        if robust:
            qp = build_robust(self.plants, vset, mpp, prev_p, prev_q,
                              weights=weights, linking=cc.linking)
        else:
            qp = build_nonrobust(self.plants, vset, mpp, prev_p, prev_q,
                                 weights=weights)
        self.decision = solve_qp(qp)
        t = int(self.t_s[k])
        row = [str(t)]
        for j, plant in enumerate(self.plants):
            row += [_fmt(self.decision.p_set[j]), _fmt(self.decision.q_set[j]),
                    _fmt(mpp[j])]
        row.append(_fmt(curtailed_cum_kwh))
        self.decision_rows.append(row)
        self.solver_stats.append({
            "t_s": t,
            "status": self.decision.status,
            "objective": self.decision.objective,
            "iterations": self.decision.iterations,
            "n_active": len(self.decision.active),
        })

    def day2(self) -> None:
        cfg = self.cfg
        mode = cfg.control.mode
        refresh = cfg.refresh_s // self.dt
        period = cfg.control.period_s // self.dt
        t_split = self.k_split
        s_base = self.model.s_base_va
        curtailed_kwh = 0.0
        for k in range(self.k_split, self.n_steps):
            mpp_now = self.profiles.p[k, self.plant_cols]
            self.p_inj[k] = self.profiles.p[k]
            self.q_inj[k] = self.profiles.q[k]
            if self.decision is not None:
                for j, col in enumerate(self.plant_cols):
                    self.p_inj[k, col] = min(float(self.decision.p_set[j]),
                                             float(mpp_now[j]))
                    self.q_inj[k, col] = float(self.decision.q_set[j])
            state = self._load_flow(k)
            self._measure(k, state)
            curtailed_kwh += float(np.sum(mpp_now - self.p_inj[k, self.plant_cols])) \
                * self.dt * s_base / 3.6e6
            is_refresh = (k - t_split) % refresh == 0
            is_control = mode != "off" and (k - t_split) % period == 0
            if cfg.estimator.step_every_sample or is_refresh:
                self._step_estimators(k)
            if cfg.estimator.variant == "ls" and (is_refresh or is_control):
                self._ls_refit(k)
            est = self._publish(k) if (is_refresh or is_control) else None
            if is_refresh:
                self._log_refresh(k, est)
            if is_control:
                try:
                    self._decide(k, est, curtailed_kwh)
                except VoltgridError as exc:
                    exc.args = (f"[t={int(self.t_s[k])} s] {exc.args[0]}",) \
                        + exc.args[1:]
                    raise

    # ---- reporting ---------------------------------------------------

    def build_report(self) -> dict:
        cfg = self.cfg
        mc = cfg.metrics
        window = (mc.window_start_h * 3600.0, mc.window_end_h * 3600.0)
        estimation = {}
        for bus, idx in zip(self.monitored, self.monitored_idx):
            if self.series[bus].t_s:
                estimation[str(bus)] = _node_metrics(
                    self.series[bus], idx, self.nb, window,
                    mc.alpha, mc.nu, mc.cwc_literal)
        if estimation:
            estimation["_mean"] = {
                "rmse_vector": float(np.mean(
                    [v["rmse_vector"] for v in estimation.values()])),
                "rmse_kp_self": float(np.mean(
                    [v["kp_self"]["rmse"] for v in estimation.values()])),
                "picp_kp_self": float(np.mean(
                    [v["kp_self"]["picp"] for v in estimation.values()])),
                "pinaw_kp_self": float(np.mean(
                    [v["kp_self"]["pinaw"] for v in estimation.values()])),
            }
        report = {
            "scenario": {
                "feeder": cfg.network.feeder or cfg.network.buses,
                "it_class": cfg.measurement.it_class,
                "variant": cfg.estimator.variant,
                "mode": cfg.control.mode,
                "seed": cfg.run.seed,
                "sample_period_s": self.dt,
                "n_steps": self.n_steps,
            },
            "estimation": estimation,
        }
        if self.n_steps > self.k_split:
            sl = slice(self.k_split, self.n_steps)
            vm_day2 = np.abs(self.v_true[sl][:, self.model.non_slack_pos])
            report["control"] = control_report(
                vm_day2, self.model.non_slack_ids,
                cfg.control.v_min, cfg.control.v_max,
                p_applied=self.p_inj[sl][:, self.plant_cols],
                p_mpp=self.profiles.p[sl.start:sl.stop][:, self.plant_cols],
                q_applied=self.q_inj[sl][:, self.plant_cols],
                plant_ids=[p.bus for p in self.plants],
                dt_s=self.dt, s_base_va=self.model.s_base_va)
        return report

    def _write_csv(self, path: Path, header: list[str],
                   rows: Iterable[list[str]]) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(",".join(header) + "\n")
            for row in rows:
                f.write(",".join(row) + "\n")

    def write_artifacts(self, report: dict) -> dict:
        out = self.out_dir
        files: dict[str, str] = {}
        if out is None:
            return files
        out.mkdir(parents=True, exist_ok=True)

        bus_ids = self.model.non_slack_ids
        coef_cols = []
        for kind in ("kp", "kq"):
            for b in bus_ids:
                coef_cols += [f"{kind}_{b}_true", f"{kind}_{b}_est",
                              f"{kind}_{b}_half"]
        for bus in self.monitored:
            if not self.estimate_rows[bus]:
                continue
            name = f"estimates_{bus}.csv"
            self._write_csv(out / name, ["t_s"] + coef_cols,
                            self.estimate_rows[bus])
            files[name] = _sha256_file(out / name)

        if self.n_steps > self.k_split:
            name = "voltages.csv"
            header = ["t_s"] + [f"v_{b}" for b in bus_ids]
            sl = slice(self.k_split, self.n_steps)
            vm = np.abs(self.v_true[sl][:, self.model.non_slack_pos])
            rows = ([str(int(self.t_s[self.k_split + i]))]
                    + [_fmt(x) for x in vm[i]] for i in range(vm.shape[0]))
            self._write_csv(out / name, header, rows)
            files[name] = _sha256_file(out / name)

        if self.decision_rows:
            header = ["t_s"]
            for p in self.plants:
                header += [f"p_set_{p.bus}", f"q_set_{p.bus}", f"p_mpp_{p.bus}"]
            header.append("curtailed_kwh_cum")
            self._write_csv(out / "decisions.csv", header, self.decision_rows)
            files["decisions.csv"] = _sha256_file(out / "decisions.csv")
            (out / "solver_stats.json").write_text(_json_dumps(self.solver_stats))
            files["solver_stats.json"] = _sha256_file(out / "solver_stats.json")

        (out / "report.json").write_text(_json_dumps(report))
        files["report.json"] = _sha256_file(out / "report.json")
        self._write_csv(out / "report.csv", ["section", "node", "metric", "value"],
                        _flatten_report(report))
        files["report.csv"] = _sha256_file(out / "report.csv")
        return files

    def flush_partial(self) -> None:
        """Keep whatever logs exist when a stage aborts mid-run."""
        if self.out_dir is None:
            return
        try:
            self.write_artifacts({"scenario": {"aborted": True}})
        except OSError:
            pass

    def execute(self) -> RunResult:
        started = time.time()
        stages = [("day1", self.day1), ("init", self.init_estimators),
                  ("day2", self.day2)]
        for name, fn in stages:
            t0 = time.perf_counter()
            try:
                fn()
            except VoltgridError as exc:
                self.flush_partial()
                exc.args = (f"[stage {name}] {exc.args[0]}",) + exc.args[1:]
                raise
            self.timing[name] = time.perf_counter() - t0
        t0 = time.perf_counter()
        report = self.build_report()
        files = self.write_artifacts(report)
        self.timing["report"] = time.perf_counter() - t0

        manifest = RunManifest(
            version=__version__,
            seed=self.cfg.run.seed,
            config=self.cfg.to_dict(),
            inputs={"network_sha256": _network_sha(self.model),
                    "profiles": self.profile_prov},
            timing={"started_at_unix": started,
                    "wall_clock_s": time.time() - started,
                    "stages": self.timing},
            files=files,
        )
        if self.out_dir is not None:
            (self.out_dir / "manifest.json").write_text(
                _json_dumps(manifest.to_dict()))
        return RunResult(manifest=manifest, report=report, out_dir=self.out_dir)


def _flatten_report(report: dict, prefix: str = "") -> Iterable[list[str]]:
    for key, value in sorted(report.items()):
        path = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, dict):
            yield from _flatten_report(value, path)
        else:
            head, _, metric = path.rpartition(".")
            section, _, node = head.partition(".")
            yield [section or path, node, metric or path, str(value)]


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None
                 ) -> RunResult:
    """Execute a full scenario; writes artifacts when an out dir is set."""
    return _Run(cfg, out_dir).execute()


def generate_dataset(cfg: ScenarioConfig, out_dir: str | Path) -> RunResult:
    """Open-loop raw-data generation: true + noisy stream dump."""
    cfg = override(cfg, control=dict(mode="off"))
    run = _Run(cfg, out_dir)
    run.k_split = run.n_steps  # whole duration is open loop
    t0 = time.perf_counter()
    started = time.time()
    run.day1()
    run.timing["day1"] = time.perf_counter() - t0

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bus_ids = run.model.non_slack_ids
    header = ["t_s"]
    for b in bus_ids:
        header += [f"vm_true_{b}", f"vm_noisy_{b}", f"p_true_{b}",
                   f"p_noisy_{b}", f"q_true_{b}", f"q_noisy_{b}"]
    vm_true = np.abs(run.v_true[:, run.model.non_slack_pos])

    def rows():
        for k in range(run.n_steps):
            row = [str(int(run.t_s[k]))]
            for j in range(run.nb):
                row += [_fmt(vm_true[k, j]), _fmt(run.vm_noisy[k, j]),
                        _fmt(run.p_inj[k, j]), _fmt(run.p_noisy[k, j]),
                        _fmt(run.q_inj[k, j]), _fmt(run.q_noisy[k, j])]
            yield row

    run._write_csv(out / "dataset.csv", header, rows())
    (out / "dataset_seed.json").write_text(_json_dumps({
        "seed": cfg.run.seed,
        "it_class": cfg.measurement.it_class,
        "literal_phase": cfg.measurement.literal_phase,
    }))
    save_profiles(out / "profiles.csv", run.profiles.slice(0, run.n_steps))
    files = {name: _sha256_file(out / name)
             for name in ("dataset.csv", "dataset_seed.json", "profiles.csv")}
    manifest = RunManifest(
        version=__version__, seed=cfg.run.seed, config=cfg.to_dict(),
        inputs={"network_sha256": _network_sha(run.model),
                "profiles": run.profile_prov},
        timing={"started_at_unix": started,
                "wall_clock_s": time.time() - started,
                "stages": run.timing},
        files=files)
    (out / "manifest.json").write_text(_json_dumps(manifest.to_dict()))
    report = {"scenario": {"n_steps": run.n_steps,
                           "it_class": cfg.measurement.it_class}}
    return RunResult(manifest=manifest, report=report, out_dir=out)


def estimation_benchmark(cfg: ScenarioConfig,
                         variants: Sequence[str] = VARIANTS,
                         seed: int | None = None) -> dict:
    """Open-loop comparison of estimator variants over one shared stream.

    The measurement stream and the oracle truths are synthesized once;
    every variant is initialized from the same batch LS fit and stepped
    over the identical day-2 samples, so differences between variants
    are exactly the update rules and not the data.
    """
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    if seed is not None:
        cfg = override(cfg, run=dict(seed=seed))
    cfg = override(cfg, control=dict(mode="off"))
    run = _Run(cfg, out_dir=None)
    run.day1()
    run.init_estimators()
    base_states = run.states

    refresh = cfg.refresh_s // run.dt
    refresh_ks = [k for k in range(run.k_split, run.n_steps)
                  if (k - run.k_split) % refresh == 0]
    # continue the open loop over day 2 (profiles only, no control)
    for k in range(run.k_split, run.n_steps):
        run.p_inj[k] = run.profiles.p[k]
        run.q_inj[k] = run.profiles.q[k]
        run._measure(k, run._load_flow(k))
    truths = {}
    for k in refresh_ks:
        truth = run._truth(k)
        truths[k] = {b: np.concatenate([truth.KP[i], truth.KQ[i]])
                     for b, i in zip(run.monitored, run.monitored_idx)}

    mc = cfg.metrics
    window = (mc.window_start_h * 3600.0, mc.window_end_h * 3600.0)
    out: dict = {"seed": cfg.run.seed, "variants": {}}
    for variant in variants:
        params = dataclasses.replace(cfg.estimator.params(), variant=variant)
        states = {b: with_params(base_states[b], params)
                  for b in run.monitored}
        series = {b: _Series() for b in run.monitored}
        refresh_set = set(refresh_ks)
        for k in range(run.k_split, run.n_steps):
            if variant != "ls" and \
                    (cfg.estimator.step_every_sample or k in refresh_set):
                h, dvm = run._regressor_at(k)
                for b, i in zip(run.monitored, run.monitored_idx):
                    rls_step(states[b], h, float(dvm[i]))
            if k in refresh_set:
                if variant == "ls":
                    hw, dvw = run._ls_window(k)
                    for b, i in zip(run.monitored, run.monitored_idx):
                        states[b] = ls_estimate(
                            RegressorWindow(H=hw, gamma=dvw[:, i], node=b),
                            params=params)
                for b in run.monitored:
                    series[b].add(int(run.t_s[k]), truths[k][b],
                                  coefficient_intervals(states[b]))
        nodes = {}
        for b, i in zip(run.monitored, run.monitored_idx):
            nodes[str(b)] = _node_metrics(series[b], i, run.nb, window,
                                          mc.alpha, mc.nu, mc.cwc_literal)
        out["variants"][variant] = {
            "nodes": nodes,
            "rmse_vector_mean": float(np.mean(
                [n["rmse_vector"] for n in nodes.values()])),
            "rmse_kp_self_mean": float(np.mean(
                [n["kp_self"]["rmse"] for n in nodes.values()])),
            "picp_kp_self_mean": float(np.mean(
                [n["kp_self"]["picp"] for n in nodes.values()])),
            "median_half_kp_self": float(np.median(
                [n["kp_self"]["median_half"] for n in nodes.values()])),
        }
    return out


def write_benchmark(bench: dict, out_dir: str | Path) -> None:
    """Persist an estimation benchmark as benchmark.json + benchmark.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "benchmark.json").write_text(_json_dumps(bench))
    lines = ["variant,rmse_vector_mean,rmse_kp_self_mean,"
             "picp_kp_self_mean,median_half_kp_self"]
    for variant, row in bench["variants"].items():
        lines.append(",".join([variant] + [_fmt(row[k]) for k in
                     ("rmse_vector_mean", "rmse_kp_self_mean",
                      "picp_kp_self_mean", "median_half_kp_self")]))
    (out / "benchmark.csv").write_text("\n".join(lines) + "\n")


# ---- run directory comparison ---------------------------------------


def _load_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"missing {path.name} in {path.parent}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def compare_runs(run_dirs: Sequence[str | Path]) -> dict:
    """Align the reports of several runs sharing network and profiles.

    Refuses (with a diff summary) when the input checksums differ, since
    metric deltas across different data are meaningless.
    """
    if not run_dirs:
        raise ConfigError("no run directories given")
    rows = []
    inputs_ref = None
    ref_dir = None
    for d in run_dirs:
        d = Path(d)
        manifest = _load_json(d / "manifest.json")
        report = _load_json(d / "report.json")
        inputs = {
            "network": manifest.get("inputs", {}).get("network_sha256"),
            "profiles": manifest.get("inputs", {}).get("profiles", {}).get("sha256"),
        }
        if inputs_ref is None:
            inputs_ref, ref_dir = inputs, d
        elif inputs != inputs_ref:
            diffs = [f"{key}: {ref_dir}={inputs_ref[key]} {d}={inputs[key]}"
                     for key in inputs if inputs[key] != inputs_ref[key]]
            raise ConfigError("runs are not comparable; input checksums "
                              "differ: " + "; ".join(diffs))
        scen = report.get("scenario", {})
        row = {
            "dir": str(d),
            "variant": scen.get("variant"),
            "mode": scen.get("mode"),
            "it_class": scen.get("it_class"),
            "seed": scen.get("seed"),
        }
        est = report.get("estimation", {})
        if "_mean" in est:
            row["rmse_vector_mean"] = est["_mean"]["rmse_vector"]
            row["picp_kp_self_mean"] = est["_mean"]["picp_kp_self"]
        ctl = report.get("control")
        if ctl:
            row["max_v"] = ctl["max_v_overall"]
            row["overvoltage_steps"] = ctl["overvoltage_steps_total"]
            row["curtailed_kwh"] = ctl.get("curtailed_kwh")
            row["node_max_v"] = {n: v["max_v"] for n, v in ctl["nodes"].items()}
        rows.append(row)
    comparison = {"runs": rows}
    base = rows[0]
    if "node_max_v" in base:
        deltas = []
        for row in rows[1:]:
            if "node_max_v" not in row:
                continue
            deltas.append({
                "dir": row["dir"],
                "vs": base["dir"],
                "max_v_delta": row["max_v"] - base["max_v"],
                "node_max_v_delta": {
                    n: row["node_max_v"][n] - base["node_max_v"][n]
                    for n in base["node_max_v"] if n in row["node_max_v"]},
            })
        comparison["deltas_vs_first"] = deltas
    return comparison


def write_comparison(comparison: dict, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.json").write_text(_json_dumps(comparison))
    keys = ["dir", "variant", "mode", "it_class", "seed", "rmse_vector_mean",
            "picp_kp_self_mean", "max_v", "overvoltage_steps", "curtailed_kwh"]
    lines = [",".join(keys)]
    for row in comparison["runs"]:
        lines.append(",".join("" if row.get(k) is None else str(row.get(k))
                              for k in keys))
    (out / "comparison.csv").write_text("\n".join(lines) + "\n")


def runs_byte_identical(dir_a: str | Path, dir_b: str | Path
                        ) -> tuple[bool, list[str]]:
    """Compare two run directories byte-for-byte.

    manifest.json is compared after dropping its timing block (wall
    clock can never repeat); every other emitted file must match
    exactly. Returns (identical, list of differences).
    """
    a, b = Path(dir_a), Path(dir_b)
    diffs = []
    names_a = {p.name for p in a.iterdir() if p.is_file()}
    names_b = {p.name for p in b.iterdir() if p.is_file()}
    for missing in sorted(names_a ^ names_b):
        diffs.append(f"file set differs: {missing}")
    for name in sorted(names_a & names_b):
        if name == "manifest.json":
            ma, mb = _load_json(a / name), _load_json(b / name)
            ma.pop("timing", None)
            mb.pop("timing", None)
            if ma != mb:
                diffs.append("manifest.json differs beyond timing")
            continue
        if (a / name).read_bytes() != (b / name).read_bytes():
            diffs.append(f"{name} differs")
    return not diffs, diffs
