"""FastAPI application exposing the toolkit over HTTP."""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..config import (ScenarioConfig, apply_option_overrides, config_from_dict,
                      load_config)
from ..dispatch import (ControlDecision, PvPlant, VoltageConstraintSet,
                        build_nonrobust, build_robust, empty_constraints,
                        solve_qp)
from ..errors import ConfigError, InfeasibleError, NumericalError
from ..network import solve_load_flow, true_sensitivities
from ..scenario import (compare_runs, estimation_benchmark, generate_dataset,
                        resolve_network, run_scenario, write_benchmark,
                        write_comparison)
from ..version import __version__
from . import schemas as sc


def _scenario_config(req: sc.ScenarioRequest) -> ScenarioConfig:
    if req.config_path is not None:
        if req.config:
            raise ConfigError("give either config or config_path, not both")
        cfg = load_config(req.config_path)
    else:
        cfg = config_from_dict(req.config)
    return apply_option_overrides(cfg, seed=req.seed, it_class=req.it_class,
                                  estimator=req.estimator, mode=req.mode,
                                  omega=req.omega, out=req.out_dir)


def _decision_response(decision: ControlDecision) -> sc.ControlSolveResponse:
    return sc.ControlSolveResponse(
        plant_buses=list(decision.plant_buses),
        p_set=[float(v) for v in decision.p_set],
        q_set=[float(v) for v in decision.q_set],
        objective=float(decision.objective),
        status=decision.status,
        active=list(decision.active),
    )


def create_app() -> FastAPI:
    app = FastAPI(title="voltgrid", version=__version__)

    @app.exception_handler(ConfigError)
    async def _config_error(request: Request, exc: ConfigError):
        body = sc.ErrorBody(kind="config", message=str(exc))
        return JSONResponse(status_code=400, content=body.model_dump())

    @app.exception_handler(InfeasibleError)
    async def _infeasible_error(request: Request, exc: InfeasibleError):
        body = sc.ErrorBody(kind="infeasible", message=str(exc),
                            worst_row=exc.worst_row, violation=exc.violation)
        return JSONResponse(status_code=409, content=body.model_dump())

    @app.exception_handler(NumericalError)
    async def _numerical_error(request: Request, exc: NumericalError):
        body = sc.ErrorBody(kind="numerical", message=str(exc))
        return JSONResponse(status_code=422, content=body.model_dump())

    @app.get("/health", response_model=sc.HealthResponse)
    def health() -> sc.HealthResponse:
        return sc.HealthResponse(status="ok", version=__version__)

    @app.post("/scenario/run", response_model=sc.RunResponse)
    def scenario_run(req: sc.ScenarioRequest) -> sc.RunResponse:
        cfg = _scenario_config(req)
        if req.require_control and cfg.control.mode == "off":
            raise ConfigError("closed-loop command needs a control mode; "
                              "set control.mode or pass --mode")
        result = run_scenario(cfg, out_dir=cfg.run.out)
        return sc.RunResponse(
            report=result.report,
            manifest=result.manifest.to_dict(),
            out_dir=None if result.out_dir is None else str(result.out_dir),
        )

    @app.post("/scenario/dataset", response_model=sc.DatasetResponse)
    def scenario_dataset(req: sc.ScenarioRequest) -> sc.DatasetResponse:
        cfg = _scenario_config(req)
        if cfg.run.out is None:
            raise ConfigError("dataset synthesis needs an output directory "
                              "(out_dir or run.out)")
        result = generate_dataset(cfg, cfg.run.out)
        return sc.DatasetResponse(
            manifest=result.manifest.to_dict(),
            out_dir=str(result.out_dir),
            files=sorted(result.manifest.files),
        )

    @app.post("/scenario/estimate", response_model=sc.EstimateResponse)
    def scenario_estimate(req: sc.EstimateRequest) -> sc.EstimateResponse:
        cfg = _scenario_config(req)
        kwargs = {} if req.variants is None else {"variants": req.variants}
        bench = estimation_benchmark(cfg, **kwargs)
        if cfg.run.out is not None:
            write_benchmark(bench, cfg.run.out)
        return sc.EstimateResponse(benchmark=bench, out_dir=cfg.run.out)

    @app.post("/control/solve", response_model=sc.ControlSolveResponse)
    def control_solve(req: sc.ControlSolveRequest) -> sc.ControlSolveResponse:
        plants = [PvPlant(bus=p.bus, s_max=p.s_max, pf_min=p.pf_min)
                  for p in req.plants]
        if req.voltage is None:
            vset = empty_constraints()
        else:
            v = req.voltage
            vset = VoltageConstraintSet(
                v_min=v.v_min, v_max=v.v_max, node_ids=tuple(v.node_ids),
                v_prev=np.asarray(v.v_prev, dtype=float),
                kp=np.asarray(v.kp, dtype=float),
                kq=np.asarray(v.kq, dtype=float),
                dkp=None if v.dkp is None else np.asarray(v.dkp, dtype=float),
                dkq=None if v.dkq is None else np.asarray(v.dkq, dtype=float),
                omega=None if v.omega is None else np.asarray(v.omega, dtype=float),
            )
        weights = tuple(float(w) for w in req.weights)
        if len(weights) != 2:
            raise ConfigError("weights must be [wp, wq]")
        build = build_robust if req.robust else build_nonrobust
        kwargs = {"linking": req.linking} if req.robust else {}
        qp = build(plants, vset, req.mpp, req.prev_p, req.prev_q,
                   weights=weights, **kwargs)
        return _decision_response(solve_qp(qp))

    @app.post("/network/sensitivities", response_model=sc.SensitivityResponse)
    def network_sensitivities(req: sc.SensitivityRequest) -> sc.SensitivityResponse:
        cfg = config_from_dict({"network": req.network})
        model = resolve_network(cfg)
        p = np.zeros(model.n_non_slack)
        q = np.zeros(model.n_non_slack)
        for bus, val in req.p.items():
            p[model.non_slack_index(bus)] = val
        for bus, val in req.q.items():
            q[model.non_slack_index(bus)] = val
        state = solve_load_flow(model, p, q)
        sens = true_sensitivities(model, state)
        return sc.SensitivityResponse(
            bus_ids=list(sens.bus_ids),
            vm=[float(v) for v in state.vm_non_slack()],
            kp=sens.KP.tolist(),
            kq=sens.KQ.tolist(),
        )

    @app.post("/report/compare", response_model=sc.CompareResponse)
    def report_compare(req: sc.CompareRequest) -> sc.CompareResponse:
        comparison = compare_runs(req.run_dirs)
        if req.out_dir is not None:
            write_comparison(comparison, req.out_dir)
        return sc.CompareResponse(comparison=comparison, out_dir=req.out_dir)

    return app
