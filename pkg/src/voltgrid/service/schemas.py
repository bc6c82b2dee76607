"""Pydantic request/response models for the HTTP service.

Scenario payloads carry the same mapping a TOML scenario file would
contain; semantic validation happens in the core config layer so the
service and the file loader can never drift apart. The scalar override
fields mirror the CLI switches.
"""

from __future__ import annotations

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class ScenarioRequest(BaseModel):
    """A scenario plus the usual command-line style overrides."""

    config: Dict[str, Any] = Field(default_factory=dict)
    config_path: Optional[str] = None   # read a TOML file instead
    seed: Optional[int] = None
    it_class: Optional[str] = None
    estimator: Optional[str] = None
    mode: Optional[str] = None
    omega: Optional[float] = None
    out_dir: Optional[str] = None       # persist artifacts when given
    require_control: bool = False       # reject scenarios whose mode is "off"


class RunResponse(BaseModel):
    report: Dict[str, Any]
    manifest: Dict[str, Any]
    out_dir: Optional[str] = None


class DatasetResponse(BaseModel):
    manifest: Dict[str, Any]
    out_dir: str
    files: List[str]


class EstimateRequest(ScenarioRequest):
    variants: Optional[List[str]] = None


class EstimateResponse(BaseModel):
    benchmark: Dict[str, Any]
    out_dir: Optional[str] = None


class PlantSpec(BaseModel):
    bus: int
    s_max: float
    pf_min: float = 0.9


class VoltageRowsSpec(BaseModel):
    """Voltage coupling data for the dispatch problem, one row per node."""

    v_min: float
    v_max: float
    node_ids: List[int]
    v_prev: List[float]
    kp: List[List[float]]               # node x plant sensitivities
    kq: List[List[float]]
    dkp: Optional[List[List[float]]] = None   # interval half-widths
    dkq: Optional[List[List[float]]] = None
    omega: Optional[List[float]] = None       # per-node budgets


class ControlSolveRequest(BaseModel):
    plants: List[PlantSpec]
    voltage: Optional[VoltageRowsSpec] = None
    mpp: List[float]
    prev_p: List[float]
    prev_q: List[float]
    robust: bool = False
    weights: List[float] = Field(default_factory=lambda: [1.0, 1.0])
    linking: str = "sum"


class ControlSolveResponse(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    plant_buses: List[int]
    p_set: List[float]
    q_set: List[float]
    objective: float
    status: str
    active: List[str]


class SensitivityRequest(BaseModel):
    """Load-flow sensitivities for a feeder at a given injection state."""

    network: Dict[str, Any] = Field(default_factory=dict)
    p: Dict[int, float] = Field(default_factory=dict)   # bus -> injection, pu
    q: Dict[int, float] = Field(default_factory=dict)


class SensitivityResponse(BaseModel):
    bus_ids: List[int]
    vm: List[float]
    kp: List[List[float]]
    kq: List[List[float]]


class CompareRequest(BaseModel):
    run_dirs: List[str]
    out_dir: Optional[str] = None


class CompareResponse(BaseModel):
    comparison: Dict[str, Any]
    out_dir: Optional[str] = None


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorBody(BaseModel):
    kind: str                          # config | numerical | infeasible
    message: str
    worst_row: Optional[str] = None
    violation: Optional[float] = None
