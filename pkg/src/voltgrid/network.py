"""Feeder model, AC load flow and analytic voltage sensitivities.

All electrical quantities are per-unit on the model's power/voltage base.
Vectors over "non-slack buses" follow ascending bus-id order with the
slack removed; helpers on :class:`NetworkModel` translate bus ids to
vector positions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import LoadFlowError, ModelError, NumericalError


@dataclass(frozen=True)
class Branch:
    """Series R/X branch with total charging susceptance b (pi model)."""

    from_bus: int
    to_bus: int
    r_pu: float
    x_pu: float
    b_pu: float = 0.0

    def series_admittance(self) -> complex:
        z = complex(self.r_pu, self.x_pu)
        if z == 0:
            raise ModelError(f"zero-impedance branch {self.from_bus}-{self.to_bus}")
        return 1.0 / z


def build_admittance(bus_ids: Sequence[int], branches: Iterable[Branch]) -> np.ndarray:
    """Assemble the dense complex bus admittance matrix.

    Off-diagonal (i, j) entries are -1/(R+jX) summed over parallel
    branches; diagonals collect incident series admittances plus half the
    branch charging susceptance per incident end. Raises ModelError if
    the branch graph does not connect all buses.
    """
    bus_ids = list(bus_ids)
    pos = {b: k for k, b in enumerate(bus_ids)}
    if len(pos) != len(bus_ids):
        raise ModelError("duplicate bus ids")
    n = len(bus_ids)
    y = np.zeros((n, n), dtype=complex)
    adj: dict[int, set[int]] = {k: set() for k in range(n)}
    for br in branches:
        if br.from_bus not in pos or br.to_bus not in pos:
            raise ModelError(f"branch {br.from_bus}-{br.to_bus} references unknown bus")
        if br.r_pu < 0:
            raise ModelError(f"negative resistance on branch {br.from_bus}-{br.to_bus}")
        if br.r_pu == 0 and br.x_pu == 0:
            raise ModelError(f"zero-impedance branch {br.from_bus}-{br.to_bus}")
        f, t = pos[br.from_bus], pos[br.to_bus]
        ys = br.series_admittance()
        ysh = 0.5j * br.b_pu
        y[f, t] -= ys
        y[t, f] -= ys
        y[f, f] += ys + ysh
        y[t, t] += ys + ysh
        adj[f].add(t)
        adj[t].add(f)
    # connectivity sweep from bus 0
    seen = {0} if n else set()
    frontier = [0] if n else []
    while frontier:
        k = frontier.pop()
        for m in adj[k]:
            if m not in seen:
                seen.add(m)
                frontier.append(m)
    if len(seen) != n:
        missing = sorted(bus_ids[k] for k in range(n) if k not in seen)
        raise ModelError(f"disconnected network: buses {missing} unreachable")
    return y


@dataclass(frozen=True)
class NetworkModel:
    """Bus/branch description plus the assembled admittance matrix."""

    bus_ids: tuple[int, ...]
    slack_id: int
    branches: tuple[Branch, ...]
    s_base_va: float
    v_base_v: float
    slack_v_pu: float
    Y: np.ndarray

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def slack_pos(self) -> int:
        return self.bus_ids.index(self.slack_id)

    @property
    def non_slack_pos(self) -> np.ndarray:
        sp = self.slack_pos
        return np.array([k for k in range(self.n_bus) if k != sp], dtype=int)

    @property
    def non_slack_ids(self) -> tuple[int, ...]:
        return tuple(b for b in self.bus_ids if b != self.slack_id)

    @property
    def n_non_slack(self) -> int:
        return self.n_bus - 1

    def pos(self, bus_id: int) -> int:
        """Position of a bus id in full-network vectors."""
        try:
            return self.bus_ids.index(bus_id)
        except ValueError:
            raise ModelError(f"unknown bus id {bus_id}") from None

    def non_slack_index(self, bus_id: int) -> int:
        """Position of a bus id in non-slack vectors (measurements, injections)."""
        try:
            return self.non_slack_ids.index(bus_id)
        except ValueError:
            raise ModelError(f"bus {bus_id} is not a non-slack bus") from None


def build_network(bus_records: Sequence[tuple[int, bool]],
                  branches: Sequence[Branch],
                  *,
                  s_base_va: float = 400e3,
                  v_base_v: float = 400.0,
                  slack_v_pu: float = 1.0) -> NetworkModel:
    """Validate bus/branch records and assemble a NetworkModel."""
    slacks = [b for b, is_slack in bus_records if is_slack]
    if len(slacks) != 1:
        raise ModelError(f"expected exactly one slack bus, found {len(slacks)}")
    bus_ids = sorted(b for b, _ in bus_records)
    y = build_admittance(bus_ids, branches)
    return NetworkModel(
        bus_ids=tuple(bus_ids),
        slack_id=slacks[0],
        branches=tuple(branches),
        s_base_va=float(s_base_va),
        v_base_v=float(v_base_v),
        slack_v_pu=float(slack_v_pu),
        Y=y,
    )


def load_network(buses_csv: str | Path, branches_csv: str | Path,
                 *,
                 s_base_va: float = 400e3,
                 v_base_v: float = 400.0,
                 slack_v_pu: float = 1.0) -> NetworkModel:
    """Load a network from the two-file CSV format.

    buses.csv columns: id, is_slack. branches.csv columns: from, to,
    r_pu, x_pu, b_pu. Header rows are required.
    """
    bus_records = []
    with open(buses_csv, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        _require_columns(reader.fieldnames, ("id", "is_slack"), buses_csv)
        for row in reader:
            bus_records.append((int(row["id"]), bool(int(row["is_slack"]))))
    branches = []
    with open(branches_csv, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        _require_columns(reader.fieldnames, ("from", "to", "r_pu", "x_pu", "b_pu"),
                         branches_csv)
        for row in reader:
            branches.append(Branch(int(row["from"]), int(row["to"]),
                                   float(row["r_pu"]), float(row["x_pu"]),
                                   float(row["b_pu"])))
    if not bus_records:
        raise ModelError(f"{buses_csv}: no buses")
    return build_network(bus_records, branches, s_base_va=s_base_va,
                         v_base_v=v_base_v, slack_v_pu=slack_v_pu)


def _require_columns(fieldnames, required, path):
    if fieldnames is None or any(c not in fieldnames for c in required):
        raise ModelError(f"{path}: expected header columns {list(required)}")


@dataclass(frozen=True)
class GridState:
    """Converged load-flow solution: complex phasors and the injections used."""

    V: np.ndarray  # complex nodal voltages, all buses
    I: np.ndarray  # complex nodal injected currents, all buses
    p: np.ndarray  # active injections at non-slack buses (ascending id)
    q: np.ndarray  # reactive injections at non-slack buses
    slack_pos: int

    @property
    def vm(self) -> np.ndarray:
        return np.abs(self.V)

    def vm_non_slack(self) -> np.ndarray:
        keep = np.arange(len(self.V)) != self.slack_pos
        return np.abs(self.V[keep])


def _ds_dv(y: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of complex power injections w.r.t. Vm and Va."""
    i_bus = y @ v
    vnorm = v / np.abs(v)
    idx = np.arange(len(v))
    ds_dvm = v[:, None] * np.conj(y * vnorm[None, :])
    ds_dvm[idx, idx] += np.conj(i_bus) * vnorm
    a = -y * v[None, :]
    a[idx, idx] += i_bus
    ds_dva = 1j * v[:, None] * np.conj(a)
    return ds_dvm, ds_dva


def _mismatch_jacobian(model: NetworkModel, v: np.ndarray) -> np.ndarray:
    """Real 2N x 2N Jacobian d[P;Q]/d[theta;Vm] over non-slack buses."""
    ns = model.non_slack_pos
    ds_dvm, ds_dva = _ds_dv(model.Y, v)
    k = len(ns)
    grid = np.ix_(ns, ns)
    jac = np.empty((2 * k, 2 * k))
    jac[:k, :k] = ds_dva.real[grid]
    jac[:k, k:] = ds_dvm.real[grid]
    jac[k:, :k] = ds_dva.imag[grid]
    jac[k:, k:] = ds_dvm.imag[grid]
    return jac


def solve_load_flow(model: NetworkModel, p: np.ndarray, q: np.ndarray,
                    *, tol: float = 1e-10, max_iter: int = 50,
                    v0: np.ndarray | None = None) -> GridState:
    """Full Newton-Raphson load flow in polar form.

    p, q are per-unit injections at non-slack buses in ascending bus-id
    order (generation positive, consumption negative). Starts flat
    unless v0 (complex phasors from a nearby solution) is given; the
    converged result is start-independent at the 1e-10 mismatch level.
    Raises LoadFlowError with the final mismatch if the iteration does
    not reach max |dP|, |dQ| < tol.
    """
    n = model.n_bus
    ns = model.non_slack_pos
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (n - 1,) or q.shape != (n - 1,):
        raise ModelError(f"expected injections of length {n - 1}, "
                         f"got {p.shape} / {q.shape}")

    if v0 is None:
        vm = np.full(n, model.slack_v_pu)
        va = np.zeros(n)
    else:
        vm = np.abs(np.asarray(v0, dtype=complex))
        va = np.angle(np.asarray(v0, dtype=complex))
        vm[model.slack_pos] = model.slack_v_pu
        va[model.slack_pos] = 0.0
    v = vm * np.exp(1j * va)
    mis_max = np.inf
    for it in range(max_iter + 1):
        s = v * np.conj(model.Y @ v)
        mis = np.concatenate([s.real[ns] - p, s.imag[ns] - q])
        mis_max = float(np.max(np.abs(mis))) if mis.size else 0.0
        if mis_max < tol:
            i_inj = model.Y @ v
            return GridState(V=v, I=i_inj, p=p.copy(), q=q.copy(),
                             slack_pos=model.slack_pos)
        if it == max_iter:
            break
        jac = _mismatch_jacobian(model, v)
        try:
            dx = np.linalg.solve(jac, -mis)
        except np.linalg.LinAlgError as exc:
            raise LoadFlowError(f"singular Jacobian at iteration {it}",
                                max_mismatch=mis_max, iterations=it) from exc
        k = len(ns)
        va[ns] += dx[:k]
        vm[ns] += dx[k:]
        if np.any(vm <= 0):
            raise LoadFlowError(
                "voltage magnitude left the solvable region (Vm <= 0)",
                max_mismatch=mis_max, iterations=it)
        v = vm * np.exp(1j * va)
    raise LoadFlowError(
        f"load flow did not converge in {max_iter} iterations "
        f"(max mismatch {mis_max:.3e} pu)",
        max_mismatch=mis_max, iterations=max_iter)


@dataclass(frozen=True)
class SensitivityMatrix:
    """Voltage-magnitude sensitivities d|V_i|/dP_j and d|V_i|/dQ_j.

    Rows and columns run over non-slack buses in ascending id order.
    """

    KP: np.ndarray
    KQ: np.ndarray
    bus_ids: tuple[int, ...]

    def row(self, bus_id: int) -> tuple[np.ndarray, np.ndarray]:
        i = self.bus_ids.index(bus_id)
        return self.KP[i], self.KQ[i]


def true_sensitivities(model: NetworkModel, state: GridState) -> SensitivityMatrix:
    """Analytic sensitivities from the inverse power-flow Jacobian.

    Exact at the operating point of the supplied converged state. Raises
    NumericalError near voltage collapse (singular Jacobian).
    """
    jac = _mismatch_jacobian(model, state.V)
    nb = model.n_non_slack
    try:
        jinv = np.linalg.inv(jac)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular power-flow Jacobian; "
                             "operating point near voltage collapse") from exc
    if not np.all(np.isfinite(jinv)):
        raise NumericalError("non-finite Jacobian inverse")
    # d[theta;Vm]/d[P;Q] = J^-1; keep the Vm block rows.
    kp = jinv[nb:, :nb].copy()
    kq = jinv[nb:, nb:].copy()
    return SensitivityMatrix(KP=kp, KQ=kq, bus_ids=model.non_slack_ids)


def finite_difference_sensitivities(model: NetworkModel, state: GridState,
                                    step: float = 1e-4) -> SensitivityMatrix:
    """Central finite-difference sensitivities by re-solving the load flow.

    Independent cross-check for :func:`true_sensitivities`; O(4 N_b) load
    flows, so only meant for tests and small networks.
    """
    nb = model.n_non_slack
    kp = np.zeros((nb, nb))
    kq = np.zeros((nb, nb))
    for j in range(nb):
        for mat, base in ((kp, state.p), (kq, state.q)):
            hi = base.copy()
            lo = base.copy()
            hi[j] += step
            lo[j] -= step
            if mat is kp:
                s_hi = solve_load_flow(model, hi, state.q)
                s_lo = solve_load_flow(model, lo, state.q)
            else:
                s_hi = solve_load_flow(model, state.p, hi)
                s_lo = solve_load_flow(model, state.p, lo)
            mat[:, j] = (s_hi.vm_non_slack() - s_lo.vm_non_slack()) / (2 * step)
    return SensitivityMatrix(KP=kp, KQ=kq, bus_ids=model.non_slack_ids)


def data_path(name: str) -> Path:
    """Path of a bundled data file or directory (e.g. 'feeder4')."""
    p = Path(__file__).parent / "data" / name
    if not p.exists():
        raise ModelError(f"no bundled data named {name!r}")
    return p


def load_builtin(name: str, **kwargs) -> NetworkModel:
    """Load one of the bundled feeders ('feeder4' or 'feeder18')."""
    d = data_path(name)
    return load_network(d / "buses.csv", d / "branches.csv", **kwargs)
