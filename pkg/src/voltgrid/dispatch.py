"""PV dispatch as a small dense QP, with an interval-robust counterpart.

Decision variables are the plant setpoints [P_0..P_{J-1}, Q_0..Q_{J-1}];
the robust form appends deviation envelopes y, per-node protection
scalars z and per-node-per-plant helpers g. All constraints are linear
rows G x <= h; the converter capability circle is linearized as an
inscribed 16-facet polygon so the robust counterpart stays linear.

The interior-point solve is followed by a deterministic active-set
polish that re-solves the equality-constrained KKT system on the
identified active rows, giving reference-quality setpoints for the
reduction identities checked in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from cvxopt import matrix as _cvx_matrix, solvers as _cvx_solvers
from scipy.optimize import linprog

from .errors import ConfigError, InfeasibleError, NumericalError

# payoff-free auxiliary variables get this box bound so the feasible set
# stays bounded in every direction; protection quantities live well below
# it on per-unit data
AUX_BOUND = 10.0

# tie-break ridge on auxiliary variables: keeps the Hessian PD and pins
# the (otherwise flat) optimal face without moving the setpoints beyond
# O(1e-9)
AUX_RIDGE = 1e-9

_IPM_OPTIONS = {
    "show_progress": False,
    "abstol": 1e-10,
    "reltol": 1e-10,
    "feastol": 1e-9,
    "maxiters": 200,
}

# degenerate instances (e.g. zero availability at night) can trip the
# default KKT scaling; retried with progressively relaxed tolerances and
# the polish step restores accuracy afterwards
_IPM_FALLBACKS = (
    {"show_progress": False, "abstol": 1e-8, "reltol": 1e-8,
     "feastol": 1e-8, "maxiters": 200},
    {"show_progress": False, "abstol": 1e-6, "reltol": 1e-6,
     "feastol": 1e-7, "maxiters": 300, "refinement": 3},
)


@dataclass(frozen=True)
class PvPlant:
    """Converter-interfaced PV plant at a network bus."""

    bus: int
    s_max: float
    pf_min: float = 0.9
    mpp_series: np.ndarray | None = None  # optional availability trace, pu

    def __post_init__(self):
        if self.s_max <= 0:
            raise ConfigError(f"plant at bus {self.bus}: s_max must be > 0")
        if not 0.0 < self.pf_min <= 1.0:
            raise ConfigError(f"plant at bus {self.bus}: pf_min in (0, 1]")

    @property
    def zeta(self) -> float:
        """Reactive/active slope of the minimum power-factor cone."""
        return float(np.sqrt((1.0 - self.pf_min ** 2) / self.pf_min ** 2))


@dataclass(frozen=True)
class VoltageConstraintSet:
    """Voltage band plus the sensitivity data of the constrained nodes.

    kp/kq hold the plant columns only: kp[i, j] is dV_i/dP at plant j's
    bus. dkp/dkq are the nonnegative interval half-widths, omega the
    per-node protection budget in [0, n_plants].
    """

    v_min: float
    v_max: float
    node_ids: tuple[int, ...]
    v_prev: np.ndarray
    kp: np.ndarray
    kq: np.ndarray
    dkp: np.ndarray | None = None
    dkq: np.ndarray | None = None
    omega: np.ndarray | None = None

    def __post_init__(self):
        if self.v_min >= self.v_max:
            raise ConfigError("need v_min < v_max")
        n = len(self.node_ids)
        if self.v_prev.shape != (n,):
            raise ConfigError("v_prev length mismatch")
        for name in ("kp", "kq", "dkp", "dkq"):
            m = getattr(self, name)
            if m is not None and (m.ndim != 2 or m.shape[0] != n):
                raise ConfigError(f"{name} must be (n_nodes, n_plants)")
        for name in ("dkp", "dkq"):
            m = getattr(self, name)
            if m is not None and np.any(m < 0):
                raise ConfigError(f"{name} has negative half-widths")

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def budget(self, n_plants: int) -> np.ndarray:
        if self.omega is None:
            return np.full(self.n_nodes, float(n_plants))
        om = np.broadcast_to(np.asarray(self.omega, dtype=float),
                             (self.n_nodes,)).copy()
        if np.any(om < 0) or np.any(om > n_plants):
            raise ConfigError(f"omega must lie in [0, {n_plants}]")
        return om


def empty_constraints(v_min: float = 0.97, v_max: float = 1.03) -> VoltageConstraintSet:
    return VoltageConstraintSet(v_min, v_max, (), np.zeros(0),
                                np.zeros((0, 0)), np.zeros((0, 0)))


@dataclass(frozen=True)
class QpProblem:
    """min 0.5 x'Hx + f'x + const  s.t.  G x <= h, with named rows/vars."""

    hess_diag: np.ndarray
    f: np.ndarray
    G: np.ndarray
    h: np.ndarray
    var_names: tuple[str, ...]
    row_labels: tuple[str, ...]
    const: float = 0.0
    n_plants: int = 0

    @property
    def n_vars(self) -> int:
        return len(self.hess_diag)

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.hess_diag * x) + self.f @ x + self.const)

    def residuals(self, x: np.ndarray) -> np.ndarray:
        return self.G @ x - self.h


@dataclass(frozen=True)
class ControlDecision:
    """Solved setpoints for one control instant."""

    plant_buses: tuple[int, ...]
    p_set: np.ndarray
    q_set: np.ndarray
    objective: float
    status: str
    active: tuple[str, ...] = ()
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0


def _facet_rows(n_facets: int, s_max: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inscribed-polygon linearization of P^2 + Q^2 <= s_max^2."""
    m = np.arange(n_facets)
    phi = 2.0 * np.pi * m / n_facets
    rhs = s_max * np.cos(np.pi / n_facets)
    return np.cos(phi), np.sin(phi), np.full(n_facets, rhs)


class _Rows:
    """Incremental builder for the (G, h, label) triplets."""

    def __init__(self, n_vars: int):
        self.n = n_vars
        self.rows: list[np.ndarray] = []
        self.rhs: list[float] = []
        self.labels: list[str] = []

    def add(self, label: str, rhs: float, **coef: float) -> None:
        row = np.zeros(self.n)
        for idx, c in coef.items():
            row[int(idx)] = c
        self.rows.append(row)
        self.rhs.append(float(rhs))
        self.labels.append(label)

    def add_vec(self, label: str, row: np.ndarray, rhs: float) -> None:
        self.rows.append(np.asarray(row, dtype=float))
        self.rhs.append(float(rhs))
        self.labels.append(label)

    def build(self) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
        g = np.stack(self.rows) if self.rows else np.zeros((0, self.n))
        return g, np.array(self.rhs), tuple(self.labels)


def _common_rows(rows: _Rows, plants: Sequence[PvPlant], mpp: np.ndarray,
                 n_facets: int) -> None:
    """Setpoint box, capability polygon and power-factor cone per plant."""
    j_count = len(plants)
    for j, plant in enumerate(plants):
        pj, qj = j, j_count + j
        rows.add(f"mpp[{plant.bus}]", mpp[j], **{str(pj): 1.0})
        rows.add(f"pmin[{plant.bus}]", 0.0, **{str(pj): -1.0})
        cp, cq, rhs = _facet_rows(n_facets, plant.s_max)
        for m in range(n_facets):
            rows.add(f"cap[{plant.bus},{m}]", rhs[m],
                     **{str(pj): cp[m], str(qj): cq[m]})
        z = plant.zeta
        rows.add(f"pf+[{plant.bus}]", 0.0, **{str(qj): 1.0, str(pj): -z})
        rows.add(f"pf-[{plant.bus}]", 0.0, **{str(qj): -1.0, str(pj): -z})


def _objective(plants: Sequence[PvPlant], mpp: np.ndarray, n_vars: int,
               weights: tuple[float, float]) -> tuple[np.ndarray, np.ndarray, float]:
    wp, wq = weights
    if wp <= 0 or wq < 0:
        raise ConfigError("objective weights must be wp > 0, wq >= 0")
    j_count = len(plants)
    hd = np.zeros(n_vars)
    f = np.zeros(n_vars)
    hd[:j_count] = 2.0 * wp
    hd[j_count:2 * j_count] = 2.0 * wq
    f[:j_count] = -2.0 * wp * mpp
    return hd, f, float(wp * mpp @ mpp)


def _check_inputs(plants, vset: VoltageConstraintSet, mpp, prev_p, prev_q):
    j_count = len(plants)
    mpp = np.asarray(mpp, dtype=float)
    prev_p = np.asarray(prev_p, dtype=float)
    prev_q = np.asarray(prev_q, dtype=float)
    if mpp.shape != (j_count,) or prev_p.shape != (j_count,) or \
            prev_q.shape != (j_count,):
        raise ConfigError("mpp/prev_p/prev_q must have one entry per plant")
    if np.any(mpp < 0):
        raise ConfigError("MPP availability must be >= 0")
    if vset.n_nodes and vset.kp.shape[1] != j_count:
        raise ConfigError("constraint set has wrong plant column count "
                          f"({vset.kp.shape[1]} for {j_count} plants)")
    return mpp, prev_p, prev_q


def _voltage_budget(vset: VoltageConstraintSet, prev_p: np.ndarray,
                    prev_q: np.ndarray, i: int) -> tuple[float, float]:
    """rhs of the upper/lower voltage row before protection terms."""
    shift = float(vset.kp[i] @ prev_p + vset.kq[i] @ prev_q)
    upper = vset.v_max - vset.v_prev[i] + shift
    lower = -(vset.v_min - vset.v_prev[i] + shift)
    return upper, lower


def build_nonrobust(plants: Sequence[PvPlant], vset: VoltageConstraintSet,
                    mpp: Sequence[float], prev_p: Sequence[float],
                    prev_q: Sequence[float], *,
                    weights: tuple[float, float] = (1.0, 1.0),
                    n_facets: int = 16) -> QpProblem:
    """Curtailment-minimizing dispatch with point-estimate voltage rows."""
    mpp, prev_p, prev_q = _check_inputs(plants, vset, mpp, prev_p, prev_q)
    j_count = len(plants)
    n = 2 * j_count
    rows = _Rows(n)
    _common_rows(rows, plants, mpp, n_facets)
    for i, node in enumerate(vset.node_ids):
        upper, lower = _voltage_budget(vset, prev_p, prev_q, i)
        row = np.concatenate([vset.kp[i], vset.kq[i]])
        rows.add_vec(f"vmax[{node}]", row, upper)
        rows.add_vec(f"vmin[{node}]", -row, lower)
    g, h, labels = rows.build()
    hd, f, const = _objective(plants, mpp, n, weights)
    names = tuple(f"P[{p.bus}]" for p in plants) + \
        tuple(f"Q[{p.bus}]" for p in plants)
    return QpProblem(hd, f, g, h, names, labels, const, j_count)


def build_robust(plants: Sequence[PvPlant], vset: VoltageConstraintSet,
                 mpp: Sequence[float], prev_p: Sequence[float],
                 prev_q: Sequence[float], *,
                 weights: tuple[float, float] = (1.0, 1.0),
                 n_facets: int = 16,
                 linking: str = "sum",
                 aux_bound: float = AUX_BOUND) -> QpProblem:
    """Interval-robust dispatch.

    Per constrained node i the voltage rows are tightened by the
    protection z_i*omega_i + sum_j g_ij, with linking rows tying (z, g)
    to the deviation envelopes y. linking="sum" (default) makes
    z_i + g_ij cover the plant's combined P and Q half-width products,
    which is what grouping both coefficients of a plant into one budget
    unit requires; "max" keeps two separate rows per plant (covers only
    the larger product), and "literal" additionally pairs the reactive
    half-width with the active envelope, reproducing a printed variant
    of the formulation. Sum is the only mode that protects every vertex
    of the coefficient box at full budget.
    """
    if linking not in ("sum", "max", "literal"):
        raise ConfigError(f"unknown linking mode {linking!r}")
    if vset.n_nodes and (vset.dkp is None or vset.dkq is None):
        raise ConfigError("robust dispatch needs dkp/dkq half-widths")
    mpp, prev_p, prev_q = _check_inputs(plants, vset, mpp, prev_p, prev_q)
    j_count = len(plants)
    n_nodes = vset.n_nodes
    omega = vset.budget(j_count)

    # variable layout: P | Q | y_p | y_q | z | g (g row-major by node)
    off_yp = 2 * j_count
    off_yq = off_yp + j_count
    off_z = off_yq + j_count
    off_g = off_z + n_nodes
    n = off_g + n_nodes * j_count
    rows = _Rows(n)
    _common_rows(rows, plants, mpp, n_facets)

    for j, plant in enumerate(plants):
        pj, qj, ypj, yqj = j, j_count + j, off_yp + j, off_yq + j
        rows.add(f"env_p+[{plant.bus}]", prev_p[j], **{str(pj): 1.0, str(ypj): -1.0})
        rows.add(f"env_p-[{plant.bus}]", -prev_p[j], **{str(pj): -1.0, str(ypj): -1.0})
        rows.add(f"env_q+[{plant.bus}]", prev_q[j], **{str(qj): 1.0, str(yqj): -1.0})
        rows.add(f"env_q-[{plant.bus}]", -prev_q[j], **{str(qj): -1.0, str(yqj): -1.0})
        rows.add(f"ycap_p[{plant.bus}]", aux_bound, **{str(ypj): 1.0})
        rows.add(f"ycap_q[{plant.bus}]", aux_bound, **{str(yqj): 1.0})

    for i, node in enumerate(vset.node_ids):
        zi = off_z + i
        upper, lower = _voltage_budget(vset, prev_p, prev_q, i)
        base = np.zeros(n)
        base[:j_count] = vset.kp[i]
        base[j_count:2 * j_count] = vset.kq[i]
        prot = np.zeros(n)
        prot[zi] = omega[i]
        prot[off_g + i * j_count: off_g + (i + 1) * j_count] = 1.0
        rows.add_vec(f"vmax[{node}]", base + prot, upper)
        rows.add_vec(f"vmin[{node}]", -base + prot, lower)
        rows.add(f"zpos[{node}]", 0.0, **{str(zi): -1.0})
        rows.add(f"zcap[{node}]", aux_bound, **{str(zi): 1.0})
        for j, plant in enumerate(plants):
            gij = off_g + i * j_count + j
            ypj, yqj = off_yp + j, off_yq + j
            rows.add(f"gpos[{node},{plant.bus}]", 0.0, **{str(gij): -1.0})
            rows.add(f"gcap[{node},{plant.bus}]", aux_bound, **{str(gij): 1.0})
            if linking == "sum":
                rows.add(f"link[{node},{plant.bus}]", 0.0,
                         **{str(zi): -1.0, str(gij): -1.0,
                            str(ypj): vset.dkp[i, j], str(yqj): vset.dkq[i, j]})
            else:
                y_for_q = ypj if linking == "literal" else yqj
                rows.add(f"linkP[{node},{plant.bus}]", 0.0,
                         **{str(zi): -1.0, str(gij): -1.0,
                            str(ypj): vset.dkp[i, j]})
                rows.add(f"linkQ[{node},{plant.bus}]", 0.0,
                         **{str(zi): -1.0, str(gij): -1.0,
                            str(y_for_q): vset.dkq[i, j]})

    g, h, labels = rows.build()
    hd, f, const = _objective(plants, mpp, n, weights)
    hd[2 * j_count:] = AUX_RIDGE
    names = tuple(f"P[{p.bus}]" for p in plants) + \
        tuple(f"Q[{p.bus}]" for p in plants) + \
        tuple(f"yp[{p.bus}]" for p in plants) + \
        tuple(f"yq[{p.bus}]" for p in plants) + \
        tuple(f"z[{i}]" for i in vset.node_ids) + \
        tuple(f"g[{i},{p.bus}]" for i in vset.node_ids for p in plants)
    return QpProblem(hd, f, g, h, names, labels, const, j_count)


def _diagnose_infeasible(qp: QpProblem) -> InfeasibleError:
    """Elastic LP: minimal total violation and the worst offending row."""
    m, n = qp.G.shape
    # variables [x, s]: G x - s <= h, s >= 0, min sum(s)
    a_ub = np.hstack([qp.G, -np.eye(m)])
    c = np.concatenate([np.zeros(n), np.ones(m)])
    bounds = [(None, None)] * n + [(0, None)] * m
    res = linprog(c, A_ub=a_ub, b_ub=qp.h, bounds=bounds, method="highs")
    if not res.success:
        return InfeasibleError("dispatch problem infeasible "
                               "(elastic diagnosis also failed)")
    s = res.x[n:]
    worst = int(np.argmax(s))
    return InfeasibleError(
        f"dispatch problem infeasible: row {qp.row_labels[worst]} "
        f"violated by {s[worst]:.3e} (total violation {res.fun:.3e})",
        worst_row=qp.row_labels[worst], violation=float(s[worst]))


def _polish(qp: QpProblem, x_ipm: np.ndarray, z_ipm: np.ndarray,
            tol: float = 1e-7) -> tuple[np.ndarray, np.ndarray] | None:
    """Re-solve on the active set; returns (x, duals) or None if not clean.

    Deterministic: the active set is seeded from slacks/duals of the IPM
    point, then refined one row at a time -- the most negative
    multiplier is dropped, or the most violated row is added -- until
    the KKT point is primal feasible with nonnegative multipliers.
    """
    slack = qp.h - qp.G @ x_ipm
    active = np.where((slack <= tol) | (z_ipm >= tol))[0]
    hmat = np.diag(qp.hess_diag)
    for _ in range(2 * len(qp.h) + 10):
        ga = qp.G[active]
        k = len(active)
        kkt = np.block([[hmat, ga.T], [ga, np.zeros((k, k))]])
        rhs = np.concatenate([-qp.f, qp.h[active]])
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        x, nu = sol[:qp.n_vars], sol[qp.n_vars:]
        if k and np.min(nu) < -1e-9:
            active = np.delete(active, int(np.argmin(nu)))
            continue
        resid = qp.G @ x - qp.h
        worst = int(np.argmax(resid))
        if float(resid[worst]) > 1e-8:
            if worst in active:
                return None
            active = np.sort(np.append(active, worst))
            continue
        stat = qp.hess_diag * x + qp.f + (ga.T @ nu if k else 0.0)
        if np.linalg.norm(stat, np.inf) <= 1e-7:
            duals = np.zeros(len(qp.h))
            duals[active] = np.maximum(nu, 0.0)
            return x, duals
        return None
    return None


def solve_qp(qp: QpProblem) -> ControlDecision:
    """Interior-point solve + deterministic polish.

    Raises InfeasibleError (with the worst row from an elastic LP) when
    the constraint system has no solution, NumericalError when the
    solver fails on a feasible problem.
    """
    if np.any(qp.hess_diag < 0):
        raise ConfigError("QP Hessian must be PSD (nonnegative diagonal)")
    if qp.G.shape[0] == 0:
        # unconstrained separable minimum
        x = np.where(qp.hess_diag > 0, -qp.f / np.where(qp.hess_diag > 0,
                                                        qp.hess_diag, 1.0), 0.0)
        j = qp.n_plants
        return ControlDecision(_plant_buses(qp), x[:j].copy(),
                               x[j:2 * j].copy(), qp.objective(x), "optimal",
                               (), x, 0)
    args = (_cvx_matrix(np.diag(qp.hess_diag)),
            _cvx_matrix(qp.f.reshape(-1, 1)),
            _cvx_matrix(qp.G), _cvx_matrix(qp.h.reshape(-1, 1)))
    sol = None
    last_exc: Exception | None = None
    for opts in (_IPM_OPTIONS,) + _IPM_FALLBACKS:
        try:
            sol = _cvx_solvers.qp(*args, kktsolver="ldl", options=dict(opts))
            break
        except (ValueError, ArithmeticError) as exc:
            last_exc = exc
    if sol is None:
        raise NumericalError(f"interior-point solve failed: {last_exc}") \
            from last_exc
    status = sol["status"]
    if status != "optimal":
        err = _diagnose_infeasible(qp)
        if err.violation is None or err.violation > 1e-9:
            raise err
        raise NumericalError(
            f"interior-point solve ended with status {status!r} "
            "on a feasible problem")
    x = np.array(sol["x"]).ravel()
    z = np.array(sol["z"]).ravel()
    polished = _polish(qp, x, z)
    status_out = "optimal"
    if polished is not None:
        x_pol, z_pol = polished
        if qp.objective(x_pol) <= qp.objective(x) + 1e-9 * (1.0 + abs(qp.objective(x))):
            x, z = x_pol, z_pol
            status_out = "polished"
    j = qp.n_plants
    active = tuple(qp.row_labels[i] for i in
                   np.where(qp.h - qp.G @ x <= 1e-7)[0])
    return ControlDecision(_plant_buses(qp), x[:j].copy(), x[j:2 * j].copy(),
                           qp.objective(x), status_out, active, x,
                           int(sol["iterations"]))


def _plant_buses(qp: QpProblem) -> tuple[int, ...]:
    buses = []
    for name in qp.var_names[:qp.n_plants]:
        buses.append(int(name[2:-1]))
    return tuple(buses)


def apply_decision(decision: ControlDecision, profile_p: np.ndarray,
                   profile_q: np.ndarray, plant_cols: Sequence[int],
                   mpp_now: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Inject setpoints into a profile row for the next load flow.

    Active power is additionally capped by the availability at the
    application instant, so a setpoint above the (possibly moved) MPP
    yields MPP, never more.
    """
    p = np.asarray(profile_p, dtype=float).copy()
    q = np.asarray(profile_q, dtype=float).copy()
    for j, col in enumerate(plant_cols):
        p[col] = min(float(decision.p_set[j]), float(mpp_now[j]))
        q[col] = float(decision.q_set[j])
    return p, q
