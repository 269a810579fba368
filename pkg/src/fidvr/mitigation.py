"""Linearized recovery-time sensitivities and the minimal-control LP.

Controls are per-area A/C disconnection (kW of A/C base) and per-area PV
reactive injection (kvar). Their effect on each area's load-point voltage
comes from the power-flow Jacobian of a reduced feeder in which every area
is lumped at one bus behind its equivalent feeder impedance; the voltage
change maps to recovery time through the derivatives of the closed-form
relay times.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from fidvr import dynamics as dyn
from fidvr import monitor, simplex
from fidvr.grid import Branch, Bus, FeederNetwork, SingularJacobianError, compute_jacobian, solve_power_flow
from fidvr.simulation import ControlAction, run_simulation

log = logging.getLogger(__name__)

AREA_BUS_OFFSET = 9000
AC, PV = "ac_disconnect", "pv_q_inject"


@dataclass(frozen=True)
class ControlVariable:
    area: str
    kind: str
    u_max: float
    cost: float
    u_min: float = 0.0

    def __post_init__(self):
        if self.kind not in (AC, PV):
            raise ValueError(f"unknown control kind {self.kind!r}")
        if not 0.0 == self.u_min <= self.u_max:
            raise ValueError("bounds must satisfy 0 = u_min <= u_max")

    @property
    def unit(self) -> str:
        return "kW" if self.kind == AC else "kvar"


@dataclass(frozen=True)
class SensitivityModel:
    areas: tuple
    controls: tuple
    d_t1_v: np.ndarray
    d_t2_v: np.ndarray
    s_v_u: np.ndarray
    a: np.ndarray


@dataclass
class MitigationPlan:
    controls: tuple
    amounts: np.ndarray
    predicted_dt: dict
    objective: float
    status: str
    required_dt: dict
    max_achievable_dt: dict = field(default_factory=dict)

    def ac_kw(self) -> float:
        return float(sum(u for c, u in zip(self.controls, self.amounts) if c.kind == AC))

    def by_kind(self, kind) -> dict:
        return {c.area: float(u) for c, u in zip(self.controls, self.amounts) if c.kind == kind}

    def to_dict(self) -> dict:
        return {
            "lp_status": self.status,
            "objective": self.objective,
            "required_dt_s": self.required_dt,
            "controls": [{"area": c.area, "kind": c.kind, "amount": float(u), "bound": c.u_max,
                          "cost": c.cost, "unit": c.unit} for c, u in zip(self.controls, self.amounts)],
            "plan": [{"area": c.area, "kind": c.kind, "amount": float(u)}
                     for c, u in zip(self.controls, self.amounts) if u > 1e-9],
            "predicted_dt": self.predicted_dt,
            "max_achievable_dt": self.max_achievable_dt,
        }


# --------------------------------------------------------------------------
# controls


def make_controls(submodels: dict, *, ac_cap_frac: float = 0.5, use_ac: bool = True, use_pv: bool = True,
                  c_ac: float = 1.0, c_pv: float = 0.01, areas=None) -> tuple:
    """A/C and PV-Q control per area with default bounds and costs."""
    out = []
    for aid in (areas if areas is not None else submodels):
        m = submodels[aid]
        if use_ac and m.ac_kw > 0:
            out.append(ControlVariable(aid, AC, ac_cap_frac * m.ac_kw, c_ac))
        if use_pv and m.f_pv > 0:
            out.append(ControlVariable(aid, PV, m.pv.q_max, c_pv))
    return tuple(out)


# --------------------------------------------------------------------------
# sensitivities


def compute_time_voltage_derivatives(v_l: dict, v_recovery: float, params: dict):
    """Analytic ``dt1/dV`` and ``dt2/dV`` per area; undefined areas are dropped."""
    d1, d2 = {}, {}
    for aid, v in v_l.items():
        try:
            a = monitor.dt1_dv(v, params[aid])
            b = monitor.dt2_dv(v, v_recovery, params[aid])
        except (monitor.NeverTripsError, monitor.NoRecoveryEstimateError) as exc:
            log.warning("area %s excluded from the sensitivity model: %s", aid, exc)
            continue
        d1[aid], d2[aid] = a, b
    return d1, d2


def build_reduced_network(net: FeederNetwork, submodels: dict) -> tuple[FeederNetwork, dict]:
    """Feeder plus one lumped bus per area hanging off its root through ``z_f``."""
    buses = list(net.buses)
    branches = list(net.branches)
    area_bus = {}
    for k, (aid, m) in enumerate(submodels.items()):
        bid = AREA_BUS_OFFSET + k
        root = next(b for b in net.buses if b.id == m.root)
        buses.append(Bus(bid, root.base_kv))
        z = m.feeder_z if abs(m.feeder_z) > 1e-9 else 1e-6 + 1e-6j
        branches.append(Branch(m.root, bid, z, m.feeder_b))
        area_bus[aid] = bid
    return FeederNetwork(buses, branches, net.source, net.base_mva), area_bus


def stalled_area_load(m, base_mva: float = 1.0):
    """(constant power, admittance) of a sub-model with all A/C stalled."""
    p = m.p_load_kw * 1e-3 / base_mva
    z = m.zip
    s = m.f_s * p * (1.0 + 1j * z.q_ratio) + m.f_el * p - m.f_pv * p
    y = 1j * z.q_sh0 * p + m.f_m1 * p / m.motor1.p_nom * m.motor1.y_stall
    if m.f_m3 > 0:
        m3 = m.motor3
        slip = dyn.motor3_equilibrium_slip(m3.loading, 1.0, m3.r_s, m3.x_ls, m3.x_m, m3.r_r, m3.x_lr)
        y += dyn.motor3_admittance(slip, m3.r_s, m3.x_ls, m3.x_m, m3.r_r, m3.x_lr) * m.f_m3 * p / m3.loading
    return s, y


def stalled_operating_point(net: FeederNetwork, submodels: dict):
    """Reduced network, its stalled-state solution and the admittance loads."""
    red, area_bus = build_reduced_network(net, submodels)
    s = np.zeros(red.n, complex)
    y = np.zeros(red.n, complex)
    for aid, m in submodels.items():
        k = red.index(area_bus[aid])
        s[k], y[k] = stalled_area_load(m, net.base_mva)
    v = solve_power_flow(red, s, y)
    return red, area_bus, v, y


def compute_voltage_control_sensitivities(net: FeederNetwork, v, y_load, area_bus: dict, submodels: dict,
                                          controls, rows) -> np.ndarray:
    """``d|V_L| / du`` for each row area and control, from one Jacobian factorization.

    A/C columns remove one kW of stalled A/C base (its P and Q at the
    stalled power factor); PV columns inject one kvar at the area bus.
    """
    n = net.n
    jac = compute_jacobian(net, v, y_load)
    try:
        lu = scipy.linalg.lu_factor(jac, check_finite=False)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularJacobianError(str(exc)) from None
    if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) < 1e-12:
        raise SingularJacobianError("power-flow Jacobian is singular at the stalled operating point")
    scale = 1e-3 / net.base_mva
    rhs = np.zeros((2 * n, len(controls)))
    for j, c in enumerate(controls):
        k = net.index(area_bus[c.area])
        if c.kind == AC:
            m1 = submodels[c.area].motor1
            vm2 = abs(v[k]) ** 2
            # 1 kW of A/C base removes y_stall * base of admittance load
            rhs[k, j] = vm2 * m1.g_stall * scale / m1.p_nom
            rhs[n + k, j] = vm2 * m1.b_stall * scale / m1.p_nom
        else:
            rhs[n + k, j] = scale
    dx = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
    idx = [n + net.index(area_bus[a]) for a in rows]
    return dx[idx, :]


def assemble_A(d_t1_v, d_t2_v, s_v_u, areas=(), controls=()) -> SensitivityModel:
    """``A = diag(dt1/dV + dt2/dV) S``; positive entries are clamped to zero."""
    d1 = np.asarray(d_t1_v, float).ravel()
    d2 = np.asarray(d_t2_v, float).ravel()
    s = np.atleast_2d(np.asarray(s_v_u, float))
    if d1.shape != d2.shape or s.shape[0] != d1.shape[0]:
        raise ValueError(f"dimension mismatch: derivatives {d1.shape}/{d2.shape}, sensitivities {s.shape}")
    a = (d1 + d2)[:, None] * s
    pos = a > 0
    if pos.any():
        log.warning("clamping %d positive sensitivity entries to zero (max %.3g)", int(pos.sum()), a[pos].max())
        a = np.where(pos, 0.0, a)
    return SensitivityModel(tuple(areas), tuple(controls), d1, d2, s, a)


def build_sensitivity_model(net: FeederNetwork, submodels: dict, v_l: dict, controls,
                            v_recovery: float = 0.95) -> SensitivityModel:
    d1, d2 = compute_time_voltage_derivatives(v_l, v_recovery, {a: submodels[a].motor1 for a in v_l})
    rows = tuple(a for a in v_l if a in d1)
    red, area_bus, v, y = stalled_operating_point(net, submodels)
    s = compute_voltage_control_sensitivities(red, v, y, area_bus, submodels, controls, rows)
    return assemble_A([d1[a] for a in rows], [d2[a] for a in rows], s, rows, controls)


# --------------------------------------------------------------------------
# LP


def predict_delta_t(model: SensitivityModel, u) -> dict:
    dt = model.a @ np.asarray(u, float)
    return {a: float(x) for a, x in zip(model.areas, dt)}


def solve_mitigation_lp(model: SensitivityModel, required_dt) -> MitigationPlan:
    """Cheapest controls with ``A u <= required_dt`` row-wise and bounds.

    ``required_dt`` is a scalar applied to every area or a per-area mapping
    of non-positive values. Infeasible problems return a plan with status
    ``infeasible`` and the most negative achievable change per area.
    """
    if np.isscalar(required_dt):
        req = {a: float(required_dt) for a in model.areas}
    else:
        req = {a: float(required_dt.get(a, 0.0)) for a in model.areas}
    if any(r > 0 for r in req.values()):
        raise ValueError("required recovery-time changes must be non-positive")
    controls = model.controls
    c = np.array([x.cost for x in controls], float)
    upper = np.array([x.u_max for x in controls], float)
    b = np.array([req[a] for a in model.areas])
    if len(controls) == 0 or all(r == 0 for r in req.values()):
        u = np.zeros(len(controls))
        status = simplex.OPTIMAL if all(r == 0 for r in req.values()) else simplex.INFEASIBLE
        res = simplex.LPResult(u, 0.0, status, 0)
    else:
        res = simplex.linprog(c, model.a, b, lower=np.zeros(len(c)), upper=upper)
    u = res.x if res.status == simplex.OPTIMAL else np.zeros(len(controls))
    plan = MitigationPlan(controls, u, predict_delta_t(model, u), float(c @ u) if len(c) else 0.0,
                          res.status, req, predict_delta_t(model, upper) if len(controls) else {})
    if res.status != simplex.OPTIMAL:
        log.warning("mitigation LP %s; max achievable change per area: %s", res.status, plan.max_achievable_dt)
    return plan


def required_change(t_estimate: float | None, t_criterion: float = 10.0) -> float:
    """Uniform requirement ``-(t_est - t_criterion)``, zero when already met."""
    if t_estimate is None or not math.isfinite(t_estimate):
        return 0.0
    return min(0.0, t_criterion - t_estimate)


# --------------------------------------------------------------------------
# actuation


def uniform_plan(controls, fraction: float, submodels: dict) -> np.ndarray:
    """Amounts for disconnecting ``fraction`` of every area's A/C and no PV-Q."""
    return np.array([fraction * submodels[c.area].ac_kw if c.kind == AC else 0.0 for c in controls])


def plan_to_action(controls, amounts, ac_kw: dict, t_apply: float, seed: int = 0) -> ControlAction:
    """Convert kW/kvar amounts into per-area A/C fractions and PV setpoints.

    ``ac_kw`` is the A/C base per area that the amounts were planned against
    (the sub-models' ``F_m1 * P_load``).
    """
    frac, q = {}, {}
    for c, u in zip(controls, amounts):
        if u <= 0:
            continue
        if c.kind == AC:
            if ac_kw.get(c.area, 0.0) <= 0:
                log.warning("area %s has no A/C to disconnect", c.area)
                continue
            f = u / ac_kw[c.area]
            if f > 1.0:
                log.warning("area %s: plan asks for %.1f%% of A/C, capped at 100%%", c.area, 100 * f)
                f = 1.0
            frac[c.area] = frac.get(c.area, 0.0) + f
        else:
            q[c.area] = q.get(c.area, 0.0) + float(u)
    return ControlAction(t_apply, frac, q, seed)


def apply_control_plan(plan: MitigationPlan, net, areas, scenario, cfg, t_detect: float, delay: float = 1.5,
                       seed: int | None = None, ac_kw: dict | None = None):
    """Re-simulate with the plan applied ``delay`` seconds after detection.

    ``ac_kw`` defaults to the detailed areas' A/C base.
    """
    basis = {a.id: a.ac_kw for a in areas} if ac_kw is None else ac_kw
    action = plan_to_action(plan.controls, plan.amounts, basis, t_detect + delay,
                            cfg.seed if seed is None else seed)
    return run_simulation(net, areas, scenario, cfg, action)


def shed_kw(action: ControlAction, areas) -> float:
    """A/C kW the plant actually loses under ``action``."""
    return float(sum(action.ac_fraction.get(a.id, 0.0) * a.ac_kw for a in areas))


def area_requirements(estimates: dict, t_criterion: float = 10.0) -> dict:
    """Per-area ``min(0, t_criterion - t_total)``: every area must meet the criterion."""
    return {a: required_change(t, t_criterion) for a, t in estimates.items()}


def mitigate(report: dict, net: FeederNetwork, submodels: dict, *, t_criterion: float = 10.0,
             v_recovery: float = 0.95, use_pv: bool = True, use_ac: bool = True,
             ac_cap_frac: float = 0.5, c_ac: float = 1.0, c_pv: float = 0.01):
    """Monitor report in; ``(plan document, MitigationPlan)`` out."""
    if report.get("event") is None:
        raise ValueError("monitor report contains no event")
    t_est = report.get("t_total")
    est = {a: e["t_total"] for a, e in report.get("estimates", {}).items() if a in submodels}
    req = area_requirements(est, t_criterion)
    v_l = {a: v for a, v in report.get("v_l", {}).items() if a in est}
    controls = make_controls(submodels, ac_cap_frac=ac_cap_frac, use_pv=use_pv, use_ac=use_ac, c_ac=c_ac,
                             c_pv=c_pv)
    if all(r == 0.0 for r in req.values()):
        plan = MitigationPlan(controls, np.zeros(len(controls)), {a: 0.0 for a in v_l}, 0.0, simplex.OPTIMAL,
                              req)
    else:
        model = build_sensitivity_model(net, submodels, v_l, controls, v_recovery)
        plan = solve_mitigation_lp(model, {a: req[a] for a in model.areas})
    out = plan.to_dict()
    out["required_dt_total_s"] = required_change(t_est, t_criterion)
    out["t_estimate_s"] = t_est
    out["t_criterion_s"] = t_criterion
    return out, plan
