"""Closed-loop scenario suite: simulate, monitor, mitigate, re-simulate."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from fidvr import mitigation as mit
from fidvr import monitor, schemas
from fidvr.simulation import FaultScenario, SimConfig, emit_mupmu_stream, run_simulation

log = logging.getLogger(__name__)


def fault_from_dict(f: dict) -> FaultScenario:
    return FaultScenario(int(f["bus"]), float(f["start_s"]), float(f["duration_s"]),
                         complex(f["g_shunt_pu"], -f["b_shunt_pu"]))


def sim_config(d: dict | None, seed: int | None = None) -> SimConfig:
    d = d or {}
    cfg = SimConfig(dt=d.get("dt_s", 0.005), horizon=d.get("horizon_s", 25.0), seed=d.get("seed", 0),
                    report_hz=d.get("report_hz", 100.0))
    return cfg if seed is None else replace(cfg, seed=seed)


@dataclass
class Context:
    """Everything a suite run needs besides the suite document."""

    net: object
    areas: list
    submodels: dict
    cfg: SimConfig = field(default_factory=SimConfig)
    monitor_cfg: monitor.MonitorConfig = field(default_factory=monitor.MonitorConfig)


def monitored_run(ctx: Context, scenario, control=None):
    res = run_simulation(ctx.net, ctx.areas, scenario, ctx.cfg, control)
    rep = monitor.monitor_report(emit_mupmu_stream(res), ctx.submodels, ctx.monitor_cfg)
    return res, rep


def scenario_row(ctx: Context, name: str, scenario) -> dict:
    res, rep = monitored_run(ctx, scenario)
    act = res.recovery_time()
    est = rep["t_total"]
    row = {"name": name, "actual_t_total_s": act, "estimated_t_total_s": est, "event": rep["event"] is not None,
           "collapsed": res.collapsed}
    if est is not None and math.isfinite(act) and act > 0:
        row["abs_error_pct"] = abs(est - act) / act * 100.0
    else:
        row["abs_error_pct"] = None
    return row


@dataclass
class ControlBaseline:
    """Uncontrolled run of the control scenario and its linear model."""

    result: object
    report: dict
    estimates: dict
    t_detect: float

    @property
    def t_actual(self) -> float:
        return self.result.recovery_time()

    @property
    def t_est_max(self) -> float:
        return max(self.estimates.values())


def control_baseline(ctx: Context, scenario) -> ControlBaseline:
    res, rep = monitored_run(ctx, scenario)
    if rep["event"] is None:
        raise RuntimeError("control scenario produced no FIDVR event")
    est = {a: v["t_total"] for a, v in rep["estimates"].items()}
    return ControlBaseline(res, rep, est, rep["event"]["t_detect"])


def predicted_total_change(base: ControlBaseline, predicted: dict) -> float:
    """Change of the slowest area's estimate under per-area predicted changes."""
    return max(base.estimates[a] + predicted.get(a, 0.0) for a in base.estimates) - base.t_est_max


def per_area_requirement(base: ControlBaseline, dt_total: float) -> dict:
    """Every area must finish by ``t_est_max + dt_total``."""
    target = base.t_est_max + dt_total
    return {a: min(0.0, target - t) for a, t in base.estimates.items()}


def evaluate_plan(ctx: Context, base: ControlBaseline, scenario, controls, amounts, model, delay, seed):
    plan = mit.MitigationPlan(tuple(controls), np.asarray(amounts, float), mit.predict_delta_t(model, amounts),
                              0.0, "given", {})
    basis = {a: m.ac_kw for a, m in ctx.submodels.items()}
    res = mit.apply_control_plan(plan, ctx.net, ctx.areas, scenario, ctx.cfg, base.t_detect, delay, seed, basis)
    t = res.recovery_time()
    return {
        "shed_kw": mit.shed_kw(res.control, ctx.areas),
        "pv_kvar": float(sum(plan.by_kind(mit.PV).values())),
        "predicted_dt_s": predicted_total_change(base, plan.predicted_dt),
        "resimulated_dt_s": t - base.t_actual if math.isfinite(t) else math.inf,
        "resimulated_t_total_s": t,
        "plan": {f"{c.area}:{c.kind}": float(u) for c, u in zip(controls, amounts) if u > 0},
    }, res


def match_lp(ctx, base, scenario, model, target_dt, delay, seed, iters=10):
    """Smallest LP requirement whose re-simulated change reaches ``target_dt``.

    Bisection on the uniform target offset; the linear model only ranks the
    controls, the plant decides whether the requirement is met.
    """
    lo, hi = target_dt * 0.25, target_dt * 1.75  # lo: too weak, hi: strong enough
    best = None
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        plan = mit.solve_mitigation_lp(model, per_area_requirement(base, mid))
        if plan.status != "optimal":
            hi = mid
            continue
        row, res = evaluate_plan(ctx, base, scenario, model.controls, plan.amounts, model, delay, seed)
        if row["resimulated_dt_s"] <= target_dt + 1e-9:
            best = (row, res, mid)
            hi = mid
        else:
            lo = mid
        if abs(hi - lo) < 0.01:
            break
    return best


def run_suite(suite: dict, ctx: Context, plot_rate: float = 10.0) -> dict:
    """Table-shaped report plus per-case voltage traces for plotting."""
    schemas.validate(suite, "suite")
    delay = suite.get("delay_s", 1.5)
    crit = suite.get("criterion", {})
    report = {"scenarios": [], "control": [], "criterion": crit, "plots": {}}
    for sc in suite.get("scenarios", []):
        name = sc.get("name") or f"bus{sc['fault']['bus']}_{sc['fault']['duration_s'] * 1e3:.0f}ms"
        try:
            report["scenarios"].append(scenario_row(ctx, name, fault_from_dict(sc["fault"])))
        except Exception as exc:  # noqa: BLE001 - per-case failure is recorded, suite continues
            log.error("scenario %s failed: %s", name, exc)
            report["scenarios"].append({"name": name, "error": str(exc)})
    cases = suite.get("control_cases", [])
    if not cases or "control_scenario" not in suite:
        return report
    scenario = fault_from_dict(suite["control_scenario"])
    base = control_baseline(ctx, scenario)
    report["control_baseline"] = {"actual_t_total_s": base.t_actual, "estimated_t_total_s": base.t_est_max,
                                  "t_detect_s": base.t_detect}
    report["plots"]["uncontrolled"] = _trace(base.result, plot_rate)
    models = {}
    uniform_dt = {}

    def model_for(use_pv):
        if use_pv not in models:
            controls = mit.make_controls(ctx.submodels, use_pv=use_pv)
            models[use_pv] = mit.build_sensitivity_model(ctx.net, ctx.submodels, base.report["v_l"], controls,
                                                         ctx.monitor_cfg.v_recovery)
        return models[use_pv]

    for case in cases:
        kind = case["kind"]
        row = {"name": case["name"], "kind": kind}
        try:
            model = model_for(case.get("use_pv", kind == "pv_q"))
            controls = model.controls
            if kind == "uniform":
                u = mit.uniform_plan(controls, case["fraction"], ctx.submodels)
            elif kind == "area":
                u = np.array([case["fraction"] * ctx.submodels[c.area].ac_kw
                              if c.kind == mit.AC and c.area == case["area"] else 0.0 for c in controls])
            elif kind == "pv_q":
                u = np.array([c.u_max if c.kind == mit.PV else 0.0 for c in controls])
                if "fraction" in case:
                    u += mit.uniform_plan(controls, case["fraction"], ctx.submodels)
            else:
                if "match_uniform" in case:
                    f = case["match_uniform"]
                    if f not in uniform_dt:
                        m0 = model_for(False)
                        uniform_dt[f] = evaluate_plan(ctx, base, scenario, m0.controls,
                                                      mit.uniform_plan(m0.controls, f, ctx.submodels), m0,
                                                      delay, ctx.cfg.seed)[0]["resimulated_dt_s"]
                    found = match_lp(ctx, base, scenario, model, uniform_dt[f], delay, ctx.cfg.seed)
                    if found is None:
                        raise RuntimeError(f"no LP plan reaches the uniform {f:.0%} change")
                    r, res, req = found
                    row.update(r, required_dt_s=req, matched_dt_s=uniform_dt[f])
                    report["control"].append(row)
                    report["plots"][case["name"]] = _trace(res, plot_rate)
                    continue
                req = case.get("required_dt_s")
                if req is None:
                    req = mit.required_change(base.t_est_max, crit.get("t_max_s", 10.0))
                plan = mit.solve_mitigation_lp(model, per_area_requirement(base, req))
                row["lp_status"] = plan.status
                row["required_dt_s"] = req
                if plan.status != "optimal":
                    row["max_achievable_dt"] = plan.max_achievable_dt
                    report["control"].append(row)
                    continue
                u = plan.amounts
            r, res = evaluate_plan(ctx, base, scenario, controls, u, model, delay, ctx.cfg.seed)
            row.update(r)
            report["plots"][case["name"]] = _trace(res, plot_rate)
        except Exception as exc:  # noqa: BLE001
            log.error("control case %s failed: %s", case["name"], exc)
            row["error"] = str(exc)
        report["control"].append(row)
    return report


def _trace(res, rate):
    step = max(1, int(round(1.0 / (rate * res.config.dt))))
    roots = sorted(set(res.area_roots), key=res.area_roots.index)
    return {"t": res.t[::step].tolist(),
            "v": {str(r): np.abs(res.bus(r)[::step]).tolist() for r in roots}}
