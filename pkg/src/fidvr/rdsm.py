"""Reduced distribution system model: one aggregate sub-model per load area.

A sub-model is an equivalent feeder impedance in front of a composite load
(ZIP static, electronic, lumped 3-phase motor, A/C with stall and thermal
relay, PV). Its parameters are fitted by replaying recorded root voltages
through it and matching the recorded root P/Q.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numba
import numpy as np

from fidvr import dynamics as dyn
from fidvr import schemas
from fidvr.simulation import FaultScenario, Plant, SimConfig, run_simulation

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class FitFailedError(RuntimeError):
    """Fit did not beat the static-load baseline or stall parameters are unidentifiable."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class SubModelParameters:
    """Aggregate parameters of one area; fractions are shares of ``p_load_kw``.

    The electronic share is whatever the other demand fractions leave.
    """

    root: int
    p_load_kw: float
    f_s: float
    f_m1: float
    f_m3: float
    f_pv: float = 0.0
    feeder_z: complex = 0j
    feeder_b: float = 0.0
    n_r: float = 1.0
    zip: dyn.ZipParameters = field(default_factory=dyn.ZipParameters)
    motor3: dyn.Motor3PhaseParameters = field(default_factory=dyn.Motor3PhaseParameters)
    motor1: dyn.Motor1PhaseParameters = field(default_factory=dyn.Motor1PhaseParameters)
    q_max_frac: float = 0.44

    def __post_init__(self):
        for name in ("f_s", "f_m1", "f_m3", "f_pv"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.f_s + self.f_m1 + self.f_m3 > 1.0 + 1e-9:
            raise ValueError("F_s + F_m1 + F_m3 exceeds 1")

    @property
    def f_el(self) -> float:
        return max(0.0, 1.0 - self.f_s - self.f_m1 - self.f_m3)

    @property
    def pv(self) -> dyn.PvParameters:
        return dyn.PvParameters.sized_for(self.f_pv * self.p_load_kw, self.q_max_frac)

    @property
    def ac_kw(self) -> float:
        return self.f_m1 * self.p_load_kw

    def to_dict(self) -> dict:
        pv = self.pv
        return {
            "root": self.root,
            "p_load_kw": self.p_load_kw,
            "f_s": self.f_s, "f_m1": self.f_m1, "f_m3": self.f_m3, "f_el": self.f_el, "f_pv": self.f_pv,
            "feeder": {"r_pu": self.feeder_z.real, "x_pu": self.feeder_z.imag, "b_pu": self.feeder_b,
                       "n_r": self.n_r},
            "zip": asdict(self.zip),
            "motor3": {k: v for k, v in asdict(self.motor3).items() if v is not None},
            "motor1": asdict(self.motor1),
            "pv": {"p_pv": pv.p_pv, "s_rating": pv.s_rating, "q_max_frac": pv.q_max_frac},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubModelParameters":
        fd = d["feeder"]
        return cls(
            root=int(d["root"]), p_load_kw=float(d["p_load_kw"]),
            f_s=d["f_s"], f_m1=d["f_m1"], f_m3=d["f_m3"], f_pv=d.get("f_pv", 0.0),
            feeder_z=complex(fd["r_pu"], fd["x_pu"]), feeder_b=fd.get("b_pu", 0.0), n_r=fd.get("n_r", 1.0),
            zip=dyn.ZipParameters(**d.get("zip", {})),
            motor3=dyn.Motor3PhaseParameters(**d.get("motor3", {})),
            motor1=dyn.Motor1PhaseParameters(**d["motor1"]),
            q_max_frac=d.get("pv", {}).get("q_max_frac", 0.44),
        )


def save_submodels(models: dict, path, provenance: dict | None = None) -> None:
    doc = {"format_version": FORMAT_VERSION,
           "areas": {a: m.to_dict() for a, m in models.items()},
           "provenance": provenance or {}}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_submodels(path) -> dict:
    data = json.loads(Path(path).read_text())
    schemas.validate(data, "submodels")
    return {a: SubModelParameters.from_dict(d) for a, d in data["areas"].items()}


# --------------------------------------------------------------------------
# playback kernel

# layout of the packed parameter vector
_P = {name: k for k, name in enumerate((
    "z_r", "z_x", "b_f", "p_load", "f_s", "f_el", "f_m1", "f_m3", "f_pv",
    "pz0", "pi0", "pp0", "qz0", "qi0", "qp0", "qsh0", "qratio",
    "v_stall", "t_stall", "g_stall", "b_stall", "t_th", "th1", "th2", "p_nom", "q_nom",
    "r_s", "x_ls", "x_m", "r_r", "x_lr", "h", "exp", "loading", "v_break",
))}


def pack(m: SubModelParameters, base_mva: float = 1.0, v_break: float = 0.5) -> np.ndarray:
    z, m1, m3 = m.zip, m.motor1, m.motor3
    g = m1.y_stall
    vals = {
        "z_r": m.feeder_z.real, "z_x": m.feeder_z.imag, "b_f": m.feeder_b,
        "p_load": m.p_load_kw * 1e-3 / base_mva, "f_s": m.f_s, "f_el": m.f_el, "f_m1": m.f_m1,
        "f_m3": m.f_m3, "f_pv": m.f_pv,
        "pz0": z.p_z0, "pi0": z.p_i0, "pp0": z.p_p0, "qz0": z.q_z0, "qi0": z.q_i0, "qp0": z.q_p0,
        "qsh0": z.q_sh0, "qratio": z.q_ratio,
        "v_stall": m1.v_stall, "t_stall": m1.t_stall, "g_stall": g.real, "b_stall": -g.imag,
        "t_th": m1.t_th, "th1": m1.theta1, "th2": m1.theta2, "p_nom": m1.p_nom, "q_nom": m1.q_nom,
        "r_s": m3.r_s, "x_ls": m3.x_ls, "x_m": m3.x_m, "r_r": m3.r_r, "x_lr": m3.x_lr, "h": m3.h,
        "exp": m3.load_torque_exponent, "loading": m3.loading, "v_break": v_break,
    }
    out = np.empty(len(_P))
    for k, i in _P.items():
        out[i] = vals[k]
    return out


@numba.njit(cache=True)
def _break_scale(vm, v_break):
    if vm < v_break:
        return (vm / v_break) ** 2
    return 1.0


@numba.njit(cache=True)
def _playback(vr, dt, p, q_pv):
    n = vr.shape[0]
    zf = p[0] + 1j * p[1]
    bf = p[2]
    pl = p[3]
    ps = p[4] * pl
    qs = ps * p[16]
    s_z = ps * p[9] + 1j * qs * p[12]
    s_i = ps * p[10] + 1j * qs * p[13]
    s_p = ps * p[11] + 1j * qs * p[14] + p[5] * pl
    y_sh = 1j * p[15] * pl
    pv_p = p[8] * pl
    v_stall, t_stall, gs, bs, t_th, th1, th2 = p[17], p[18], p[19], p[20], p[21], p[22], p[23]
    ac_base = p[6] * pl / p[24]
    s_run = (p[24] + 1j * p[25]) * ac_base
    r_s, x_ls, x_m, r_r, x_lr, h, ex, loading = p[26], p[27], p[28], p[29], p[30], p[31], p[32], p[33]
    m3_base = p[7] * pl / loading
    v_break = p[34]

    s_root = np.empty(n, dtype=np.complex128)
    v_load = np.empty(n, dtype=np.complex128)
    fth_out = np.empty(n)

    # initial equilibrium: load-point voltage, reference for Z/I parts, motor slip
    vl = vr[0]
    v0 = abs(vl)
    slip = 0.0
    for _ in range(60):
        v0 = abs(vl)
        if m3_base > 0:
            slip = dyn.motor3_equilibrium_slip(loading, v0, r_s, x_ls, x_m, r_r, x_lr)
        y = s_z.conjugate() / (v0 * v0) + y_sh
        if m3_base > 0:
            y += dyn.motor3_admittance(slip, r_s, x_ls, x_m, r_r, x_lr) * m3_base
        sc = (s_p + s_run - (pv_p + 1j * q_pv[0])) * _break_scale(v0, v_break) + s_i * v0 / v0
        vn = (vr[0] - zf * np.conj(sc / vl)) / (1.0 + zf * y)
        if abs(vn - vl) < 1e-13:
            vl = vn
            break
        vl = vn
    v0 = abs(vl)
    t0 = 0.0
    if m3_base > 0:
        slip = dyn.motor3_equilibrium_slip(loading, v0, r_s, x_ls, x_m, r_r, x_lr)
        t0 = dyn.motor3_torque(slip, v0, r_s, x_ls, x_m, r_r, x_lr) / (1.0 - slip) ** ex

    mode = 0 if ac_base > 0 else 2
    timer = 0.0
    theta = 0.0
    fth = 1.0
    y_z = s_z.conjugate() / (v0 * v0) + y_sh
    for k in range(n):
        y = y_z
        if mode == 1:
            y += fth * ac_base * (gs - 1j * bs)
        if m3_base > 0:
            y += dyn.motor3_admittance(slip, r_s, x_ls, x_m, r_r, x_lr) * m3_base
        s_c = s_p - (pv_p + 1j * q_pv[k])
        if mode == 0:
            s_c += s_run
        den = 1.0 + zf * y
        for _ in range(100):
            vm = abs(vl)
            if vm < 1e-6:
                vm = 1e-6
            sc = s_c * _break_scale(vm, v_break) + s_i * vm / v0
            vn = (vr[k] - zf * np.conj(sc / (vl if abs(vl) > 1e-6 else 1e-6 + 0j))) / den
            step = abs(vn - vl)
            vl = vn
            if step < 1e-10:
                break
        vm = abs(vl)
        sc = s_c * _break_scale(max(vm, 1e-6), v_break) + s_i * vm / v0
        i_l = y * vl + (np.conj(sc / vl) if vm > 1e-6 else 0j)
        i_r = i_l + 0.5j * bf * vr[k]
        s_root[k] = vr[k] * np.conj(i_r)
        v_load[k] = vl
        fth_out[k] = fth if mode == 1 else (1.0 if mode == 0 else 0.0)
        # advance states
        if mode == 0:
            mode, timer = dyn.stall_step(0, timer, vm, v_stall, t_stall, dt)
            if mode == 1:
                theta = 0.0
                fth = 1.0
        elif mode == 1:
            theta = dyn.relay_step(theta, vm, gs, t_th, dt)
            fth = dyn.trip_fraction(theta, th1, th2)
        if m3_base > 0:
            slip = dyn.motor3_slip_step(slip, vm, t0, ex, h, dt, r_s, x_ls, x_m, r_r, x_lr)
    return s_root, v_load, fth_out


@dataclass
class SubModelResponse:
    t: np.ndarray
    s: np.ndarray
    v_load: np.ndarray
    f_th: np.ndarray

    @property
    def p(self):
        return self.s.real

    @property
    def q(self):
        return self.s.imag


def simulate_submodel(params: SubModelParameters, t, v_root, *, q_pv=None, base_mva: float = 1.0,
                      v_break: float = 0.5) -> SubModelResponse:
    """Play a recorded root-voltage series through one sub-model.

    The first sample is taken as pre-disturbance steady state. ``t`` must be
    uniformly spaced.
    """
    t = np.asarray(t, dtype=float)
    v_root = np.asarray(v_root, dtype=complex)
    if len(t) < 2:
        raise ValueError("need at least two samples")
    dt = float(t[1] - t[0])
    q = np.zeros(len(t)) if q_pv is None else np.broadcast_to(np.asarray(q_pv, float), t.shape).copy()
    s, vl, fth = _playback(v_root, dt, pack(params, base_mva, v_break), q)
    return SubModelResponse(t, s, vl, fth)


# --------------------------------------------------------------------------
# surrogate data


@dataclass(frozen=True)
class ScenarioSweepSpec:
    fault_buses: tuple
    durations: tuple
    shunts: tuple
    seed: int = 0
    start: float = 1.0
    horizon: float = 25.0
    dt: float = 0.005
    report_hz: float = 100.0
    load_scales: tuple = (0.9, 1.0, 1.1)
    include_no_fault: bool = True

    def __post_init__(self):
        if not (self.fault_buses and self.durations and self.shunts):
            raise ValueError("sweep axes must be non-empty")

    def scenarios(self) -> list[FaultScenario]:
        return [FaultScenario(b, self.start, d, complex(s)) for b in self.fault_buses
                for d in self.durations for s in self.shunts]

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSweepSpec":
        schemas.validate(d, "sweep")
        return cls(
            fault_buses=tuple(d["fault_buses"]), durations=tuple(d["durations_s"]),
            shunts=tuple(complex(g, -b) for g, b in d["shunts"]), seed=d.get("seed", 0),
            start=d.get("start_s", 1.0), horizon=d.get("horizon_s", 25.0), dt=d.get("dt_s", 0.005),
            load_scales=tuple(d.get("load_scales", (0.9, 1.0, 1.1))),
            include_no_fault=d.get("include_no_fault", True),
        )

    def to_dict(self) -> dict:
        return {"format_version": 1, "fault_buses": list(self.fault_buses), "durations_s": list(self.durations),
                "shunts": [[s.real, -s.imag] for s in self.shunts], "seed": self.seed, "start_s": self.start,
                "horizon_s": self.horizon, "dt_s": self.dt, "load_scales": list(self.load_scales),
                "include_no_fault": self.include_no_fault}


@dataclass
class ScenarioRecord:
    """Per-area root voltage and power series of one detailed run."""

    name: str
    scenario: FaultScenario | None
    t: np.ndarray
    v: dict
    s: dict
    stalled: dict
    recovery_time: float = math.nan

    def had_stall(self, area=None) -> bool:
        keys = [area] if area is not None else list(self.stalled)
        return any(np.max(self.stalled[a]) > 0 for a in keys)


@dataclass(frozen=True)
class SteadyRecord:
    load_scale: float
    v_root: dict
    v_agg: dict
    i_area: dict


@dataclass
class FitDataset:
    records: list
    steady: list
    area_ids: list


def record_from_result(result, name: str, report_hz: float | None = None) -> ScenarioRecord:
    rate = result.config.report_hz if report_hz is None else report_hz
    step = int(round(1.0 / (rate * result.config.dt)))
    sl = slice(0, None, step)
    v = {a: result.area_v[sl, k] for k, a in enumerate(result.area_ids)}
    s = {a: result.area_s[sl, k] for k, a in enumerate(result.area_ids)}
    st = {a: result.area_stalled[sl, k] for k, a in enumerate(result.area_ids)}
    return ScenarioRecord(name, result.scenario, result.t[sl], v, s, st, result.recovery_time())


def steady_record(net, areas, cfg: SimConfig, load_scale: float) -> SteadyRecord:
    """Pre-disturbance operating point with all loads scaled by ``load_scale``."""
    from fidvr.simulation import _area_currents

    plant = Plant(net, areas, replace(cfg, load_scale=load_scale))
    v = plant.initialize()
    i_area = _area_currents(net, v[None, :], areas)[0]
    v_root, v_agg, i_out = {}, {}, {}
    for k, a in enumerate(areas):
        idx = [net.index(b) for b, _ in a.loads]
        w = np.array([kw for _, kw in a.loads])
        v_root[a.id] = complex(v[net.index(a.root)])
        v_agg[a.id] = complex(np.sum(w * v[idx]) / w.sum()) if w.sum() > 0 else complex(v[net.index(a.root)])
        i_out[a.id] = complex(i_area[k])
    return SteadyRecord(load_scale, v_root, v_agg, i_out)


def _run_one(args):
    net, areas, sc, cfg, name = args
    res = run_simulation(net, areas, sc, cfg)
    if res.collapsed:
        return name, None, res.diagnostic
    return name, record_from_result(res, name), ""


def scenario_name(sc: FaultScenario | None) -> str:
    if sc is None:
        return "no_fault"
    return f"bus{sc.bus}_{sc.duration * 1e3:.0f}ms_g{sc.fault_shunt.real:g}_b{-sc.fault_shunt.imag:g}"


def run_scenarios(net, areas, scenarios, cfg: SimConfig, jobs: int = 1) -> list[tuple]:
    """Run independent scenarios, in worker processes when ``jobs > 1``."""
    tasks = [(net, list(areas), sc, cfg, scenario_name(sc)) for sc in scenarios]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_run_one, tasks))
    return [_run_one(t) for t in tasks]


def generate_surrogate_dataset(net, areas, sweep: ScenarioSweepSpec, jobs: int = 1) -> FitDataset:
    """Detailed runs over the sweep cross-product plus steady loading points."""
    cfg = SimConfig(dt=sweep.dt, horizon=sweep.horizon, seed=sweep.seed, report_hz=sweep.report_hz)
    scenarios = sweep.scenarios()
    if sweep.include_no_fault:
        scenarios = [None] + scenarios
    records = []
    for name, rec, diag in run_scenarios(net, areas, scenarios, cfg, jobs):
        if rec is None:
            log.warning("scenario %s collapsed and is excluded: %s", name, diag)
            continue
        records.append(rec)
    steady = [steady_record(net, areas, cfg, ls) for ls in sweep.load_scales]
    return FitDataset(records, steady, [a.id for a in areas])


# --------------------------------------------------------------------------
# feeder equivalent


def estimate_feeder_equivalent(v_root, v_agg, i_area) -> complex:
    """Least-squares ``z`` in ``v_root - v_agg = z * i_area`` over operating points."""
    v_root = np.asarray(v_root, dtype=complex)
    v_agg = np.asarray(v_agg, dtype=complex)
    i_area = np.asarray(i_area, dtype=complex)
    if len(i_area) < 3:
        raise ValueError("need at least 3 steady operating points")
    if np.max(np.abs(i_area)) <= 1e-12:
        raise ValueError("area draws no current; feeder equivalent is undefined")
    if np.ptp(np.abs(i_area)) <= 1e-9 * np.max(np.abs(i_area)):
        raise ValueError("operating points have identical loadings; regression is rank-deficient")
    dv = v_root - v_agg
    return complex(np.vdot(i_area, dv) / np.vdot(i_area, i_area))


def feeder_equivalents(dataset: FitDataset) -> dict:
    out = {}
    for a in dataset.area_ids:
        out[a] = estimate_feeder_equivalent([s.v_root[a] for s in dataset.steady],
                                            [s.v_agg[a] for s in dataset.steady],
                                            [s.i_area[a] for s in dataset.steady])
    return out


# --------------------------------------------------------------------------
# fitting

FREE_DEFAULT = ("f_s", "f_m1", "f_m3", "r_stall", "x_stall", "t_th", "theta1", "theta2")
STALL_PARAMS = ("r_stall", "x_stall", "t_th", "theta1", "theta2")

DEFAULT_BOUNDS = {
    "f_s": (0.0, 1.0), "f_m1": (0.0, 1.0), "f_m3": (0.0, 1.0),
    "r_stall": (0.02, 0.3), "x_stall": (0.02, 0.3), "t_th": (3.0, 40.0),
    "theta1": (0.1, 2.0), "theta2": (0.5, 6.0),
}


def _get(m: SubModelParameters, name: str) -> float:
    if name in ("r_stall", "x_stall", "t_th", "theta1", "theta2"):
        return getattr(m.motor1, name)
    return getattr(m, name)


def with_values(m: SubModelParameters, names, values) -> SubModelParameters:
    """Copy of ``m`` with the named parameters replaced, projected to a valid set."""
    top, m1 = {}, {}
    for n, v in zip(names, values):
        (m1 if n in STALL_PARAMS else top)[n] = float(v)
    fr = {k: top.get(k, getattr(m, k)) for k in ("f_s", "f_m1", "f_m3")}
    tot = sum(fr.values())
    if tot > 1.0:
        fr = {k: v / tot for k, v in fr.items()}
    top.update(fr)
    th1 = m1.get("theta1", m.motor1.theta1)
    th2 = m1.get("theta2", m.motor1.theta2)
    if th2 <= th1 * 1.01:
        m1["theta2"] = th1 * 1.01
    return replace(m, motor1=replace(m.motor1, **m1), **top)


@dataclass
class FitChannel:
    t: np.ndarray
    v_root: np.ndarray
    s: np.ndarray
    weight: float = 1.0
    mask: np.ndarray | None = None

    @classmethod
    def from_record(cls, rec, area_id, weight=1.0):
        """Channel for one area; fault-on samples carry no load information and are masked."""
        mask = np.ones(len(rec.t), bool)
        if rec.scenario is not None:
            sc = rec.scenario
            mask &= ~((rec.t >= sc.start - 1e-9) & (rec.t < sc.clear_time + 1e-9))
        return cls(rec.t, rec.v[area_id], rec.s[area_id], weight, mask)


@dataclass
class FitProblem:
    """Free parameters, bounds and the data for one area."""

    initial: SubModelParameters
    channels: list
    free: tuple = FREE_DEFAULT
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    base_mva: float = 1.0

    def __post_init__(self):
        if len(self.free) > 12:
            raise ValueError("at most 12 free parameters")
        unknown = set(self.free) - set(self.bounds)
        if unknown:
            raise ValueError(f"no bounds for {sorted(unknown)}")

    @property
    def lower(self):
        return np.array([self.bounds[n][0] for n in self.free])

    @property
    def upper(self):
        return np.array([self.bounds[n][1] for n in self.free])


@dataclass
class FitResult:
    params: SubModelParameters
    eta: float
    nrmse: dict
    trace: list
    starts: list
    iterations: int
    flags: list = field(default_factory=list)


def objective(problem: FitProblem, m: SubModelParameters) -> float:
    """Sum of squared P/Q residuals, each channel normalized by the area load."""
    p_base = m.p_load_kw * 1e-3 / problem.base_mva
    packed = pack(m, problem.base_mva)
    eta = 0.0
    for ch in problem.channels:
        dt = float(ch.t[1] - ch.t[0])
        s, _, _ = _playback(ch.v_root, dt, packed, np.zeros(len(ch.t)))
        r = (ch.s - s) / p_base
        if ch.mask is not None:
            r = r[ch.mask]
        eta += ch.weight * float(np.sum(r.real ** 2 + r.imag ** 2))
    return eta


def nelder_mead(f, x0, *, lower, upper, max_iter=2000, tol=1e-6, window=50, scale=0.1):
    """Bound-projected Nelder-Mead in the box ``[lower, upper]``.

    Stops when the best value improved by less than ``tol`` (relative) over
    the last ``window`` iterations. Returns ``(x_best, f_best, trace)``
    where ``trace`` holds the best value after every iteration.
    """
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    x0 = np.clip(np.asarray(x0, float), lower, upper)
    n = len(x0)
    if n == 0:
        return x0, f(x0), []
    span = upper - lower

    def proj(x):
        return np.clip(x, lower, upper)

    simplex = [x0]
    for k in range(n):
        x = x0.copy()
        step = scale * span[k]
        x[k] = x[k] + step if x[k] + step <= upper[k] else x[k] - step
        simplex.append(proj(x))
    simplex = np.array(simplex)
    fs = np.array([f(x) for x in simplex])
    trace = []
    for _ in range(max_iter):
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        trace.append(float(fs[0]))
        if len(trace) > window:
            old = trace[-window - 1]
            if old - fs[0] <= tol * max(abs(old), 1e-300):
                break
        centroid = simplex[:-1].mean(axis=0)
        xr = proj(centroid + (centroid - simplex[-1]))
        fr = f(xr)
        if fr < fs[0]:
            xe = proj(centroid + 2.0 * (centroid - simplex[-1]))
            fe = f(xe)
            simplex[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
        else:
            if fr < fs[-1]:
                xc = proj(centroid + 0.5 * (xr - centroid))
            else:
                xc = proj(centroid + 0.5 * (simplex[-1] - centroid))
            fc = f(xc)
            if fc < min(fr, fs[-1]):
                simplex[-1], fs[-1] = xc, fc
            else:
                simplex[1:] = proj(simplex[0] + 0.5 * (simplex[1:] - simplex[0]))
                fs[1:] = [f(x) for x in simplex[1:]]
    k = int(np.argmin(fs))
    trace.append(float(fs[k]))
    return simplex[k], float(fs[k]), trace


def zip_only(m: SubModelParameters) -> SubModelParameters:
    return replace(m, f_s=1.0, f_m1=0.0, f_m3=0.0)


def fit_parameters(problem: FitProblem, *, starts: int = 8, seed: int = 0, max_iter: int = 2000,
                   tol: float = 1e-6, window: int = 50) -> FitResult:
    """Multi-start Nelder-Mead on the normalized free parameters.

    The first start is ``problem.initial``; the rest are drawn uniformly in
    the bounds from ``seed``. Raises :class:`FitFailedError` when the best
    fit is no better than a static-load-only sub-model.
    """
    names = tuple(problem.free)
    lo, hi = problem.lower, problem.upper
    span = np.where(hi > lo, hi - lo, 1.0)
    to_x = lambda vals: (np.asarray(vals) - lo) / span  # noqa: E731
    to_v = lambda x: lo + np.asarray(x) * span  # noqa: E731

    def f(x):
        return objective(problem, with_values(problem.initial, names, to_v(x)))

    rng = np.random.default_rng(seed)
    x_init = np.clip(to_x([_get(problem.initial, n) for n in names]), 0.0, 1.0)
    best = None
    start_log, trace_all, iters = [], [], 0
    for k in range(max(1, starts)):
        x0 = x_init if k == 0 else rng.uniform(0.0, 1.0, len(names))
        eta0 = f(x0)
        if not names:
            xb, eb, tr = x0, eta0, [eta0]
        else:
            xb, eb, tr = nelder_mead(f, x0, lower=np.zeros(len(names)), upper=np.ones(len(names)),
                                     max_iter=max_iter, tol=tol, window=window)
        iters += len(tr)
        start_log.append({"start": k, "eta0": eta0, "eta": eb, "iterations": len(tr)})
        trace_all.append(tr)
        if best is None or eb < best[1]:
            best = (xb, eb)
        if eb == 0.0:
            break
    params = with_values(problem.initial, names, to_v(best[0]))
    eta = best[1]
    result = FitResult(params, eta, nrmse_report(problem, params), trace_all, start_log, iters)
    base_eta = objective(problem, zip_only(problem.initial))
    if names and eta >= base_eta:
        raise FitFailedError(f"best eta {eta:.4g} does not improve on static-only baseline {base_eta:.4g}",
                             result)
    return result


# --------------------------------------------------------------------------
# evaluation


def nrmse(measured, computed) -> float:
    """RMSE over the measured range; the plain RMSE when the range is zero."""
    measured = np.asarray(measured, float)
    rmse = float(np.sqrt(np.mean((measured - np.asarray(computed, float)) ** 2)))
    rng = float(np.ptp(measured))
    if rng <= 1e-6 * max(float(np.max(np.abs(measured))), 1e-12):
        return rmse
    return rmse / rng


def nrmse_report(problem: FitProblem, m: SubModelParameters) -> dict:
    out = {"p": [], "q": []}
    for ch in problem.channels:
        resp = simulate_submodel(m, ch.t, ch.v_root, base_mva=problem.base_mva)
        k = slice(None) if ch.mask is None else ch.mask
        out["p"].append(nrmse(ch.s.real[k], resp.p[k]))
        out["q"].append(nrmse(ch.s.imag[k], resp.q[k]))
    return {"p": max(out["p"]), "q": max(out["q"]), "per_channel": out}


def evaluate_fit(models: dict, records, base_mva: float = 1.0) -> dict:
    """Per-area, per-record P and Q NRMSE of sub-model playback.

    ``p_max``/``q_max`` summarize the records in which the area stalls.
    Without a stall the masked channel is nearly flat and its range is a
    poor normalizer, so those records are summarized by RMSE relative to
    mean demand (``flat_rel_rmse_max``).
    """
    report = {}
    for aid, m in models.items():
        rows = []
        for rec in records:
            ch = FitChannel.from_record(rec, aid)
            resp = simulate_submodel(m, rec.t, rec.v[aid], base_mva=base_mva)
            k = ch.mask
            meas = ch.s[k]
            err = np.abs(meas - (resp.p[k] + 1j * resp.q[k]))
            rows.append({"record": rec.name, "stall": bool(rec.had_stall(aid)),
                         "p": nrmse(meas.real, resp.p[k]), "q": nrmse(meas.imag, resp.q[k]),
                         "rel_rmse": float(np.sqrt(np.mean(err ** 2)) / max(np.mean(np.abs(meas)), 1e-12))})
        fidvr = [r for r in rows if r["stall"]] or rows
        flat = [r["rel_rmse"] for r in rows if not r["stall"]]
        report[aid] = {"records": rows, "p_max": max(r["p"] for r in fidvr), "q_max": max(r["q"] for r in fidvr),
                       "flat_rel_rmse_max": max(flat) if flat else None}
    return report


# --------------------------------------------------------------------------
# area pipeline


def initial_submodel(area, feeder_z: complex) -> SubModelParameters:
    """Starting point for a fit: the area's nominal description."""
    return SubModelParameters(
        root=area.root, p_load_kw=area.p_load_kw, f_s=area.f_s, f_m1=area.f_m1, f_m3=area.f_m3,
        f_pv=area.f_pv, feeder_z=feeder_z, zip=area.zip, motor3=area.motor3,
        motor1=dyn.Motor1PhaseParameters(v_stall=area.motor1.v_stall, t_stall=area.motor1.t_stall,
                                          p_nom=area.motor1.p_nom, q_nom=area.motor1.q_nom),
        q_max_frac=area.q_max_frac)


def fit_area(area, feeder_z: complex, records, *, starts=8, seed=0, max_iter=2000, base_mva=1.0,
             initial: SubModelParameters | None = None) -> FitResult:
    """Fit one area's sub-model on the given records.

    With fewer than two stall-producing records the stall parameters are
    held fixed, the fractions are still fitted, and :class:`FitFailedError`
    carries that partial result.
    """
    init = initial if initial is not None else initial_submodel(area, feeder_z)
    channels = [FitChannel.from_record(r, area.id) for r in records]
    n_stall = sum(r.had_stall(area.id) for r in records)
    free = FREE_DEFAULT if n_stall >= 2 else tuple(n for n in FREE_DEFAULT if n not in STALL_PARAMS)
    problem = FitProblem(init, channels, free=free, base_mva=base_mva)
    result = fit_parameters(problem, starts=starts, seed=seed, max_iter=max_iter)
    if n_stall < 2 and area.f_m1 > 0:
        result.flags.append("stall_parameters_unidentifiable")
        raise FitFailedError(f"area {area.id}: {n_stall} stall-producing records, stall parameters "
                             "are unidentifiable", result)
    return result


def _fit_area_task(args):
    area, z, records, kw = args
    try:
        return area.id, fit_area(area, z, records, **kw), ""
    except FitFailedError as exc:
        return area.id, exc.result, str(exc)


def fit_all(areas, dataset: FitDataset, records=None, *, starts=8, seed=0, max_iter=2000,
            base_mva=1.0, jobs=1):
    """Fit every area; returns ``(models, results, failures)``."""
    zf = feeder_equivalents(dataset)
    records = dataset.records if records is None else records
    kw = dict(starts=starts, seed=seed, max_iter=max_iter, base_mva=base_mva)
    tasks = [(a, zf[a.id], records, kw) for a in areas]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outs = list(ex.map(_fit_area_task, tasks))
    else:
        outs = [_fit_area_task(t) for t in tasks]
    models, results, failures = {}, {}, {}
    for aid, res, err in outs:
        results[aid] = res
        if res is not None:
            models[aid] = res.params
        if err:
            failures[aid] = err
    return models, results, failures


def held_out_scenarios(sweep_doc: dict) -> list[FaultScenario]:
    out = []
    for h in sweep_doc.get("held_out", []):
        g, b = h.get("shunt", (40.0, 40.0))
        out.append(FaultScenario(int(h["bus"]), sweep_doc.get("start_s", 1.0), float(h["duration_s"]),
                                 complex(g, -b)))
    return out


def run_fit(net, areas, sweep_doc: dict, *, jobs: int = 1, seed: int | None = None):
    """Surrogate generation, feeder equivalents, per-area fits and held-out evaluation.

    Returns ``(models, report, failures)``; ``report`` is the provenance block
    stored alongside the fitted parameters.
    """
    sweep = ScenarioSweepSpec.from_dict(sweep_doc)
    if seed is not None:
        sweep = replace(sweep, seed=seed)
    dataset = generate_surrogate_dataset(net, areas, sweep, jobs)
    n_fidvr = sum(r.had_stall() for r in dataset.records)
    log.info("surrogate dataset: %d records, %d with stall", len(dataset.records), n_fidvr)
    models, results, failures = fit_all(areas, dataset, starts=sweep_doc.get("starts", 8), seed=sweep.seed,
                                        max_iter=sweep_doc.get("max_iter", 2000), base_mva=net.base_mva,
                                        jobs=jobs)
    report = {
        "sweep": sweep.to_dict(),
        "seed": sweep.seed,
        "records": [r.name for r in dataset.records],
        "eta": {a: r.eta for a, r in results.items() if r is not None},
        "nrmse_train": evaluate_fit(models, dataset.records, net.base_mva),
        "failures": failures,
    }
    held = held_out_scenarios(sweep_doc)
    if held:
        cfg = SimConfig(dt=sweep.dt, horizon=sweep.horizon, seed=sweep.seed, report_hz=sweep.report_hz)
        recs = [rec for _, rec, _ in run_scenarios(net, areas, held, cfg, jobs) if rec is not None]
        report["held_out"] = [r.name for r in recs]
        report["nrmse_held_out"] = evaluate_fit(models, recs, net.base_mva)
    return models, report, failures
