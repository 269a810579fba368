"""Quasi-static phasor simulation of a feeder with composite loads.

Each step applies the fault schedule, rebuilds bus injections from the load
states, solves the network, then advances the slow load dynamics (A/C stall
and thermal relay, 3-phase motor slip) with the solved voltages.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from fidvr import dynamics as dyn
from fidvr.grid import (
    FeederNetwork,
    PowerFlowDivergedError,
    build_admittance_matrix,
    fixed_point,
    source_admittance,
)

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AreaSpec:
    """Load area of the detailed feeder: where its loads sit and what they are.

    ``first_buses`` are the children of ``root`` whose subtrees form the area;
    the area's current is the sum of the branch currents into them.
    Composition fractions and motor parameters are area means; individual
    nodes are drawn around them.
    """

    id: str
    root: int
    first_buses: tuple[int, ...]
    loads: tuple[tuple[int, float], ...]
    f_s: float
    f_m1: float
    f_m3: float
    f_el: float = 0.0
    f_pv: float = 0.0
    motor1: dyn.Motor1PhaseParameters = field(default_factory=dyn.Motor1PhaseParameters)
    motor3: dyn.Motor3PhaseParameters = field(default_factory=dyn.Motor3PhaseParameters)
    zip: dyn.ZipParameters = field(default_factory=dyn.ZipParameters)
    q_max_frac: float = 0.44

    def __post_init__(self):
        object.__setattr__(self, "first_buses", tuple(self.first_buses))
        object.__setattr__(self, "loads", tuple((int(b), float(p)) for b, p in self.loads))
        total = self.f_s + self.f_m1 + self.f_m3 + self.f_el
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"area {self.id}: demand fractions sum to {total:.6f}, expected 1")

    @property
    def p_load_kw(self) -> float:
        return sum(p for _, p in self.loads)

    @property
    def ac_kw(self) -> float:
        return self.p_load_kw * self.f_m1

    @property
    def pv(self) -> dyn.PvParameters:
        return dyn.PvParameters.sized_for(self.f_pv * self.p_load_kw, self.q_max_frac)


@dataclass(frozen=True)
class FaultScenario:
    bus: int
    start: float
    duration: float
    fault_shunt: complex = 50.0 - 50.0j

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("fault duration must be positive")

    @property
    def clear_time(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.005
    horizon: float = 25.0
    seed: int = 0
    report_hz: float = 100.0
    composition_sd: float = 0.05
    param_rel_sd: float = 0.05
    t_stall_rel_sd: float = 0.15
    groups_per_node: int = 3
    v_recovery: float = 0.95
    v_break: float = 0.5
    fallback_shunt: float = 1e4
    load_scale: float = 1.0


@dataclass(frozen=True)
class ControlAction:
    """A/C disconnection fractions and PV reactive setpoints applied at ``t_apply``."""

    t_apply: float
    ac_fraction: dict = field(default_factory=dict)
    pv_q_kvar: dict = field(default_factory=dict)
    seed: int = 0


# --------------------------------------------------------------------------
# plant construction


def _truncnorm(rng, mean, sd):
    if mean <= 0.0:
        return 0.0
    return float(np.clip(rng.normal(mean, sd), 0.0, 1.0))


def draw_node_composition(rng, area: AreaSpec, sd: float) -> tuple[float, float, float, float]:
    """Normal draw around the area means, truncated to [0, 1] and renormalized."""
    f = np.array([_truncnorm(rng, m, sd) for m in (area.f_s, area.f_el, area.f_m1, area.f_m3)])
    if f.sum() <= 0:
        f = np.array([area.f_s, area.f_el, area.f_m1, area.f_m3])
    f = f / f.sum()
    return tuple(float(x) for x in f)


def _vary(rng, mean, rel_sd, lo=0.25, hi=4.0):
    return float(mean * np.clip(1.0 + rel_sd * rng.normal(), lo, hi))


class Plant:
    """Mutable per-run state of the detailed feeder (nodes and motor groups)."""

    def __init__(self, net: FeederNetwork, areas, cfg: SimConfig):
        self.net = net
        self.areas = list(areas)
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        scale = 1e-3 / net.base_mva
        node_bus, node_area, comp = [], [], []
        p_kw = []
        for a_idx, area in enumerate(self.areas):
            for bus, kw in area.loads:
                node_bus.append(net.index(bus))
                node_area.append(a_idx)
                p_kw.append(kw * cfg.load_scale)
                comp.append(draw_node_composition(rng, area, cfg.composition_sd))
        if len(set(node_bus)) != len(node_bus):
            raise SimulationError("a bus carries more than one load node")
        self.node_bus = np.array(node_bus, dtype=np.int64)
        self.node_area = np.array(node_area, dtype=np.int64)
        self.node_p = np.array(p_kw) * scale
        comp = np.array(comp).reshape(-1, 4)
        self.node_fs, self.node_fel, self.node_fm1, self.node_fm3 = comp.T
        nn = len(node_bus)

        # static + electronic + PV
        self.node_zip = [self.areas[a].zip for a in node_area]
        qr = np.array([z.q_ratio for z in self.node_zip])
        ps = self.node_fs * self.node_p
        qs = ps * qr
        pz = np.array([[z.p_z0, z.p_i0, z.p_p0] for z in self.node_zip]).reshape(-1, 3)
        qz = np.array([[z.q_z0, z.q_i0, z.q_p0] for z in self.node_zip]).reshape(-1, 3)
        self._s_z = ps * pz[:, 0] + 1j * qs * qz[:, 0]
        self._s_i = ps * pz[:, 1] + 1j * qs * qz[:, 1]
        self._s_p = ps * pz[:, 2] + 1j * qs * qz[:, 2] + self.node_fel * self.node_p
        self._qsh = np.array([z.q_sh0 for z in self.node_zip]) * self.node_p
        f_pv = np.array([self.areas[a].f_pv for a in node_area])
        self.pv_p = f_pv * self.node_p
        qmax_frac = np.array([self.areas[a].q_max_frac for a in node_area])
        self.pv_rating = self.pv_p / np.sqrt(1.0 - qmax_frac ** 2)
        self.pv_qmax = qmax_frac * self.pv_rating
        self.pv_q = np.zeros(nn)

        # A/C motor groups
        k_groups = max(1, cfg.groups_per_node)
        g_node, g = [], {k: [] for k in ("v_stall", "t_stall", "g", "b", "t_th", "th1", "th2", "pq", "base")}
        for n in range(nn):
            m1 = self.areas[node_area[n]].motor1
            if self.node_fm1[n] <= 0:
                continue
            for _ in range(k_groups):
                sd = cfg.param_rel_sd
                th1 = _vary(rng, m1.theta1, sd)
                th2 = max(_vary(rng, m1.theta2, sd), th1 * 1.05)
                y = dyn.stall_admittance(_vary(rng, m1.r_stall, sd), _vary(rng, m1.x_stall, sd))
                g_node.append(n)
                g["v_stall"].append(min(_vary(rng, m1.v_stall, 0.5 * sd), 0.95))
                g["t_stall"].append(_vary(rng, m1.t_stall, cfg.t_stall_rel_sd))
                g["g"].append(y.real)
                g["b"].append(-y.imag)
                g["t_th"].append(_vary(rng, m1.t_th, sd))
                g["th1"].append(th1)
                g["th2"].append(th2)
                g["pq"].append(complex(m1.p_nom, m1.q_nom))
                # motor base on system base
                g["base"].append(self.node_fm1[n] * self.node_p[n] / k_groups / m1.p_nom)
        self.g_node = np.array(g_node, dtype=np.int64)
        self.g_v_stall = np.array(g["v_stall"])
        self.g_t_stall = np.array(g["t_stall"])
        self.g_g = np.array(g["g"])
        self.g_b = np.array(g["b"])
        self.g_t_th = np.array(g["t_th"])
        self.g_th1 = np.array(g["th1"])
        self.g_th2 = np.array(g["th2"])
        self.g_pq = np.array(g["pq"], dtype=complex)
        self.g_base = np.array(g["base"])
        ng = len(g_node)
        self.g_mode = np.zeros(ng, dtype=np.int64)
        self.g_timer = np.zeros(ng)
        self.g_theta = np.zeros(ng)
        self.g_fth = np.ones(ng)
        self.g_connected = np.ones(ng)

        # 3-phase motors, one lumped machine per node
        self.m3_idx = np.flatnonzero(self.node_fm3 > 0)
        m3p = [self.areas[node_area[n]].motor3 for n in self.m3_idx]
        self.m3 = {k: np.array([getattr(p, k) for p in m3p], dtype=float)
                   for k in ("r_s", "x_ls", "x_m", "r_r", "x_lr", "h", "load_torque_exponent", "loading")}
        self.m3_slip = np.zeros(len(self.m3_idx))
        self.m3_t0 = np.zeros(len(self.m3_idx))
        self.m3_base = self.node_fm3[self.m3_idx] * self.node_p[self.m3_idx] / np.maximum(self.m3["loading"], 1e-9)

        self.v0 = np.ones(nn)
        self.y_bus = build_admittance_matrix(net)
        self.k_src, self.y_src, self.i_src = source_admittance(net)

    # -- injections -------------------------------------------------------

    def _m3_args(self):
        m = self.m3
        return m["r_s"], m["x_ls"], m["x_m"], m["r_r"], m["x_lr"]

    def node_injections(self):
        """Per-node (constant power, constant current @1pu, admittance) demand."""
        nn = len(self.node_bus)
        y = self._s_z.conj() / self.v0 ** 2 + 1j * self._qsh
        s_i = self._s_i / self.v0
        s = self._s_p - (self.pv_p + 1j * self.pv_q)
        if len(self.g_node):
            w = self.g_connected * self.g_base
            stalled = self.g_mode == 1
            running = self.g_mode == 0
            yg = np.where(stalled, self.g_fth * w, 0.0) * (self.g_g - 1j * self.g_b)
            sg = np.where(running, w, 0.0) * self.g_pq
            y = y + np.bincount(self.g_node, yg.real, nn) + 1j * np.bincount(self.g_node, yg.imag, nn)
            s = s + np.bincount(self.g_node, sg.real, nn) + 1j * np.bincount(self.g_node, sg.imag, nn)
        if len(self.m3_idx):
            ym = dyn.motor3_admittances(self.m3_slip, *self._m3_args()) * self.m3_base
            y = y.copy()
            y[self.m3_idx] += ym
        return s, s_i, y

    def bus_injections(self, fault_bus=None, fault_y=0j):
        n = self.net.n
        s_n, i_n, y_n = self.node_injections()
        s = np.zeros(n, complex)
        i = np.zeros(n, complex)
        y = np.zeros(n, complex)
        s[self.node_bus] = s_n
        i[self.node_bus] = i_n
        y[self.node_bus] = y_n
        if fault_bus is not None:
            y[fault_bus] += fault_y
        return s, i, y

    def solve(self, v_guess, fault_bus=None, fault_y=0j, s_scale=1.0):
        s, i, y = self.bus_injections(fault_bus, fault_y)
        Yt = self.y_bus + np.diag(y)
        Yt[self.k_src, self.k_src] += self.y_src
        rhs0 = np.zeros(self.net.n, complex)
        rhs0[self.k_src] = self.i_src
        lu = scipy.linalg.lu_factor(Yt, check_finite=False)
        return fixed_point(lu, rhs0, s * s_scale, i * s_scale, v_guess, v_break=self.cfg.v_break)

    # -- initialization -----------------------------------------------------

    def initialize(self, max_outer: int = 50) -> np.ndarray:
        """Find the pre-disturbance equilibrium and set motor torques from it."""
        v = np.full(self.net.n, self.net.source.emf, dtype=complex)
        for _ in range(max_outer):
            vm = np.abs(v[self.node_bus])
            self.v0 = vm.copy()
            for j, n in enumerate(self.m3_idx):
                self.m3_slip[j] = dyn.motor3_equilibrium_slip(
                    self.m3["loading"][j], vm[n], *(a[j] for a in self._m3_args()))
            v_new = self.solve(v)
            if np.max(np.abs(v_new - v)) < 1e-13:
                v = v_new
                break
            v = v_new
        vm = np.abs(v[self.node_bus])
        self.v0 = vm.copy()
        for j, n in enumerate(self.m3_idx):
            args = tuple(a[j] for a in self._m3_args())
            te = dyn.motor3_torque(self.m3_slip[j], vm[n], *args)
            self.m3_t0[j] = te / (1.0 - self.m3_slip[j]) ** self.m3["load_torque_exponent"][j]
        return self.solve(v)

    # -- dynamics -----------------------------------------------------------

    def advance(self, v, dt):
        vm = np.abs(v[self.node_bus])
        if len(self.g_node):
            dyn.advance_motor1_groups(self.g_mode, self.g_timer, self.g_theta, self.g_fth,
                                      vm[self.g_node], self.g_v_stall, self.g_t_stall, self.g_g,
                                      self.g_t_th, self.g_th1, self.g_th2, dt)
        if len(self.m3_idx):
            m = self.m3
            dyn.advance_motor3(self.m3_slip, vm[self.m3_idx], self.m3_t0, m["load_torque_exponent"],
                               m["h"], dt, *self._m3_args())

    def apply_control(self, action: ControlAction):
        """Disconnect A/C and set PV reactive output per area."""
        rng = np.random.default_rng(action.seed)
        for a_idx, area in enumerate(self.areas):
            frac = float(action.ac_fraction.get(area.id, 0.0))
            if frac > 0 and len(self.g_node):
                in_area = self.node_area[self.g_node] == a_idx
                groups = np.flatnonzero(in_area & (self.g_connected > 0))
                if len(groups):
                    frac = min(frac, 1.0)
                    # random per-node shares averaging to the plan fraction
                    nodes = np.unique(self.g_node[groups])
                    shares = np.clip(frac * (1.0 + 0.25 * rng.standard_normal(len(nodes))), 0.0, 1.0)
                    kw = np.array([self.g_base[groups][self.g_node[groups] == n].sum() for n in nodes])
                    if shares @ kw > 0:
                        shares = np.clip(shares * frac * kw.sum() / (shares @ kw), 0.0, 1.0)
                    for n, sh in zip(nodes, shares):
                        sel = groups[self.g_node[groups] == n]
                        self.g_connected[sel] *= 1.0 - sh
            q = float(action.pv_q_kvar.get(area.id, 0.0))
            if q > 0:
                nodes = np.flatnonzero(self.node_area == a_idx)
                rating = self.pv_rating[nodes]
                if rating.sum() > 0:
                    q_pu = q * 1e-3 / self.net.base_mva
                    self.pv_q[nodes] = np.minimum(q_pu * rating / rating.sum(), self.pv_qmax[nodes])

    def area_ac_kw(self) -> np.ndarray:
        """Connected A/C base (kW of running demand) per area."""
        out = np.zeros(len(self.areas))
        if len(self.g_node):
            kw = self.g_connected * self.g_base * self.g_pq.real * 1e3 * self.net.base_mva
            np.add.at(out, self.node_area[self.g_node], kw)
        return out

    def area_trip_fraction(self) -> np.ndarray:
        """A/C-base-weighted share of each area's motors that are stalled and still connected."""
        out = np.zeros(len(self.areas))
        if not len(self.g_node):
            return out
        w = self.g_base
        on = np.where(self.g_mode == 1, self.g_fth, 0.0) * self.g_connected
        num = np.zeros(len(self.areas))
        den = np.zeros(len(self.areas))
        a = self.node_area[self.g_node]
        np.add.at(num, a, w * on)
        np.add.at(den, a, w)
        np.divide(num, den, out=out, where=den > 0)
        return out


# --------------------------------------------------------------------------
# results


@dataclass
class SimulationResult:
    t: np.ndarray
    v: np.ndarray  # (steps, buses) complex
    bus_ids: list
    area_ids: list
    area_roots: list
    area_i: np.ndarray  # (steps, areas) current into each area at its root
    area_stalled: np.ndarray  # (steps, areas) connected stalled fraction
    area_theta: np.ndarray  # (steps, areas) mean relay temperature of stalled groups
    scenario: FaultScenario | None
    config: SimConfig
    collapsed: bool = False
    diagnostic: str = ""
    control: ControlAction | None = None
    metadata: dict = field(default_factory=dict)

    def bus(self, bus_id) -> np.ndarray:
        return self.v[:, self.bus_ids.index(bus_id)]

    @property
    def area_v(self) -> np.ndarray:
        idx = [self.bus_ids.index(r) for r in self.area_roots]
        return self.v[:, idx]

    @property
    def area_s(self) -> np.ndarray:
        return self.area_v * np.conj(self.area_i)

    @property
    def monitored_v(self) -> np.ndarray:
        roots = sorted(set(self.area_roots), key=self.area_roots.index)
        return np.abs(self.v[:, [self.bus_ids.index(r) for r in roots]])

    @property
    def recovered(self) -> np.ndarray:
        return np.all(self.monitored_v >= self.config.v_recovery, axis=1)

    def recovery_time(self) -> float:
        """Time from fault clearing until every monitored voltage stays above threshold.

        ``inf`` if the run ends (or collapses) before recovery.
        """
        if self.scenario is None:
            return 0.0
        t_clear = self.scenario.clear_time
        low = ~self.recovered & (self.t >= t_clear - 1e-12)
        if self.collapsed or (len(low) and low[-1]):
            return math.inf
        if not low.any():
            return 0.0
        k = np.flatnonzero(low)[-1]
        return float(self.t[k + 1] - t_clear) if k + 1 < len(self.t) else math.inf


def _area_currents(net: FeederNetwork, v: np.ndarray, areas) -> np.ndarray:
    out = np.zeros((v.shape[0], len(areas)), complex)
    branches = {}
    for br in net.branches:
        branches[(br.from_bus, br.to_bus)] = br
        branches[(br.to_bus, br.from_bus)] = br
    for a_idx, area in enumerate(areas):
        r = net.index(area.root)
        for fb in area.first_buses:
            br = branches[(area.root, fb)]
            c = net.index(fb)
            out[:, a_idx] += (v[:, r] - v[:, c]) / br.impedance + 0.5j * br.shunt_b * v[:, r]
    return out


class Simulator:
    """Bundles a network, its areas and a scenario; each ``run`` is independent."""

    def __init__(self, net: FeederNetwork, areas, scenario: FaultScenario | None, cfg: SimConfig = SimConfig()):
        self.net = net
        self.areas = list(areas)
        self.scenario = scenario
        self.cfg = cfg

    def run(self, control: ControlAction | None = None) -> SimulationResult:
        return run_simulation(self.net, self.areas, self.scenario, self.cfg, control)


def run_simulation(net: FeederNetwork, areas, scenario: FaultScenario | None,
                   cfg: SimConfig = SimConfig(), control: ControlAction | None = None) -> SimulationResult:
    """Time-domain run of the detailed feeder.

    Returns the full bus-voltage history; area currents, stall fractions and
    relay temperatures are recorded per step. A power flow that still
    diverges after the fault-shunt and load-halving fallbacks ends the run
    early with ``collapsed=True``.
    """
    areas = list(areas)
    plant = Plant(net, areas, cfg)
    v = plant.initialize()
    n_steps = int(round(cfg.horizon / cfg.dt)) + 1
    t = np.arange(n_steps) * cfg.dt
    V = np.zeros((n_steps, net.n), complex)
    stalled = np.zeros((n_steps, len(areas)))
    theta = np.zeros((n_steps, len(areas)))
    fault_bus = net.index(scenario.bus) if scenario is not None else None
    collapsed, diagnostic = False, ""
    applied = False
    g_area = plant.node_area[plant.g_node] if len(plant.g_node) else np.zeros(0, int)
    last = n_steps
    for k in range(n_steps):
        tk = t[k]
        if control is not None and not applied and tk >= control.t_apply - 1e-9:
            plant.apply_control(control)
            applied = True
        on = scenario is not None and scenario.start - 1e-9 <= tk < scenario.clear_time - 1e-9
        try:
            v = plant.solve(v, fault_bus if on else None, scenario.fault_shunt if on else 0j)
        except PowerFlowDivergedError as exc:
            v = _fallback_solve(plant, v, fault_bus if on else None, cfg, exc)
            if v is None:
                collapsed = True
                diagnostic = f"power flow diverged at t={tk:.3f} s: {exc}"
                log.warning(diagnostic)
                last = k
                break
        V[k] = v
        stalled[k] = plant.area_trip_fraction()
        if len(g_area):
            st = plant.g_mode == 1
            num = np.bincount(g_area, np.where(st, plant.g_theta * plant.g_base, 0.0), len(areas))
            den = np.bincount(g_area, np.where(st, plant.g_base, 0.0), len(areas))
            theta[k] = np.divide(num, den, out=np.zeros(len(areas)), where=den > 0)
        plant.advance(v, cfg.dt)
    t, V, stalled, theta = t[:last], V[:last], stalled[:last], theta[:last]
    return SimulationResult(
        t=t,
        v=V,
        bus_ids=net.bus_ids,
        area_ids=[a.id for a in areas],
        area_roots=[a.root for a in areas],
        area_i=_area_currents(net, V, areas),
        area_stalled=stalled,
        area_theta=theta,
        scenario=scenario,
        config=cfg,
        collapsed=collapsed,
        diagnostic=diagnostic,
        control=control,
        metadata={"seed": cfg.seed, "dt": cfg.dt, "horizon": cfg.horizon,
                  "ac_kw_final": plant.area_ac_kw().tolist()},
    )


def _fallback_solve(plant, v, fault_bus, cfg, exc):
    """Continuation when the plain fixed point fails.

    With a fault applied the shunt is replaced by ``cfg.fallback_shunt``;
    otherwise constant-power demand is ramped back in from half.
    """
    try:
        if fault_bus is not None:
            return plant.solve(v, fault_bus, complex(cfg.fallback_shunt, 0.0))
        guess = v
        for frac in (0.5, 0.75, 0.875, 1.0):
            guess = plant.solve(guess, s_scale=frac)
        return guess
    except PowerFlowDivergedError:
        return None


# --------------------------------------------------------------------------
# μPMU stream


@dataclass(frozen=True)
class MuPmuFrame:
    t: float
    area: str
    node: int
    v: complex
    i: complex


CSV_HEADER = ("t_s", "area_id", "node_id", "v_mag_pu", "v_ang_rad", "i_mag_pu", "i_ang_rad")


def emit_mupmu_stream(result: SimulationResult, placement: dict | None = None, rate: float | None = None,
                      path=None, noise_sd: float = 0.0, seed: int = 0) -> list[MuPmuFrame]:
    """Decimate the simulation to μPMU frames, optionally writing the CSV.

    ``placement`` maps area id to its measured root node (defaults to the
    area roots). ``rate`` must divide the simulation rate. Optional additive
    Gaussian noise on magnitudes is off by default.
    """
    rate = result.config.report_hz if rate is None else rate
    sim_rate = 1.0 / result.config.dt
    ratio = sim_rate / rate
    if rate <= 0 or abs(ratio - round(ratio)) > 1e-9:
        raise ValueError(f"report rate {rate} Hz does not divide simulation rate {sim_rate:g} Hz")
    ratio = int(round(ratio))
    placement = dict(zip(result.area_ids, result.area_roots)) if placement is None else dict(placement)
    for aid in placement:
        if aid not in result.area_ids:
            raise ValueError(f"unknown area id {aid!r}")
    rng = np.random.default_rng(seed)
    cols = [(aid, result.area_ids.index(aid), node) for aid, node in placement.items()]
    frames = []
    for k in range(0, len(result.t), ratio):
        for aid, a_idx, node in cols:
            vk = result.v[k, result.bus_ids.index(node)]
            ik = result.area_i[k, a_idx]
            if noise_sd > 0:
                vk *= 1.0 + noise_sd * rng.standard_normal()
                ik *= 1.0 + noise_sd * rng.standard_normal()
            frames.append(MuPmuFrame(float(result.t[k]), aid, int(node), complex(vk), complex(ik)))
    if path is not None:
        write_mupmu_csv(frames, path)
    return frames


def _fmt(x: float) -> str:
    return format(x, ".9g")


def write_mupmu_csv(frames, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for f in frames:
        w.writerow([_fmt(f.t), f.area, f.node, _fmt(abs(f.v)), _fmt(np.angle(f.v)),
                    _fmt(abs(f.i)), _fmt(np.angle(f.i))])
    Path(path).write_text(buf.getvalue())


def read_mupmu_csv(source) -> list[MuPmuFrame]:
    """Parse the μPMU CSV from a path or an open text stream."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"bad μPMU CSV header, expected {','.join(CSV_HEADER)}")
    frames = []
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise ValueError(f"line {ln}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        t, aid, node, vm, va, im, ia = row
        frames.append(MuPmuFrame(float(t), aid, int(node), float(vm) * np.exp(1j * float(va)),
                                 float(im) * np.exp(1j * float(ia))))
    return frames
