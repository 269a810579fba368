"""Composite-load components and their state-stepping rules.

The scalar kernels here are compiled with numba so that the same code drives
both the detailed feeder simulator (vectorized over motor groups) and the
single-area sub-model playback used during parameter fitting.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from fidvr.grid import stall_admittance


class Motor1Mode(enum.IntEnum):
    RUNNING = 0
    STALLED = 1
    # block has no A/C share; stall logic disabled
    NEVER_STALLED = 2


@dataclass(frozen=True)
class Motor1PhaseParameters:
    """Single-phase A/C compressor motor with thermal relay (motor base)."""

    v_stall: float = 0.55
    t_stall: float = 0.033
    r_stall: float = 0.072
    x_stall: float = 0.091
    t_th: float = 13.62
    theta1: float = 0.739
    theta2: float = 2.615
    p_nom: float = 1.7
    q_nom: float = 1.1

    def __post_init__(self):
        if not 0.0 < self.theta1 < self.theta2:
            raise ValueError(f"need 0 < theta1 < theta2, got {self.theta1}, {self.theta2}")
        if self.t_th <= 0 or self.t_stall <= 0:
            raise ValueError("time constants must be positive")
        if not 0.0 < self.v_stall < 1.0:
            raise ValueError("v_stall must lie in (0, 1)")
        if self.r_stall <= 0 or self.x_stall <= 0:
            raise ValueError("stall impedance must be positive")
        if self.p_nom <= 0:
            raise ValueError("p_nom must be positive")

    @property
    def y_stall(self) -> complex:
        return stall_admittance(self.r_stall, self.x_stall)

    @property
    def g_stall(self) -> float:
        return self.y_stall.real

    @property
    def b_stall(self) -> float:
        return -self.y_stall.imag


@dataclass(frozen=True)
class Motor3PhaseParameters:
    """Lumped three-phase motor, single-cage equivalent circuit (motor base).

    ``r_r2`` / ``x_lr2`` (second cage) are carried for completeness and are
    not simulated.
    """

    r_s: float = 0.02
    x_ls: float = 0.10
    x_m: float = 3.0
    r_r: float = 0.02
    x_lr: float = 0.10
    h: float = 0.5
    load_torque_exponent: float = 2.0
    loading: float = 0.8
    r_r2: float | None = None
    x_lr2: float | None = None

    def __post_init__(self):
        if min(self.x_ls, self.x_m, self.x_lr) <= 0:
            raise ValueError("motor reactances must be positive")
        if self.h <= 0:
            raise ValueError("inertia must be positive")
        if self.r_r <= 0 or self.r_s < 0:
            raise ValueError("motor resistances must be non-negative (rotor positive)")
        if not 0 < self.loading <= 1.2:
            raise ValueError("loading must lie in (0, 1.2]")


@dataclass(frozen=True)
class ZipParameters:
    """Static load split into constant-Z / I / P parts for P and Q."""

    p_z0: float = 0.4
    p_i0: float = 0.3
    p_p0: float = 0.3
    q_z0: float = 0.5
    q_i0: float = 0.3
    q_p0: float = 0.2
    q_sh0: float = 0.0
    pf: float = 0.95

    def __post_init__(self):
        if abs(self.p_z0 + self.p_i0 + self.p_p0 - 1.0) > 1e-9:
            raise ValueError("ZIP P fractions must sum to 1")
        if abs(self.q_z0 + self.q_i0 + self.q_p0 - 1.0) > 1e-9:
            raise ValueError("ZIP Q fractions must sum to 1")
        if not 0 < self.pf <= 1:
            raise ValueError("static power factor must lie in (0, 1]")

    @property
    def q_ratio(self) -> float:
        return math.tan(math.acos(self.pf))


@dataclass(frozen=True)
class PvParameters:
    """Inverter-based PV; ``p_pv`` and ``s_rating`` in kW / kVA."""

    p_pv: float = 0.0
    s_rating: float = 0.0
    q_max_frac: float = 0.44

    def __post_init__(self):
        if not 0 <= self.q_max_frac <= 1:
            raise ValueError("q_max_frac must lie in [0, 1]")
        if self.p_pv > self.s_rating + 1e-12:
            raise ValueError("PV output exceeds inverter rating")

    @property
    def q_max(self) -> float:
        return self.q_max_frac * self.s_rating

    @classmethod
    def sized_for(cls, p_pv: float, q_max_frac: float = 0.44) -> "PvParameters":
        """Inverter rated so that ``q_max_frac`` of it is available at full output."""
        return cls(p_pv, p_pv / math.sqrt(1.0 - q_max_frac ** 2), q_max_frac)


@dataclass(frozen=True)
class LoadComposition:
    p_total: float
    f_s: float
    f_el: float
    f_m1: float
    f_m3: float
    f_pv: float = 0.0

    def __post_init__(self):
        fr = (self.f_s, self.f_el, self.f_m1, self.f_m3, self.f_pv)
        if min(fr) < 0 or max(fr) > 1:
            raise ValueError("load fractions must lie in [0, 1]")
        if abs(self.f_s + self.f_el + self.f_m1 + self.f_m3 - 1.0) > 1e-9:
            raise ValueError("demand fractions must sum to 1")


@dataclass(frozen=True)
class LoadAreaState:
    motor1_mode: Motor1Mode = Motor1Mode.RUNNING
    stall_timer: float = 0.0
    theta: float = 0.0
    f_th: float = 1.0
    slip3: float = 0.0


# --------------------------------------------------------------------------
# numba kernels (scalar)


@numba.njit(cache=True)
def trip_fraction(theta, theta1, theta2):
    f = 1.0 - (theta - theta1) / (theta2 - theta1)
    if f < 0.0:
        return 0.0
    if f > 1.0:
        return 1.0
    return f


@numba.njit(cache=True)
def relay_step(theta, v_mag, g_stall, t_th, dt):
    """Exact exponential update of the relay temperature over one step."""
    p_th = v_mag * v_mag * g_stall
    return p_th + (theta - p_th) * math.exp(-dt / t_th)


@numba.njit(cache=True)
def stall_step(mode, timer, v_mag, v_stall, t_stall, dt):
    """Running/stalled state machine; returns (mode, timer)."""
    if mode != 0:
        return mode, timer
    if v_mag < v_stall:
        timer += dt
        if timer > t_stall:
            return 1, timer
        return 0, timer
    return 0, 0.0


@numba.njit(cache=True)
def motor3_admittance(s, r_s, x_ls, x_m, r_r, x_lr):
    """Input admittance of the single-cage circuit at slip ``s``."""
    zm = 1j * x_m
    if s <= 1e-9:
        zr_branch = zm
    else:
        zr = r_r / s + 1j * x_lr
        zr_branch = zm * zr / (zm + zr)
    return 1.0 / (r_s + 1j * x_ls + zr_branch)


@numba.njit(cache=True)
def motor3_torque(s, v_mag, r_s, x_ls, x_m, r_r, x_lr):
    """Electrical torque (= air-gap power at synchronous speed)."""
    if s <= 1e-9:
        return 0.0
    zm = 1j * x_m
    zr = r_r / s + 1j * x_lr
    zin = r_s + 1j * x_ls + zm * zr / (zm + zr)
    i_s = v_mag / zin
    i_r = i_s * zm / (zm + zr)
    return abs(i_r) ** 2 * r_r / s


@numba.njit(cache=True)
def motor3_slip_step(s, v_mag, t0, exponent, h, dt, r_s, x_ls, x_m, r_r, x_lr):
    t_mech = t0 * (1.0 - s) ** exponent
    t_elec = motor3_torque(s, v_mag, r_s, x_ls, x_m, r_r, x_lr)
    s = s + dt * (t_mech - t_elec) / (2.0 * h)
    if s < 0.0:
        return 0.0
    if s > 1.0:
        return 1.0
    return s


@numba.njit(cache=True)
def motor3_power(s, v_mag, r_s, x_ls, x_m, r_r, x_lr):
    y = motor3_admittance(s, r_s, x_ls, x_m, r_r, x_lr)
    return v_mag * v_mag * np.conj(y)


@numba.njit(cache=True)
def motor3_equilibrium_slip(p_target, v_mag, r_s, x_ls, x_m, r_r, x_lr):
    """Slip at which the motor draws ``p_target`` (motor base) at ``v_mag``.

    Bisection on the stable branch (below the breakdown slip).
    """
    lo, hi = 1e-7, 0.5
    # breakdown slip bounds the stable branch
    s_bd = r_r / math.sqrt(r_s * r_s + (x_ls + x_lr) ** 2)
    if s_bd < hi:
        hi = s_bd
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        p = motor3_power(mid, v_mag, r_s, x_ls, x_m, r_r, x_lr).real
        if p < p_target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# vectorized group updates


@numba.njit(cache=True)
def advance_motor1_groups(mode, timer, theta, f_th, v_mag, v_stall, t_stall, g_stall,
                          t_th, theta1, theta2, dt):
    """Advance every A/C group in place given its terminal voltage."""
    for k in range(mode.shape[0]):
        if mode[k] == 2:
            continue
        if mode[k] == 1:
            theta[k] = relay_step(theta[k], v_mag[k], g_stall[k], t_th[k], dt)
            f_th[k] = trip_fraction(theta[k], theta1[k], theta2[k])
        else:
            m, tm = stall_step(mode[k], timer[k], v_mag[k], v_stall[k], t_stall[k], dt)
            mode[k] = m
            timer[k] = tm
            if m == 1:
                theta[k] = 0.0
                f_th[k] = 1.0


@numba.njit(cache=True)
def advance_motor3(slip, v_mag, t0, exponent, h, dt, r_s, x_ls, x_m, r_r, x_lr):
    for k in range(slip.shape[0]):
        slip[k] = motor3_slip_step(slip[k], v_mag[k], t0[k], exponent[k], h[k], dt,
                                   r_s[k], x_ls[k], x_m[k], r_r[k], x_lr[k])


@numba.njit(cache=True)
def motor3_admittances(slip, r_s, x_ls, x_m, r_r, x_lr):
    out = np.empty(slip.shape[0], dtype=np.complex128)
    for k in range(slip.shape[0]):
        out[k] = motor3_admittance(slip[k], r_s[k], x_ls[k], x_m[k], r_r[k], x_lr[k])
    return out


# --------------------------------------------------------------------------
# public single-area step functions


def step_thermal_relay(state: LoadAreaState, v_load: float, params: Motor1PhaseParameters,
                       dt: float) -> LoadAreaState:
    """Advance the relay temperature of a stalled block by ``dt``.

    The heating input ``v_load**2 * G_stall`` is frozen over the step and the
    first-order lag is integrated exactly, so the update is exact for
    piecewise-constant voltage.
    """
    if state.motor1_mode != Motor1Mode.STALLED:
        raise ValueError("thermal relay only runs while the motor is stalled")
    if dt <= 0:
        raise ValueError("dt must be positive")
    theta = relay_step(state.theta, abs(v_load), params.g_stall, params.t_th, dt)
    return replace(state, theta=theta, f_th=trip_fraction(theta, params.theta1, params.theta2))


def update_stall_state(state: LoadAreaState, v_load: float, params: Motor1PhaseParameters,
                       dt: float) -> LoadAreaState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.motor1_mode != Motor1Mode.RUNNING:
        return state
    mode, timer = stall_step(0, state.stall_timer, abs(v_load), params.v_stall, params.t_stall, dt)
    if mode == 1:
        return replace(state, motor1_mode=Motor1Mode.STALLED, stall_timer=timer, theta=0.0, f_th=1.0)
    return replace(state, stall_timer=timer)


@dataclass(frozen=True)
class Motor3Operating:
    """Initialization of a lumped 3-phase motor at a given terminal voltage."""

    base_kva: float
    slip0: float
    t0: float

    @classmethod
    def initialize(cls, params: Motor3PhaseParameters, p_kw: float, v_mag: float) -> "Motor3Operating":
        """Size the motor base so it draws ``p_kw`` at ``params.loading`` and ``v_mag``."""
        args = (params.r_s, params.x_ls, params.x_m, params.r_r, params.x_lr)
        s0 = motor3_equilibrium_slip(params.loading, v_mag, *args)
        t_e = motor3_torque(s0, v_mag, *args)
        t0 = t_e / (1.0 - s0) ** params.load_torque_exponent
        return cls(p_kw / params.loading, s0, t0)


def motor3_step(state: LoadAreaState, v_load: float, params: Motor3PhaseParameters, dt: float,
                t0: float) -> LoadAreaState:
    """Explicit-Euler slip update ``2H ds/dt = T_mech(s) - T_elec(s, V)``."""
    if not 0.0 <= state.slip3 <= 1.0:
        raise ValueError("slip must lie in [0, 1]")
    s = motor3_slip_step(state.slip3, abs(v_load), t0, params.load_torque_exponent, params.h, dt,
                         params.r_s, params.x_ls, params.x_m, params.r_r, params.x_lr)
    return replace(state, slip3=s)


def motor3_slip_derivative(s: float, v_load: float, params: Motor3PhaseParameters, t0: float) -> float:
    t_mech = t0 * (1.0 - s) ** params.load_torque_exponent
    t_elec = motor3_torque(s, abs(v_load), params.r_s, params.x_ls, params.x_m, params.r_r, params.x_lr)
    return (t_mech - t_elec) / (2.0 * params.h)


@dataclass(frozen=True)
class LoadBlock:
    """Everything needed to turn one area's state into a network injection."""

    composition: LoadComposition
    motor1: Motor1PhaseParameters = field(default_factory=Motor1PhaseParameters)
    motor3: Motor3PhaseParameters = field(default_factory=Motor3PhaseParameters)
    zip: ZipParameters = field(default_factory=ZipParameters)
    pv: PvParameters | None = None
    v0: float = 1.0
    motor3_op: Motor3Operating | None = None
    pv_q_kvar: float = 0.0


def aggregate_load_injection(block: LoadBlock, state: LoadAreaState, v: complex,
                             base_mva: float = 1.0) -> tuple[complex, complex]:
    """Split the area demand into (constant power, admittance) on system base.

    Constant-current ZIP parts are evaluated at ``|v|`` and reported inside
    the constant-power term. PV output is negative demand.
    """
    comp = block.composition
    scale = 1e-3 / base_mva
    vm = abs(v)
    p_kw = comp.p_total
    z = block.zip
    p_s = comp.f_s * p_kw * scale
    q_s = p_s * z.q_ratio
    v0sq = block.v0 ** 2
    y = complex(p_s * z.p_z0, -q_s * z.q_z0) / v0sq
    y += complex(0.0, z.q_sh0 * p_kw * scale)
    s_const = complex(p_s * z.p_p0, q_s * z.q_p0)
    s_const += complex(p_s * z.p_i0, q_s * z.q_i0) * vm / block.v0
    s_const += comp.f_el * p_kw * scale

    m1 = block.motor1
    ac_base = comp.f_m1 * p_kw * scale / m1.p_nom
    if comp.f_m1 > 0 and state.motor1_mode == Motor1Mode.STALLED:
        y += state.f_th * ac_base * m1.y_stall
    elif comp.f_m1 > 0 and state.motor1_mode == Motor1Mode.RUNNING:
        s_const += complex(m1.p_nom, m1.q_nom) * ac_base

    if comp.f_m3 > 0:
        m3 = block.motor3
        op = block.motor3_op or Motor3Operating.initialize(m3, comp.f_m3 * p_kw, block.v0)
        y += complex(motor3_admittance(state.slip3, m3.r_s, m3.x_ls, m3.x_m, m3.r_r, m3.x_lr)) \
            * op.base_kva * scale

    if block.pv is not None and block.pv.p_pv > 0:
        q = min(block.pv_q_kvar, block.pv.q_max)
        s_const -= complex(block.pv.p_pv, q) * scale
    return s_const, y
