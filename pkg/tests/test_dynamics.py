import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fidvr import dynamics as dyn

M1 = dyn.Motor1PhaseParameters()
M3 = dyn.Motor3PhaseParameters()
STALLED = dyn.LoadAreaState(motor1_mode=dyn.Motor1Mode.STALLED)


def test_relay_exponential_step_closed_form():
    assert dyn.relay_step(0.0, 1.0, 2.45, 15.0, 15.0) == pytest.approx(1.5487, abs=1e-4)


def test_relay_step_matches_fine_euler():
    theta, p_th, t_th = 0.0, 2.45, 15.0
    h = 1e-3
    for _ in range(15000):
        theta += h * (p_th - theta) / t_th
    assert theta == pytest.approx(dyn.relay_step(0.0, 1.0, p_th, t_th, 15.0), rel=1e-4)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 3), st.floats(0.1, 1.2), st.floats(0.5, 8), st.floats(1, 40), st.floats(1e-3, 5))
def test_relay_step_group_property(theta, v, g, t_th, dt):
    once = dyn.relay_step(theta, v, g, t_th, dt)
    twice = dyn.relay_step(dyn.relay_step(theta, v, g, t_th, dt / 2), v, g, t_th, dt / 2)
    assert once == pytest.approx(twice, abs=1e-12)


def test_trip_fraction_endpoints():
    assert dyn.trip_fraction(M1.theta1, M1.theta1, M1.theta2) == 1.0
    assert dyn.trip_fraction(M1.theta2, M1.theta1, M1.theta2) == 0.0
    assert dyn.trip_fraction(10.0, M1.theta1, M1.theta2) == 0.0


def test_step_thermal_relay_updates_trip_fraction():
    s = STALLED
    for _ in range(2000):
        s2 = dyn.step_thermal_relay(s, 0.8, M1, 0.01)
        assert s2.theta >= s.theta and s2.f_th <= s.f_th
        s = s2
    assert s.f_th == pytest.approx(dyn.trip_fraction(s.theta, M1.theta1, M1.theta2))
    assert s.f_th < 1.0


def test_step_thermal_relay_requires_stall():
    with pytest.raises(ValueError):
        dyn.step_thermal_relay(dyn.LoadAreaState(), 0.8, M1, 0.01)


def test_stall_after_timer_crosses():
    p = dyn.Motor1PhaseParameters(t_stall=0.032)
    s = dyn.LoadAreaState()
    for k in range(10):
        s = dyn.update_stall_state(s, 0.4, p, 0.005)
        if s.motor1_mode == dyn.Motor1Mode.STALLED:
            break
    assert s.motor1_mode == dyn.Motor1Mode.STALLED
    assert k == 6  # seventh 5 ms step: 0.035 > 0.032


def test_no_stall_above_threshold_and_timer_resets():
    s = dyn.LoadAreaState()
    for _ in range(1000):
        s = dyn.update_stall_state(s, 0.9, M1, 0.005)
    assert s.motor1_mode == dyn.Motor1Mode.RUNNING
    s = dyn.update_stall_state(s, 0.3, M1, 0.02)
    s = dyn.update_stall_state(s, 0.9, M1, 0.005)
    assert s.stall_timer == 0.0
    s = dyn.update_stall_state(s, 0.3, M1, 0.02)
    assert s.motor1_mode == dyn.Motor1Mode.RUNNING


def test_stall_is_absorbing():
    s = dyn.update_stall_state(STALLED, 1.0, M1, 0.005)
    assert s.motor1_mode == dyn.Motor1Mode.STALLED


def test_motor3_equilibrium_is_stationary():
    op = dyn.Motor3Operating.initialize(M3, 100.0, 1.0)
    assert abs(dyn.motor3_slip_derivative(op.slip0, 1.0, M3, op.t0)) <= 1e-6


def test_motor3_equilibrium_matches_torque_bisection():
    op = dyn.Motor3Operating.initialize(M3, 100.0, 1.0)
    s = dyn.LoadAreaState(slip3=0.2)
    for _ in range(20000):
        s = dyn.motor3_step(s, 1.0, M3, 0.005, op.t0)
    args = (M3.r_s, M3.x_ls, M3.x_m, M3.r_r, M3.x_lr)

    def gap(x):
        return op.t0 * (1 - x) ** M3.load_torque_exponent - dyn.motor3_torque(x, 1.0, *args)

    lo, hi = 1e-6, 0.1
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if gap(mid) > 0 else (lo, mid)
    assert s.slip3 == pytest.approx(lo, abs=1e-4)


def test_motor3_slip_rises_at_zero_voltage():
    op = dyn.Motor3Operating.initialize(M3, 100.0, 1.0)
    s = dyn.LoadAreaState(slip3=op.slip0)
    prev = s.slip3
    for _ in range(500):
        s = dyn.motor3_step(s, 0.0, M3, 0.005, op.t0)
        assert s.slip3 >= prev
        prev = s.slip3
    assert prev > op.slip0


def _block(**kw):
    comp = dyn.LoadComposition(100.0, f_s=0.3, f_el=0.1, f_m1=0.4, f_m3=0.2)
    return dyn.LoadBlock(comp, **kw)


def test_fully_tripped_block_adds_nothing():
    blk = _block()
    tripped = dyn.LoadAreaState(motor1_mode=dyn.Motor1Mode.STALLED, f_th=0.0, slip3=0.02)
    never = dyn.LoadAreaState(motor1_mode=dyn.Motor1Mode.NEVER_STALLED, slip3=0.02)
    assert dyn.aggregate_load_injection(blk, tripped, 1.0) == dyn.aggregate_load_injection(blk, never, 1.0)


def test_stalled_admittance_scaled_by_motor_base():
    m1 = dyn.Motor1PhaseParameters(r_stall=0.1, x_stall=0.1)
    blk = _block(motor1=m1)
    full = dyn.LoadAreaState(motor1_mode=dyn.Motor1Mode.STALLED, f_th=1.0, slip3=0.02)
    none = dyn.LoadAreaState(motor1_mode=dyn.Motor1Mode.STALLED, f_th=0.0, slip3=0.02)
    _, y1 = dyn.aggregate_load_injection(blk, full, 1.0)
    _, y0 = dyn.aggregate_load_injection(blk, none, 1.0)
    base = 0.4 * 100.0 * 1e-3 / m1.p_nom
    assert y1 - y0 == pytest.approx((5 - 5j) * base)


def test_stalled_reactive_demand_about_six_times_running():
    ratio = M1.b_stall / M1.q_nom
    assert 4.0 < ratio < 8.0


def test_parameter_invariants():
    with pytest.raises(ValueError):
        dyn.Motor1PhaseParameters(theta1=2.0, theta2=1.0)
    with pytest.raises(ValueError):
        dyn.ZipParameters(p_z0=0.5)
    with pytest.raises(ValueError):
        dyn.PvParameters(p_pv=2.0, s_rating=1.0)
    with pytest.raises(ValueError):
        dyn.LoadComposition(100.0, f_s=0.5, f_el=0.0, f_m1=0.4, f_m3=0.2)
    pv = dyn.PvParameters.sized_for(10.0)
    # full reactive headroom available with the inverter at full active output
    assert math.hypot(pv.p_pv, pv.q_max) == pytest.approx(pv.s_rating)
