import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from fidvr import dynamics as dyn
from fidvr import monitor

P = dyn.Motor1PhaseParameters(t_th=15.0, theta1=0.7, theta2=3.0, r_stall=0.1, x_stall=0.1)  # G_stall = 5


def test_load_point_voltage():
    v = 0.95 + 0j
    i = np.exp(-1j * math.pi / 6)
    assert abs(monitor.compute_load_point_voltage(v, i, 0.01 + 0.02j)) == pytest.approx(0.93142, abs=1e-5)
    assert monitor.compute_load_point_voltage(v, 0j, 0.01 + 0.02j) == v
    assert monitor.compute_load_point_voltage(v, i, 0j) == v


def test_area_admittance():
    s = monitor.compute_area_admittance([0.0, 0.01], [0.9, 0.02], [0.9 - 1.8j, 0.1])
    assert s.y[0] == pytest.approx(1 - 2j)
    assert s.b[0] == pytest.approx(2.0)
    assert not s.usable[1] and np.isnan(s.y[1])
    assert monitor.compute_area_admittance([0.0], [0.9], [0j]).y[0] == 0


@settings(max_examples=50, deadline=None)
@given(st.floats(0.3, 10), st.floats(-3, 3), st.floats(0.2, 1.2), st.floats(-3, 3))
def test_admittance_homogeneous(alpha, phase, vm, iang):
    v = np.array([vm * np.exp(0.3j)])
    i = np.array([0.7 * np.exp(1j * iang)])
    a = alpha * np.exp(1j * phase)
    y1 = monitor.compute_area_admittance([0.0], v, i).y
    y2 = monitor.compute_area_admittance([0.0], a * v, a * i).y
    assert y2 == pytest.approx(y1, rel=1e-12)


def synthetic(b_post, v_post=0.7, t_end=3.0):
    t = np.round(np.arange(0, t_end, 0.01), 10)
    v = np.where(t < 1.0, 1.0, v_post).astype(complex)
    fault = (t >= 1.0) & (t < 1.08)
    v[fault] = 0.02
    b = np.where(t < 1.0, 1.0, b_post)
    i = v * (0.5 - 1j * b)
    return monitor.compute_area_admittance(t, v, i)


def test_detects_susceptance_jump():
    ev = monitor.detect_fidvr({"A": synthetic(4.8)})
    assert ev is not None and ev.areas == ("A",)
    # trailing median crosses once the post-clear samples dominate the window
    assert 1.08 <= ev.t_detect <= 1.08 + 0.1


@pytest.mark.parametrize("b_post", [1.0, 1.5])
def test_no_event_below_ratio(b_post):
    assert monitor.detect_fidvr({"A": synthetic(b_post)}) is None


def test_short_history_rejected():
    s = monitor.compute_area_admittance([0.0, 0.1], [1.0, 1.0], [0.5, 0.5])
    with pytest.raises(monitor.NotEnoughDataError):
        monitor.detect_fidvr({"A": s})


def test_t1_closed_form_and_limits():
    assert monitor.estimate_t1(0.7, P) == pytest.approx(5.047, abs=1e-3)
    tiny = dyn.Motor1PhaseParameters(t_th=15.0, theta1=1e-9, theta2=3.0, r_stall=0.1, x_stall=0.1)
    assert monitor.estimate_t1(0.7, tiny) < 1e-6
    with pytest.raises(monitor.NeverTripsError):
        monitor.estimate_t1(math.sqrt(0.7 / 5.0), P)


def test_t2_closed_form_and_limits():
    assert monitor.estimate_t2(0.7, 0.95, P) == pytest.approx(21.149, abs=1e-3)
    narrow = dyn.Motor1PhaseParameters(t_th=15.0, theta1=0.7, theta2=0.7 + 1e-9, r_stall=0.1, x_stall=0.1)
    assert monitor.estimate_t2(0.7, 0.95, narrow) < 1e-6
    with pytest.raises(monitor.NoRecoveryEstimateError):
        monitor.estimate_t2(0.3, 0.5, P)
    assert monitor.estimate_t1(0.7, P) + monitor.estimate_t2(0.7, 0.95, P) == pytest.approx(26.196, abs=1e-3)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.5, 1.0), st.floats(0.001, 0.2))
def test_t2_strictly_decreasing_in_v(v, dv):
    try:
        lo = monitor.estimate_t2(v, 0.95, P)
    except monitor.NoRecoveryEstimateError:
        return
    assert monitor.estimate_t2(v + dv, 0.95, P) < lo


def test_t1_matches_relay_ode():
    for v in (0.5, 0.7, 0.9):
        ev = lambda t, x: x[0] - P.theta1  # noqa: E731
        ev.terminal = True
        sol = solve_ivp(lambda t, x: [(v * v * P.g_stall - x[0]) / P.t_th], [0, 200], [0.0], events=ev,
                        rtol=1e-10, atol=1e-12)
        assert monitor.estimate_t1(v, P) == pytest.approx(sol.t_events[0][0], rel=1e-6)


@pytest.mark.parametrize("v", [0.6, 0.75, 0.95])
@pytest.mark.parametrize("which", ["t1", "t2"])
def test_derivatives_match_finite_differences(v, which):
    h = 1e-6
    if which == "t1":
        f, d = (lambda x: monitor.estimate_t1(x, P)), monitor.dt1_dv(v, P)
    else:
        f, d = (lambda x: monitor.estimate_t2(x, 0.95, P)), monitor.dt2_dv(v, 0.95, P)
    fd = (f(v + h) - f(v - h)) / (2 * h)
    assert d == pytest.approx(fd, rel=1e-4)
    assert d < 0


def _report_for(result, submodels):
    from fidvr.simulation import emit_mupmu_stream

    return monitor.monitor_report(emit_mupmu_stream(result), submodels)


def test_reference_event_estimate(ref_result, submodels):
    rep = _report_for(ref_result, submodels)
    assert rep["event"] is not None
    t_sim = ref_result.recovery_time()
    assert abs(rep["t_total"] - t_sim) / t_sim <= 0.15
    assert set(rep["estimates"]) <= set(submodels)


def test_no_event_without_fault(ref_net, ref_areas, submodels):
    from fidvr.simulation import SimConfig, run_simulation

    res = run_simulation(ref_net, ref_areas, None, SimConfig(horizon=3.0))
    rep = _report_for(res, submodels)
    assert rep["event"] is None and rep["t_total"] is None


def test_all_never_trip_gives_alarm():
    cfg = monitor.MonitorConfig(v_fault=0.2)
    series = {"A": synthetic(4.8, v_post=0.3)}
    ev = monitor.detect_fidvr(series, cfg)
    cold = dyn.Motor1PhaseParameters(theta1=2.0, theta2=3.0)
    est = monitor.estimate_recovery(ev, series, {"A": cold}, cfg)
    assert est.t_total is None
    flags = {f["flag"] for f in est.flags}
    assert {"never_trips", "no_thermal_recovery_predicted"} <= flags
