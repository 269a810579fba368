import numpy as np
import pytest

from fidvr import grid
from fidvr import mitigation as mit
from fidvr import monitor
from fidvr import dynamics as dyn

P = dyn.Motor1PhaseParameters(t_th=15.0, theta1=0.7, theta2=3.0, r_stall=0.1, x_stall=0.1)


def test_time_voltage_derivatives():
    d1, d2 = mit.compute_time_voltage_derivatives({"A": 0.7}, 0.95, {"A": P})
    assert d1["A"] == pytest.approx(-17.143, abs=1e-3)
    assert d2["A"] == pytest.approx(-45.38, abs=1e-2)


def test_area_at_pole_excluded():
    # with v_rec = 0.5 the t2 denominator vanishes at v_l = 0.7
    d1, d2 = mit.compute_time_voltage_derivatives({"A": 0.69, "B": 0.8}, 0.5, {"A": P, "B": P})
    assert "A" not in d1 and "B" in d1
    assert abs(monitor.dt2_dv(0.7 + 1e-7, 0.5, P)) > 1e6


def test_assemble_scalar_and_clamp(caplog):
    m = mit.assemble_A([-4.0], [-6.0], [[0.01]])
    assert m.a[0, 0] == pytest.approx(-0.1)
    m = mit.assemble_A([-4.0, -1.0], [-6.0, -1.0], [[0.01, -0.02], [0.0, 0.03]])
    assert np.all(m.a <= 0)
    assert m.a[0, 1] == 0.0 and "clamping" in caplog.text
    with pytest.raises(ValueError, match="dimension"):
        mit.assemble_A([-1.0], [-1.0, -2.0], [[0.1]])


def _model(a, u_max):
    a = np.atleast_2d(a)
    controls = tuple(mit.ControlVariable(f"A{k}", mit.AC, u, 1.0) for k, u in enumerate(u_max))
    return mit.SensitivityModel(tuple(f"R{k}" for k in range(a.shape[0])), controls,
                                np.zeros(a.shape[0]), np.zeros(a.shape[0]), a, a)


def test_lp_examples():
    plan = mit.solve_mitigation_lp(_model([[-1.0]], [5.0]), -2.0)
    assert plan.status == "optimal"
    assert plan.amounts == pytest.approx([2.0]) and plan.objective == pytest.approx(2.0)
    plan = mit.solve_mitigation_lp(_model([[-0.02, -0.005]], [120, 120]), -2.0)
    assert plan.amounts == pytest.approx([100.0, 0.0])
    plan = mit.solve_mitigation_lp(_model([[-0.02, -0.005]], [120, 120]), 0.0)
    assert np.all(plan.amounts == 0)


def test_lp_infeasible_reports_reach():
    plan = mit.solve_mitigation_lp(_model([[-1.0]], [1.0]), -2.0)
    assert plan.status == "infeasible"
    assert plan.max_achievable_dt["R0"] == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        mit.solve_mitigation_lp(_model([[-1.0]], [1.0]), 1.0)


def test_prediction_is_linear():
    m = _model([[-0.02, -0.005], [-0.01, -0.03]], [50, 50])
    u = np.array([3.0, 7.0])
    p1 = mit.predict_delta_t(m, u)
    p2 = mit.predict_delta_t(m, 2 * u)
    assert all(p2[a] == pytest.approx(2 * p1[a], rel=1e-15) for a in p1)
    assert all(v == 0 for v in mit.predict_delta_t(m, np.zeros(2)).values())


def test_required_change():
    assert mit.required_change(17.9, 10.0) == pytest.approx(-7.9)
    assert mit.required_change(8.0, 10.0) == 0.0
    assert mit.required_change(None) == 0.0


def test_disconnection_amounts_on_reference_areas(ref_areas):
    areas = {a.id: a for a in ref_areas}
    assert 0.3 * areas["A5"].ac_kw == pytest.approx(108.8, abs=0.1)
    controls = mit.make_controls(areas, use_pv=False)
    assert float(np.sum(mit.uniform_plan(controls, 0.3, areas))) == pytest.approx(275.1, abs=0.1)


def test_model_shape(ref_net, submodels):
    controls = mit.make_controls(submodels)
    assert len(controls) == 12
    v_l = {a: 0.7 for a in submodels}
    model = mit.build_sensitivity_model(ref_net, submodels, v_l, controls)
    assert model.a.shape == (6, 12)
    assert np.all(model.a <= 0)


@pytest.fixture(scope="module")
def operating_point(ref_net, submodels):
    return mit.stalled_operating_point(ref_net, submodels)


def test_sensitivity_columns_match_perturbed_power_flow(operating_point, submodels):
    red, area_bus, v, y = operating_point
    controls = mit.make_controls(submodels)
    rows = tuple(submodels)
    s_vu = mit.compute_voltage_control_sensitivities(red, v, y, area_bus, submodels, controls, rows)
    s0 = np.zeros(red.n, complex)
    for aid, m in submodels.items():
        s0[red.index(area_bus[aid])] = mit.stalled_area_load(m)[0]
    idx = [red.index(area_bus[a]) for a in rows]
    for j, c in enumerate(controls):
        k = red.index(area_bus[c.area])
        s1, y1 = s0.copy(), y.copy()
        if c.kind == mit.AC:
            m1 = submodels[c.area].motor1
            y1[k] -= m1.y_stall * 1e-3 / m1.p_nom
        else:
            s1[k] -= 1e-3j
        v1 = grid.solve_power_flow(red, s1, y1, v0=v)
        brute = np.abs(v1[idx]) - np.abs(v[idx])
        assert s_vu[:, j] == pytest.approx(brute, rel=0.05, abs=1e-3 * np.max(np.abs(brute)))


def test_reactive_injection_raises_own_voltage(operating_point, submodels):
    red, area_bus, v, y = operating_point
    controls = tuple(c for c in mit.make_controls(submodels) if c.kind == mit.PV)
    rows = tuple(c.area for c in controls)
    s_vu = mit.compute_voltage_control_sensitivities(red, v, y, area_bus, submodels, controls, rows)
    assert np.all(np.diag(s_vu) > 0)


def test_plan_to_action_fractions():
    controls = (mit.ControlVariable("A1", mit.AC, 50, 1.0), mit.ControlVariable("A1", mit.PV, 20, 0.01))
    act = mit.plan_to_action(controls, [25.0, 5.0], {"A1": 100.0}, 3.0)
    assert act.ac_fraction == {"A1": 0.25} and act.pv_q_kvar == {"A1": 5.0}
    act = mit.plan_to_action(controls, [500.0, 0.0], {"A1": 100.0}, 3.0)
    assert act.ac_fraction["A1"] == 1.0


def test_zero_plan_matches_uncontrolled(ref_net, ref_areas, submodels):
    from fidvr.simulation import FaultScenario, SimConfig, run_simulation

    cfg = SimConfig(horizon=4.0)
    sc = FaultScenario(701, 0.5, 0.08, 40 - 40j)
    controls = mit.make_controls(submodels)
    plan = mit.MitigationPlan(controls, np.zeros(len(controls)), {}, 0.0, "optimal", {})
    a = mit.apply_control_plan(plan, ref_net, ref_areas, sc, cfg, t_detect=1.0)
    b = run_simulation(ref_net, ref_areas, sc, cfg)
    assert np.array_equal(a.v, b.v)
