import numpy as np
import pytest

from fidvr import grid, rdsm
from fidvr import reference as ref


@pytest.fixture(scope="module")
def a5():
    return {a.id: a for a in ref.build_areas()}["A5"]


@pytest.fixture(scope="module")
def truth(a5):
    m = rdsm.initial_submodel(a5, 0.02 + 0.04j)
    return rdsm.with_values(m, ("f_s", "f_m1", "f_m3"), (0.3, 0.5, 0.15))


def playback_channel(m, v_post, dt=0.05, horizon=30.0):
    t = np.round(np.arange(0, horizon, dt), 10)
    v = np.where(t < 1.0, 1.0, v_post).astype(complex)
    fault = (t >= 1.0) & (t < 1.1)
    v[fault] = 0.2
    r = rdsm.simulate_submodel(m, t, v)
    return rdsm.FitChannel(t, v, r.p + 1j * r.q, 1.0, ~fault)


def test_sweep_cross_product():
    sw = rdsm.ScenarioSweepSpec((701,), (0.05, 0.08), (40 - 40j, 20 - 20j, 10 - 10j))
    assert len(sw.scenarios()) == 6
    again = rdsm.ScenarioSweepSpec.from_dict(sw.to_dict())
    assert again == sw
    with pytest.raises(ValueError):
        rdsm.ScenarioSweepSpec((), (0.05,), (1j,))


def test_single_branch_equivalent_exact():
    z = 0.03 + 0.07j
    net = grid.FeederNetwork([grid.Bus(1, is_source=True), grid.Bus(2)], [grid.Branch(1, 2, z)],
                             grid.TheveninSource(1.0, 0.01 + 0.05j))
    vr, va, ia = [], [], []
    for k in (0.8, 1.0, 1.2):
        v = grid.solve_power_flow(net, s_load=[0, k * (0.3 + 0.1j)])
        vr.append(v[0])
        va.append(v[1])
        ia.append((v[0] - v[1]) / z)
    zf = rdsm.estimate_feeder_equivalent(vr, va, ia)
    assert abs(zf - z) <= 1e-6


def test_two_branch_equivalent_against_circuit():
    z1, z2 = 0.02 + 0.05j, 0.03 + 0.04j
    l1, l2 = 0.2 + 0.08j, 0.3 + 0.1j
    net = grid.FeederNetwork([grid.Bus(0, is_source=True), grid.Bus(1), grid.Bus(2)],
                             [grid.Branch(0, 1, z1), grid.Branch(1, 2, z2)], grid.TheveninSource(1.0, 0.01j))
    w1, w2 = l1.real, l2.real
    vr, va, ia, brute = [], [], [], []
    for k in (0.8, 1.0, 1.2):
        v = grid.solve_power_flow(net, s_load=[0, k * l1, k * l2])
        i = (v[0] - v[1]) / z1
        i2 = (v[1] - v[2]) / z2
        vr.append(v[0])
        va.append((w1 * v[1] + w2 * v[2]) / (w1 + w2))
        ia.append(i)
        brute.append(z1 + z2 * (w2 / (w1 + w2)) * i2 / i)
    zf = rdsm.estimate_feeder_equivalent(vr, va, ia)
    assert abs(zf - np.mean(brute)) <= 1e-3 * abs(zf)
    upper = z1 + z2 * w2 / (w1 + w2)
    assert z1.real < zf.real < upper.real and z1.imag < zf.imag < upper.imag


def test_feeder_equivalent_rejects_degenerate_input():
    with pytest.raises(ValueError, match="no current"):
        rdsm.estimate_feeder_equivalent([1, 1, 1], [1, 1, 1], [0, 0, 0])
    with pytest.raises(ValueError, match="identical"):
        rdsm.estimate_feeder_equivalent([1, 1, 1], [0.9, 0.9, 0.9], [0.1, 0.1, 0.1])
    with pytest.raises(ValueError, match="at least 3"):
        rdsm.estimate_feeder_equivalent([1, 1], [0.9, 0.9], [0.1, 0.2])


def test_no_ac_gives_no_stall(truth):
    m = rdsm.with_values(truth, ("f_s", "f_m1", "f_m3"), (0.8, 0.0, 0.15))
    ch = playback_channel(m, 0.8)
    after = ch.t > 2.0
    assert np.ptp(ch.s.imag[after]) < 1e-3 * np.max(np.abs(ch.s.imag))


def test_flat_boundary_is_steady(truth):
    t = np.arange(0, 10, 0.01)
    r = rdsm.simulate_submodel(truth, t, np.ones_like(t, complex))
    assert np.ptp(r.p) <= 1e-6 and np.ptp(r.q) <= 1e-6
    assert r.p[0] == pytest.approx(truth.p_load_kw * 1e-3 * (1 - truth.f_pv), rel=0.02)


def test_stall_signature_jump_then_ramp(truth):
    ch = playback_channel(truth, 0.82)
    q = ch.s.imag
    pre = q[ch.t < 1.0][-1]
    k = np.flatnonzero(ch.t >= 1.2)
    peak = q[k].max()
    assert peak > 2 * pre
    assert q[-1] < 0.6 * peak
    tail = q[k[np.argmax(q[k])]:]
    # motor slip settles with sub-ppm wiggles once tripping is over
    assert np.all(np.diff(tail) <= 1e-5 * peak)


def test_round_trip_recovers_parameters(truth):
    chs = [playback_channel(truth, 0.82), playback_channel(truth, 0.9)]
    guess = rdsm.with_values(truth, rdsm.FREE_DEFAULT, (0.35, 0.4, 0.2, 0.085, 0.11, 11.0, 0.6, 3.1))
    res = rdsm.fit_parameters(rdsm.FitProblem(guess, chs), starts=1, seed=1)
    m = res.params
    assert abs(m.f_m1 - 0.5) <= 0.05
    for name in ("t_th", "theta1", "theta2", "r_stall", "x_stall"):
        assert rdsm._get(m, name) == pytest.approx(rdsm._get(truth, name), rel=0.1)
    assert res.nrmse["p"] <= 0.02 and res.nrmse["q"] <= 0.02
    for tr in res.trace:
        assert np.all(np.diff(tr) <= 0)


def test_everything_fixed_exits_immediately(truth):
    prob = rdsm.FitProblem(truth, [playback_channel(truth, 0.82)], free=())
    res = rdsm.fit_parameters(prob, starts=3)
    assert res.eta <= 1e-20 and res.iterations == 1


def test_static_only_fits_reactive_power_worse(truth):
    ch = playback_channel(truth, 0.82)
    static = rdsm.zip_only(truth)
    r = rdsm.simulate_submodel(static, ch.t, ch.v_root)
    k = ch.mask
    assert rdsm.nrmse(ch.s.imag[k], r.q[k]) > 10 * rdsm.nrmse(ch.s.imag[k], ch.s.imag[k] + 1e-6)
    assert rdsm.nrmse(ch.s.imag[k], r.q[k]) > 0.1


def test_fit_that_cannot_beat_static_model_fails(truth):
    static = rdsm.zip_only(truth)
    ch = playback_channel(static, 0.82)
    with pytest.raises(rdsm.FitFailedError) as exc:
        rdsm.fit_parameters(rdsm.FitProblem(truth, [ch], free=("t_th",)), starts=1)
    assert exc.value.result is not None


def test_nrmse_zero_range_falls_back_to_rmse():
    assert rdsm.nrmse([1.0, 1.0], [1.0, 1.5]) == pytest.approx(np.sqrt(0.125))
    assert rdsm.nrmse([0.0, 1.0], [0.0, 1.0]) == 0.0


def test_nelder_mead_respects_box_and_monotone_trace():
    f = lambda x: float(np.sum((x - np.array([1.5, -0.2])) ** 2))  # noqa: E731
    x, fx, tr = rdsm.nelder_mead(f, np.array([0.5, 0.5]), lower=np.zeros(2), upper=np.ones(2))
    assert x == pytest.approx([1.0, 0.0], abs=1e-3)
    assert np.all(np.diff(tr) <= 0)


def test_submodel_file_round_trip(tmp_path, truth):
    p = tmp_path / "sub.json"
    rdsm.save_submodels({"A5": truth}, p, {"seed": 3})
    again = rdsm.load_submodels(p)["A5"]
    assert again == truth


def test_packaged_submodels_cover_six_areas(submodels):
    assert sorted(submodels) == [f"A{k}" for k in range(1, 7)]
