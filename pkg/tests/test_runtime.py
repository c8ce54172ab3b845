import numpy as np
import pytest

from nrfmpc import design as D
from nrfmpc.nrf import assemble_closed_loop, theta_signals
from nrfmpc.runtime import (
    AreaMessage,
    BusError,
    COMMAND_REPORT,
    IC_REPORT,
    InitialConditionError,
    NoiseStreams,
    bus_round,
    make_subcontrollers,
    read_trace_csv,
    replay_monolithic,
    simulate,
    subcontroller_step,
    xi_rhs,
)

from helpers import qp_by_enumeration, random_certified_two_area, two_area_system

NB = (frozenset({0, 1}), frozenset({1}))


def _msgs(k=0):
    return [AreaMessage(j, k, IC_REPORT, (np.full(2, float(j)), np.zeros(1))) for j in range(2)]


def test_bus_delivers_verbatim_without_noise():
    inbox = bus_round(_msgs(), NB)
    assert set(inbox[0]) == {0, 1} and set(inbox[1]) == {1}
    np.testing.assert_array_equal(inbox[0][1][0], [1.0, 1.0])


def test_bus_noise_applied_once_at_source():
    noise = {1: (np.array([0.01, -0.01]), np.zeros(1)), 0: (np.zeros(2), np.zeros(1))}
    inbox = bus_round(_msgs(), NB, noise)
    np.testing.assert_array_equal(inbox[0][1][0], inbox[1][1][0])
    np.testing.assert_allclose(inbox[0][1][0], [1.01, 0.99])


def test_bus_round_aborts_on_missing_sender():
    with pytest.raises(BusError, match="no message"):
        bus_round(_msgs()[:1], NB)


def test_noise_streams_are_bounded_and_replayable(rng):
    _, layer, spec, _ = random_certified_two_area(rng)
    a, b = NoiseStreams(5, spec, layer), NoiseStreams(5, spec, layer)
    for _ in range(50):
        sa, sb = a.sample(), b.sample()
        for key in sa:
            np.testing.assert_array_equal(sa[key], sb[key])
        assert np.all(np.abs(sa["beta_s1"]) <= spec.D_bs1.halfwidths + 1e-15)
        assert np.all(np.abs(sa["nu_x"]) <= spec.V_x().halfwidths + 1e-15)
    assert not np.array_equal(NoiseStreams(6, spec, layer).sample()["zeta"], NoiseStreams(5, spec, layer).sample()["zeta"])


def _quiet_system():
    plant, layer, spec = two_area_system(0.5, 0.4, 0.05, -0.05, 0.8, 0.7,
                                         ((0.3, 0.0, -0.1, 0.0), (0.2, 0.0, -0.1, 0.0)),
                                         us2=3.0, noise=0.0, dist=0.0)
    art = D.run_design(spec, layer, plant, D.DesignOptions(rho_max=1))
    return plant, layer, spec, art


def test_interior_state_gives_zero_commands():
    plant, layer, spec, art = _quiet_system()
    cl = assemble_closed_loop(plant, layer)
    subs = make_subcontrollers(cl, art)
    reports = {0: (np.array([0.3]), np.array([0.0])), 1: (np.array([-0.2]), np.array([0.0]))}
    for s in subs:
        u1, u2, msg, info = subcontroller_step(s, cl, reports, 0)
        assert np.max(np.abs(u1)) <= 1e-6 and np.max(np.abs(u2)) <= 1e-6
        assert info["slack"] > 0
        assert msg.sender == s.area and msg.kind == COMMAND_REPORT


# x_0 = 10 with w_0 = 7 predicts 0.5 * 10 + 0.8 * 7 = 10.6 > 10 at t = 1
LOUD = {0: (np.array([10.0]), np.array([7.0])), 1: (np.array([0.0]), np.array([0.0]))}


def test_state_near_bound_triggers_correcting_command():
    plant, layer, spec, art = _quiet_system()
    cl = assemble_closed_loop(plant, layer)
    s = make_subcontrollers(cl, art)[0]
    a = art.areas[0]
    u1, u2, _, info = subcontroller_step(s, cl, LOUD, 0)
    assert info["slack"] < 0
    m = s.model
    xi = m.B_s1 @ u1 + m.B_s2 @ u2
    theta = np.concatenate(theta_signals(cl, 0, LOUD, 1))
    assert np.all(a.H @ (m.C_o @ xi + theta) <= a.h[0] + 1e-8)
    assert spec.U_s1[0].contains(u1) and spec.U_s2[0].contains(u2)


def test_condensed_problem_matches_enumeration():
    plant, layer, spec, art = _quiet_system()
    cl = assemble_closed_loop(plant, layer)
    s = make_subcontrollers(cl, art)[0]
    u1, u2, _, _ = subcontroller_step(s, cl, LOUD, 0)
    thetas = [np.concatenate(theta_signals(cl, 0, LOUD, 1))]
    A = np.vstack([s.qp.G, s.qp.A_bud])
    b = np.concatenate([xi_rhs(s, thetas), s.qp.b_bud])
    x_ref, _ = qp_by_enumeration(s.qp.P, np.zeros(s.qp.P.shape[0]), A, b)
    np.testing.assert_allclose(np.concatenate([u1, u2]), x_ref, atol=1e-7)


def test_zero_everything_stays_zero():
    plant, layer, spec, art = _quiet_system()
    tr = simulate(plant, layer, art, lambda k: np.zeros(2), seed=0, horizon=30)
    assert tr.breach is None
    for arr in (tr.x, tr.w, tr.u, tr.u_s1, tr.u_s2):
        assert not np.any(arr)


def test_initial_condition_outside_X_rejected():
    plant, layer, spec, art = _quiet_system()
    with pytest.raises(InitialConditionError) as exc:
        simulate(plant, layer, art, lambda k: np.zeros(2), 0, 5, x0=[0.0, 11.0])
    assert exc.value.area == 1 and exc.value.what == "x"


def test_same_seed_same_trace(rng):
    plant, layer, spec, art = random_certified_two_area(rng)
    scen = lambda k: np.array([0.03 * np.sin(0.1 * k), 0.0])
    a = simulate(plant, layer, art, scen, 11, 200, x0=[2.0, -3.0])
    b = simulate(plant, layer, art, scen, 11, 200, x0=[2.0, -3.0])
    for f in ("x", "w", "u", "u_s1", "u_s2"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_monolithic_replay_agrees(rng):
    plant, layer, spec, art = random_certified_two_area(rng)
    x0 = np.array([5.0, -4.0])
    tr = simulate(plant, layer, art, lambda k: np.array([0.05, -0.05]), 3, 300, x0=x0)
    Z = replay_monolithic(plant, layer, tr, x0, np.zeros(layer.n_w))
    np.testing.assert_allclose(Z[:-1, :2], tr.x, atol=1e-9, rtol=0)
    np.testing.assert_allclose(Z[-1, :2], tr.x_final, atol=1e-9, rtol=0)


def test_csv_roundtrip(tmp_path, rng):
    plant, layer, spec, art = random_certified_two_area(rng)
    tr = simulate(plant, layer, art, lambda k: np.zeros(2), 1, 20, x0=[1.0, 1.0])
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    cols = read_trace_csv(path)
    np.testing.assert_array_equal(cols["x0"], tr.x[:, 0])
    np.testing.assert_array_equal(cols["beta_s2_1"], tr.noise["beta_s2"][:, 1])
    assert list(cols["qp_status0"][:3]) == ["optimal"] * 3


def test_breach_truncates_and_flags():
    plant, layer, spec = two_area_system(0.95, 0.95, 0.0, 0.0, 0.2, 0.2,
                                         ((0.5, 0.0, -0.05, 0.0), (0.5, 0.0, -0.05, 0.0)), us2=0.5, us1=0.5, dist=0.05)
    art = D.run_design(spec, layer, plant, D.DesignOptions(rho_max=1, T=1, allow_uncertified=True))
    tr = simulate(plant, layer, art, lambda k: np.array([2.0, 0.0]), 0, 100)
    assert tr.breach is not None and tr.breach["area"] == 0
    assert tr.steps == tr.breach["k"]
