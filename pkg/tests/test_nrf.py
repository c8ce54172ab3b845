import numpy as np
import pytest

from nrfmpc.linsys import AreaPartition, StateSpace, spectral_radius
from nrfmpc.nrf import (
    MissingReportError,
    NrfBlock,
    SparsityError,
    area_uf_step,
    assemble_closed_loop,
    build_nrf_layer,
    extract_area_model,
    ic_response_map,
    theta_maps,
    theta_signals,
    uf_step,
)
from nrfmpc.platoon import A_CAR, B_CAR


def test_companion_matrix_layout():
    blk = NrfBlock([0.5, -0.2], np.zeros((2, 3)))
    np.testing.assert_array_equal(blk.A_r, [[-0.5, 1.0], [0.2, 0.0]])
    np.testing.assert_array_equal(blk.C_r, [[1.0, 0.0]])


def test_tabulated_pole_stored_with_sign_flip():
    blk = NrfBlock.from_diagonal(0.9690, np.zeros((1, 4)))
    assert blk.a[0] == pytest.approx(-0.9690)
    assert blk.A_r[0, 0] == pytest.approx(0.9690)


def test_car_one_block(platoon):
    _, layer, _, _ = platoon
    blk = layer.blocks[0]
    np.testing.assert_allclose(blk.A_r, [[0.9690]])
    row = blk.K[0]
    assert not np.any(row[:10])
    np.testing.assert_allclose(row[10:13], [-0.0038, -0.0192, 0.0])
    assert not np.any(row[13:])


def test_follower_reads_predecessor_command(platoon):
    _, layer, _, _ = platoon
    assert layer.blocks[4].K[0, 3] == pytest.approx(0.0200)
    assert layer.blocks[9].K[0, 8] == pytest.approx(0.0203)


def test_scalar_recursion_by_hand(platoon):
    _, layer, _, _ = platoon
    fed_local = np.array([0.0, 1.0, 2.0, 3.0])  # (u_f0, x_0) of car 1's readable columns
    u_f, w_next = area_uf_step(layer, 0, [0.5], fed_local)
    assert u_f[0] == 0.5
    assert w_next[0] == pytest.approx(0.9690 * 0.5 - 0.0038 * 1.0 - 0.0192 * 2.0)


def test_area_step_agrees_with_network_step(platoon, rng):
    _, layer, _, _ = platoon
    w = rng.normal(size=layer.n_w)
    fed = rng.normal(size=layer.partition.n_u + layer.partition.n_x)
    u_f, w_next = uf_step(layer, w, fed)
    for i in range(layer.partition.N):
        ui, wn = area_uf_step(layer, i, w[layer.w_index(i)], fed[layer.fed_columns(i)])
        np.testing.assert_allclose(ui, u_f[layer.partition.u_index(i)])
        np.testing.assert_allclose(wn, w_next[layer.w_index(i)])


def test_non_neighbour_gain_rejected():
    part = AreaPartition((1, 1, 1), (1, 1, 1), (frozenset({0}), frozenset({0, 1}), frozenset({1, 2})))
    K = np.zeros((1, 6))
    K[0, 3 + 2] = 0.1  # area 0 reads x of area 2
    blocks = [NrfBlock([0.5], K), NrfBlock([0.5], np.zeros((1, 6))), NrfBlock([0.5], np.zeros((1, 6)))]
    with pytest.raises(SparsityError) as exc:
        build_nrf_layer(part, blocks)
    assert exc.value.row == 0 and exc.value.column == 5


def test_closed_loop_blocks_match_printed_car_models(platoon_cl):
    cl = platoon_cl
    A = cl.A
    n_x = 30
    A_w = np.array([[0, -0.1, 0.0331], [0, 0, 0], [0, 0, 0]])
    B_w = np.array([-0.0381, 0, 0])
    gains = [(-0.0038, -0.0192), (-0.0030, -0.0152), (-0.0032, -0.0161)]
    poles = [0.9690, 0.9799, 0.9799]
    b_phi = [0.0, 0.0199, 0.0200]
    for i in range(3):
        xi = list(range(3 * i, 3 * i + 3))
        wi = n_x + i
        np.testing.assert_allclose(A[np.ix_(xi, xi)], A_CAR, atol=1e-12)
        np.testing.assert_allclose(A[xi, wi], B_CAR, atol=1e-12)
        np.testing.assert_allclose(A[wi, xi], [*gains[i], 0.0], atol=1e-12)
        assert A[wi, wi] == pytest.approx(poles[i], abs=1e-12)
        if i:
            xp = list(range(3 * i - 3, 3 * i))
            np.testing.assert_allclose(A[np.ix_(xi, xp)], A_w, atol=1e-12)
            np.testing.assert_allclose(A[xi, wi - 1], B_w, atol=1e-12)
            assert A[wi, wi - 1] == pytest.approx(b_phi[i], abs=1e-12)
            np.testing.assert_allclose(cl.B_us2[xi, i - 1], B_w, atol=1e-12)
    # lead car sees the reference increment with a negative sign on y
    np.testing.assert_allclose(cl.B_dd[:3, 0], [-1.0, 0.0, 0.0])


def test_spectral_radius(platoon_cl):
    assert spectral_radius(platoon_cl.A) == pytest.approx(0.9936, abs=1e-3)


def test_car_one_area_model(platoon_cl):
    m = extract_area_model(platoon_cl, 0)
    B_G = np.array([-0.0038, -0.0192, 0.0])
    A_ref = np.block([[A_CAR, B_CAR[:, None]], [B_G[None, :], np.array([[0.9690]])]])
    np.testing.assert_allclose(m.A, A_ref, atol=1e-12)
    np.testing.assert_allclose(m.B_s2, np.concatenate([B_CAR, [0.0]])[:, None], atol=1e-12)
    np.testing.assert_allclose(m.B_s1, np.vstack([np.zeros((3, 3)), B_G]), atol=1e-12)
    assert m.n_s == 4


def test_one_step_ic_map_for_car_one(platoon_cl):
    M = theta_maps(platoon_cl, 0, 1)[0]
    m = extract_area_model(platoon_cl, 0)
    np.testing.assert_allclose(M, m.C_o @ m.A, atol=1e-12)


def test_theta_matches_zero_input_simulation(platoon_cl, rng):
    cl = platoon_cl
    z0 = np.zeros(cl.n_z)
    x1, w1 = rng.normal(size=3), rng.normal(size=1)
    z0[cl.z_index(0)] = np.concatenate([x1, w1])
    x2, w2 = rng.normal(size=3), rng.normal(size=1)
    z0[cl.z_index(1)] = np.concatenate([x2, w2])
    reports = {0: (x1, w1), 1: (x2, w2)}
    z = z0.copy()
    for t in range(1, 6):
        z = cl.A @ z
        tx, tu = theta_signals(cl, 1, reports, t)
        np.testing.assert_allclose(np.concatenate([tx, tu]), (cl.C_cl @ z)[cl.out_index(1)], atol=1e-10)


def test_missing_report(platoon_cl):
    with pytest.raises(MissingReportError):
        theta_signals(platoon_cl, 1, {1: (np.zeros(3), np.zeros(1))}, 1)


def test_ic_response_map_composes(platoon_cl):
    np.testing.assert_allclose(ic_response_map(platoon_cl, 3), platoon_cl.C_cl @ np.linalg.matrix_power(platoon_cl.A, 3))


def test_closed_loop_step_matches_signal_level_update(rng):
    A = rng.normal(size=(2, 2)) * 0.3
    plant = StateSpace.network(A, np.eye(2), np.ones((2, 1)))
    part = AreaPartition((1, 1), (1, 1), (frozenset({0, 1}), frozenset({0, 1})))
    blocks = [NrfBlock([0.3, -0.1], rng.normal(size=(2, 4)) * 0.1), NrfBlock([0.2], rng.normal(size=(1, 4)) * 0.1)]
    layer = build_nrf_layer(part, blocks)
    cl = assemble_closed_loop(plant, layer)
    x, w = rng.normal(size=2), rng.normal(size=3)
    us1, us2, zeta, bs1, bs2, bf, d = (rng.normal(size=n) for n in (2, 2, 2, 2, 2, 2, 1))
    u_f, w_next = uf_step(layer, w, np.concatenate([layer.C_w @ w + bf, x + zeta + us1 + bs1]))
    x_next = A @ x + (u_f + us2 + bs2) + d
    z_next = cl.step(np.concatenate([x, w]), us1, us2, zeta + bs1, bs2, bf, d)
    np.testing.assert_allclose(z_next, np.concatenate([x_next, w_next]), atol=1e-12)
