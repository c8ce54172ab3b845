import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nrfmpc.linsys import (
    AreaPartition,
    SelectionMatrix,
    StateSpace,
    embed,
    forced_response,
    partition,
    select,
    series,
    simulate_step,
    spectral_radius,
)

finite = st.floats(-2, 2, allow_nan=False, allow_infinity=False)


def test_network_form_has_identity_output():
    sys = StateSpace.network([[0.5, 0.1], [0.0, 0.3]], [[1.0], [0.0]])
    assert sys.is_network_form()
    assert (sys.n_x, sys.n_u, sys.n_d, sys.n_y) == (2, 1, 0, 2)


def test_dimension_mismatch_names_the_matrix():
    with pytest.raises(ValueError, match="B_u rows"):
        StateSpace(np.eye(2), np.ones((3, 1)), np.zeros((2, 0)), np.eye(2), np.zeros((2, 1)), np.zeros((2, 0)))


def test_non_square_A_rejected():
    with pytest.raises(ValueError):
        StateSpace.network(np.ones((2, 3)), np.ones((2, 1)))


def test_single_step_by_hand():
    sys = StateSpace.network([[1.0, 0.1], [0.0, 1.0]], [[0.0], [0.1]], [[1.0], [0.0]])
    x_next, y = simulate_step(sys, [0.0, 1.0], [2.0], [0.5])
    np.testing.assert_allclose(x_next, [0.1 + 0.5, 1.2])
    np.testing.assert_allclose(y, [0.0, 1.0])


def test_wrong_input_length():
    sys = StateSpace.network(np.eye(2), np.eye(2))
    with pytest.raises(ValueError, match="u has length"):
        simulate_step(sys, [0, 0], [1.0])


@given(arrays(float, (3, 3), elements=finite), arrays(float, (3, 1), elements=finite),
       arrays(float, (6, 1), elements=finite))
def test_forced_response_matches_markov_parameters(A, B, u):
    A = 0.4 * A
    sys = StateSpace.network(A, B)
    y = forced_response(sys, u)
    for k in range(u.shape[0]):
        ref = sum(np.linalg.matrix_power(A, i - 1) @ B @ u[k - i] for i in range(1, k + 1)) if k else np.zeros(3)
        np.testing.assert_allclose(y[k], ref, atol=1e-10)


def test_forced_response_pads_with_zero_inputs():
    sys = StateSpace.network([[0.5]], [[1.0]])
    y = forced_response(sys, [[1.0]], horizon=3)
    np.testing.assert_allclose(y.ravel(), [0.0, 1.0, 0.5])


def test_series_composes_gains():
    g1 = StateSpace([[0.5]], [[1.0]], np.zeros((1, 0)), [[2.0]], [[0.0]], np.zeros((1, 0)))
    g2 = StateSpace([[0.2]], [[1.0]], np.zeros((1, 0)), [[3.0]], [[0.0]], np.zeros((1, 0)))
    s = series(g1, g2)
    y = forced_response(s, np.ones((40, 1)))
    # dc gain 2/(1-0.5) * 3/(1-0.2)
    assert y[-1, 0] == pytest.approx(4.0 * 3.75, rel=1e-6)


def test_spectral_radius_of_rotation():
    th = 0.3
    R = 0.9 * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    assert spectral_radius(R) == pytest.approx(0.9)


def test_selection_roundtrip():
    S = SelectionMatrix.contiguous(2, 3, 7)
    v = np.arange(7.0)
    np.testing.assert_array_equal(select(S, v), [2, 3, 4])
    np.testing.assert_array_equal(embed(S, [1, 1, 1]), [0, 0, 1, 1, 1, 0, 0])
    np.testing.assert_array_equal(S.matrix.T @ v, select(S, v))


def test_selection_out_of_range():
    with pytest.raises(IndexError):
        SelectionMatrix((0, 9), 5)


def test_partition_offsets_and_lookup():
    p = partition(5, 3, [(2, 1), (3, 2)], neighbors=[{0}, {0, 1}])
    assert p.x_index(1) == [2, 3, 4]
    assert p.u_index(1) == [1, 2]
    assert p.area_of_x(4) == 1 and p.area_of_u(0) == 0
    assert p.neighbors[1] == frozenset({0, 1})


def test_partition_sizes_must_add_up():
    with pytest.raises(ValueError, match="sum to"):
        partition(4, 2, [(2, 1), (3, 1)])


def test_neighbourhood_must_contain_the_area():
    with pytest.raises(ValueError, match="own neighbourhood"):
        AreaPartition((1, 1), (1, 1), (frozenset({1}), frozenset({1})))
