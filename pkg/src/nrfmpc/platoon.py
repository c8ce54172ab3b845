"""Vehicle-platoon benchmark: car model, coordinate change, first layer and sets.

Each car has state (p, v, mu): position, speed and actuator state. The
network model keeps (p_0, l_1..l_N, x_1..x_N) with x_i = (y_i, v_i, mu_i)
and y_i = p_i + l_i - p_{i-1}. Only the x-rows are controlled, so the design
works on the 3N-state block, which does not depend on p_0 or the lengths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import ConstraintSpec, MixedConstraint, StageCost
from .linsys import AreaPartition, StateSpace
from .nrf import NrfBlock, NrfLayer, build_nrf_layer
from .sets import Box

A_CAR = np.array([[1.0, 0.1, -0.0331], [0.0, 1.0, -0.5689], [0.0, 0.0, 0.3679]])
B_CAR = np.array([0.0381, 0.6689, 0.6321])

# (a_i, b_phi_i, k1_i, k2_i) per car; the gain on mu is zero for every car.
COEFFICIENTS = (
    (0.9690, 0.0000, -0.0038, -0.0192),
    (0.9799, 0.0199, -0.0030, -0.0152),
    (0.9799, 0.0200, -0.0032, -0.0161),
    (0.9798, 0.0200, -0.0034, -0.0171),
    (0.9797, 0.0200, -0.0036, -0.0182),
    (0.9796, 0.0201, -0.0039, -0.0195),
    (0.9795, 0.0201, -0.0042, -0.0209),
    (0.9794, 0.0202, -0.0045, -0.0224),
    (0.9793, 0.0202, -0.0049, -0.0243),
    (0.9792, 0.0203, -0.0053, -0.0265),
)

_DEFAULT_PHYSICAL = {"T_s": 0.1, "m": 1.0, "tau": 0.1, "sigma": 1.0}


@dataclass(frozen=True)
class PlatoonParams:
    N: int = 10
    T_s: float = 0.1
    h: float = 5.0
    ell: float = 5.0
    m: float = 1.0
    tau: float = 0.1
    sigma: float = 1.0
    coefficients: tuple = COEFFICIENTS
    A_car: tuple | None = None  # override the discretised car model
    B_car: tuple | None = None
    y_bounds: tuple = (-360.0, 0.0)
    v_bounds: tuple = (0.0, 36.0)
    mu_bound: float = 10.0
    u_bound: float = 10.0
    us1_bounds: tuple = (720.0, 72.0, 0.0)
    us2_bound: float = 5.0
    nu: float = 0.02
    beta_f: float = 0.02
    beta_s1: float = 0.01
    beta_s2: float = 0.01
    v_max_lead: float = 36.0
    y_weight: float = 1e-9

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("a platoon needs N >= 2")
        if len(self.coefficients) < self.N:
            raise ValueError(f"coefficient table has {len(self.coefficients)} rows, need {self.N}")
        if self.A_car is None or self.B_car is None:
            for k, v in _DEFAULT_PHYSICAL.items():
                if not np.isclose(getattr(self, k), v):
                    raise ValueError(
                        f"{k}={getattr(self, k)} differs from the tabulated car model; pass A_car and B_car explicitly"
                    )
        if self.T_s <= 0 or self.h <= 0:
            raise ValueError("T_s and h must be positive")

    def car_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        A = A_CAR if self.A_car is None else np.asarray(self.A_car, dtype=float).reshape(3, 3)
        B = B_CAR if self.B_car is None else np.asarray(self.B_car, dtype=float).reshape(3)
        return A.copy(), B.copy()


def scenario_v0(k) -> np.ndarray | float:
    """Speed of the virtual leading car at step k."""
    k = np.asarray(k)
    if np.any(k < 0):
        raise ValueError("k must be non-negative")
    v = 10.0 - 7.0 * (k >= 400) + 30.0 * (k >= 1200) - 30.0 * (k >= 1300)
    return float(v) if v.ndim == 0 else v.astype(float)


def scenario_dp0(k, T_s: float = 0.1):
    return T_s * scenario_v0(k)


@dataclass(frozen=True)
class PlatoonModel:
    params: PlatoonParams
    A_car: np.ndarray
    B_car: np.ndarray
    T: np.ndarray  # coordinate change on (p_0, l, car states)
    A: np.ndarray  # full (4N+1) model
    B: np.ndarray
    B_d: np.ndarray
    plant: StateSpace  # 3N-state block of x_1..x_N
    A_w: np.ndarray
    B_w: np.ndarray
    W_x: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return self.params.N

    def x_rows(self) -> list[int]:
        return list(range(self.N + 1, 4 * self.N + 1))


def coordinate_change(N: int) -> np.ndarray:
    """Block lower-triangular T mapping (p_0, l, p_i, v_i, mu_i) to (p_0, l, y_i, v_i, mu_i)."""
    n = 4 * N + 1
    T = np.eye(n)
    for i in range(N):
        r = N + 1 + 3 * i
        if i == 0:
            T[r, 0] = -1.0
            T[r, 1] = 1.0
        else:
            T[r, i + 1] = 1.0
            T[r, r - 3] = -1.0
    return T


def full_model(A_car: np.ndarray, B_car: np.ndarray, N: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    T = coordinate_change(N)
    Ti = np.linalg.inv(T)
    n0 = N + 1
    D = np.eye(4 * N + 1)
    Bblk = np.zeros((4 * N + 1, N))
    for i in range(N):
        r = n0 + 3 * i
        D[r : r + 3, r : r + 3] = A_car
        Bblk[r : r + 3, i] = B_car
    A = T @ D @ Ti
    B = T @ Bblk
    # the lead-position increment enters p_0 in physical coordinates
    e1 = np.zeros((4 * N + 1, 1))
    e1[0, 0] = 1.0
    B_d = T @ e1
    return A, B, B_d


def build_platoon(params: PlatoonParams = PlatoonParams()) -> tuple[PlatoonModel, NrfLayer, ConstraintSpec, StageCost]:
    N = params.N
    A_car, B_car = params.car_matrices()
    T, (A, B, B_d) = coordinate_change(N), full_model(A_car, B_car, N)
    rows = list(range(N + 1, 4 * N + 1))
    A_red = A[np.ix_(rows, rows)]
    plant = StateSpace.network(A_red, B[rows], B_d[rows])
    A_w = A_red[3:6, 0:3].copy()
    B_w = B[rows][3:6, 0:1].copy()
    W_x = np.concatenate([[0.0], A_car[0, 1:], [B_car[0]]])

    part = AreaPartition((3,) * N, (1,) * N, tuple(frozenset({max(i - 1, 0), i}) for i in range(N)))
    blocks = []
    for i in range(N):
        a, b_phi, k1, k2 = params.coefficients[i]
        K = np.zeros((1, N + 3 * N))
        if i > 0:
            K[0, i - 1] = b_phi
        K[0, N + 3 * i : N + 3 * i + 3] = (k1, k2, 0.0)
        blocks.append(NrfBlock.from_diagonal(a, K))
    layer = build_nrf_layer(part, blocks)

    model = PlatoonModel(params, A_car, B_car, T, A, B, B_d, plant, A_w, B_w, W_x)
    spec = platoon_constraints(params, part, A_car, B_car)
    cost = StageCost(np.diag([params.y_weight, 0.0, 0.0, 0.0]), np.eye(3), np.eye(1))
    return model, layer, spec, cost


def platoon_constraints(params: PlatoonParams, part: AreaPartition, A_car, B_car) -> ConstraintSpec:
    N = params.N
    X = Box.from_bounds(
        [params.y_bounds[0], params.v_bounds[0], -params.mu_bound],
        [params.y_bounds[1], params.v_bounds[1], params.mu_bound],
    )
    U = Box.symmetric([params.u_bound])
    # one-step displacement p_i[k+1] - p_i[k] is bounded by the speed limits
    disp = MixedConstraint(
        L_x=[[0.0, A_car[0, 1], A_car[0, 2]]],
        L_u=[[B_car[0]]],
        lower=[params.v_bounds[0] * params.T_s],
        upper=[params.v_bounds[1] * params.T_s],
    )
    n_x, n_u = part.n_x, part.n_u
    n_w = N
    return ConstraintSpec(
        partition=part,
        X=(X,) * N,
        U=(U,) * N,
        V=Box.symmetric(np.full(n_x + n_w, params.nu)),
        D_d=Box.from_bounds([0.0], [params.v_max_lead * params.T_s]),
        D_bf=Box.symmetric(np.full(n_u, params.beta_f)),
        D_bs1=Box.symmetric(np.full(n_x, params.beta_s1)),
        D_bs2=Box.symmetric(np.full(n_u, params.beta_s2)),
        U_s1=(Box.symmetric(params.us1_bounds),) * N,
        U_s2=(Box.symmetric([params.us2_bound]),) * N,
        mixed=((disp,),) * N,
    )


def equilibrium_state(params: PlatoonParams, speed: float = 10.0) -> tuple[np.ndarray, np.ndarray]:
    """Cruise at `speed` with the spacing each first-layer loop settles to."""
    x = np.zeros(3 * params.N)
    for i in range(params.N):
        _, _, k1, k2 = params.coefficients[i]
        x[3 * i] = -(k2 / k1) * speed
        x[3 * i + 1] = speed
    return x, np.zeros(params.N)
