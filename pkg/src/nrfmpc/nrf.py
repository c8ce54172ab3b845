"""First-layer (NRF) controller realisations and the closed loop they form.

Every command row l of the first layer is produced by a companion-form
realisation

    w_l[k+1] = A_l w_l[k] + K_l fed[k],    row_l(u_f[k]) = e_1' w_l[k],

where A_l carries -a_{1l}..-a_{nl} in its first column and a shifted identity
to the right, and fed = (u_f + beta_f, x + zeta + u_s1 + beta_s1). The gain
rows K_l are n_u + n_x wide.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .linsys import AreaPartition, StateSpace


class SparsityError(ValueError):
    """A controller gain reads a signal from outside its neighbourhood."""

    def __init__(self, row: int, column: int, message: str):
        super().__init__(message)
        self.row = row
        self.column = column


class MissingReportError(KeyError):
    """A neighbour's initial-condition report is missing."""


@dataclass(frozen=True)
class NrfBlock:
    """Companion realisation of one command row."""

    a: np.ndarray  # companion coefficients a_1..a_n (first column of A_r is -a)
    K: np.ndarray  # n_r x (n_u + n_x) gain rows

    def __post_init__(self):
        a = np.array(self.a, dtype=float, copy=True).reshape(-1)
        K = np.array(self.K, dtype=float, copy=True)
        if K.ndim == 1:
            K = K.reshape(1, -1)
        if a.size < 1 or K.shape[0] != a.size:
            raise ValueError("need one gain row per companion coefficient")
        a.setflags(write=False)
        K.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "K", K)

    @classmethod
    def from_diagonal(cls, pole: Sequence[float] | float, K) -> "NrfBlock":
        """Build from state coefficients as printed in tables (A_r[j,0] = pole_j)."""
        return cls(-np.atleast_1d(np.asarray(pole, dtype=float)), K)

    @property
    def order(self) -> int:
        return self.a.size

    @property
    def A_r(self) -> np.ndarray:
        n = self.order
        A = np.zeros((n, n))
        A[:, 0] = -self.a
        A[np.arange(n - 1), np.arange(1, n)] = 1.0
        return A

    @property
    def C_r(self) -> np.ndarray:
        C = np.zeros((1, self.order))
        C[0, 0] = 1.0
        return C


@dataclass(frozen=True)
class NrfLayer:
    partition: AreaPartition
    blocks: tuple[NrfBlock, ...]
    w_init: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        p = self.partition
        if len(self.blocks) != p.n_u:
            raise ValueError(f"need {p.n_u} command rows, got {len(self.blocks)}")
        width = p.n_u + p.n_x
        for l, blk in enumerate(self.blocks):
            if blk.K.shape[1] != width:
                raise ValueError(f"gain rows of command {l} have width {blk.K.shape[1]}, expected {width}")
        w0 = np.zeros(self.n_w) if self.w_init is None else np.asarray(self.w_init, dtype=float).reshape(-1)
        if w0.size != self.n_w:
            raise ValueError("w_init has the wrong length")
        w0.setflags(write=False)
        object.__setattr__(self, "w_init", w0)

    @property
    def n_w(self) -> int:
        return sum(b.order for b in self.blocks)

    def row_offset(self, l: int) -> int:
        return sum(b.order for b in self.blocks[:l])

    def w_index(self, i: int) -> list[int]:
        idx: list[int] = []
        for l in self.partition.u_index(i):
            a = self.row_offset(l)
            idx.extend(range(a, a + self.blocks[l].order))
        return idx

    def n_wi(self, i: int) -> int:
        return len(self.w_index(i))

    @property
    def A_w(self) -> np.ndarray:
        A = np.zeros((self.n_w, self.n_w))
        for l, b in enumerate(self.blocks):
            a = self.row_offset(l)
            A[a : a + b.order, a : a + b.order] = b.A_r
        return A

    @property
    def B_w(self) -> np.ndarray:
        return np.vstack([b.K for b in self.blocks])

    @property
    def C_w(self) -> np.ndarray:
        C = np.zeros((self.partition.n_u, self.n_w))
        for l in range(len(self.blocks)):
            C[l, self.row_offset(l)] = 1.0
        return C

    def fed_columns(self, i: int) -> list[int]:
        """Columns of the fed vector that area i's controllers may read."""
        p = self.partition
        cols: list[int] = []
        for j in sorted(p.neighbors[i]):
            cols.extend(p.u_index(j))
        for j in sorted(p.neighbors[i]):
            cols.extend(p.n_u + c for c in p.x_index(j))
        return sorted(cols)

    def area_realisation(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(A_wi, B_wi restricted to readable columns, C_wi)."""
        idx = self.w_index(i)
        A = self.A_w[np.ix_(idx, idx)]
        B = self.B_w[np.ix_(idx, self.fed_columns(i))]
        C = self.C_w[np.ix_(self.partition.u_index(i), idx)]
        return A, B, C


def build_nrf_layer(partition: AreaPartition, blocks: Sequence[NrfBlock], w_init=None, tol: float = 0.0) -> NrfLayer:
    """Assemble the layer and check that no gain reads a non-neighbour signal."""
    layer = NrfLayer(partition, tuple(blocks), w_init)
    p = partition
    for l, blk in enumerate(layer.blocks):
        owner = p.area_of_u(l)
        allowed = set(layer.fed_columns(owner))
        for col in range(blk.K.shape[1]):
            if col not in allowed and np.any(np.abs(blk.K[:, col]) > tol):
                src = p.area_of_u(col) if col < p.n_u else p.area_of_x(col - p.n_u)
                raise SparsityError(
                    l, col, f"command row {l} (area {owner}) reads column {col} of area {src}, not a neighbour"
                )
    return layer


def uf_step(layer: NrfLayer, w, fed) -> tuple[np.ndarray, np.ndarray]:
    """Commands from the current controller state and the state update."""
    w = np.asarray(w, dtype=float)
    fed = np.asarray(fed, dtype=float)
    u_f = layer.C_w @ w
    return u_f, layer.A_w @ w + layer.B_w @ fed


def area_uf_step(layer: NrfLayer, i: int, w_i, fed_local) -> tuple[np.ndarray, np.ndarray]:
    """Area i's share of uf_step; `fed_local` holds only the readable columns."""
    A, B, C = layer.area_realisation(i)
    w_i = np.asarray(w_i, dtype=float)
    return C @ w_i, A @ w_i + B @ np.asarray(fed_local, dtype=float)


@dataclass(frozen=True)
class ClosedLoop:
    """Plant plus first layer, state z = (x, w), outputs o = (x, u_f)."""

    plant: StateSpace
    layer: NrfLayer
    A: np.ndarray
    B_us1: np.ndarray
    B_us2: np.ndarray
    B_zeta: np.ndarray  # zeta + beta_s1
    B_bs2: np.ndarray
    B_bf: np.ndarray
    B_dd: np.ndarray
    C_x: np.ndarray
    C_uf: np.ndarray
    _powers: list = field(default_factory=list, compare=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, compare=False, repr=False)

    @property
    def partition(self) -> AreaPartition:
        return self.layer.partition

    @property
    def n_x(self) -> int:
        return self.plant.n_x

    @property
    def n_u(self) -> int:
        return self.plant.n_u

    @property
    def n_w(self) -> int:
        return self.layer.n_w

    @property
    def n_z(self) -> int:
        return self.A.shape[0]

    @property
    def n_d(self) -> int:
        return self.plant.n_d

    @property
    def B_ds(self) -> np.ndarray:
        """Columns ordered (zeta + beta_s1, beta_s2, beta_f, d)."""
        return np.hstack([self.B_zeta, self.B_bs2, self.B_bf, self.B_dd])

    @property
    def C_cl(self) -> np.ndarray:
        return np.vstack([self.C_x, self.C_uf])

    def power(self, t: int) -> np.ndarray:
        if t < 0:
            raise ValueError("t must be non-negative")
        with self._lock:
            if not self._powers:
                self._powers.append(np.eye(self.n_z))
            while len(self._powers) <= t:
                self._powers.append(self.A @ self._powers[-1])
            return self._powers[t]

    def z_index(self, j: int) -> list[int]:
        """Positions of (x_j, w_j) inside z."""
        return self.partition.x_index(j) + [self.n_x + k for k in self.layer.w_index(j)]

    def out_index(self, i: int) -> list[int]:
        """Positions of (x_i, u_fi) inside o = (x, u_f)."""
        return self.partition.x_index(i) + [self.n_x + k for k in self.partition.u_index(i)]

    def step(self, z, u_s1, u_s2, zeta_bs1, bs2, bf, d) -> np.ndarray:
        return (
            self.A @ z
            + self.B_us1 @ u_s1
            + self.B_us2 @ u_s2
            + self.B_zeta @ zeta_bs1
            + self.B_bs2 @ bs2
            + self.B_bf @ bf
            + self.B_dd @ d
        )


def assemble_closed_loop(plant: StateSpace, layer: NrfLayer) -> ClosedLoop:
    """x+ = A x + B_u (C_w w + u_s2 + beta_s2) + B_d d,
    w+ = A_w w + B_wu (C_w w + beta_f) + B_wx (x + zeta + u_s1 + beta_s1)."""
    if not plant.is_network_form():
        raise ValueError("the plant realisation must have C = I and no feedthrough")
    p = layer.partition
    if plant.n_x != p.n_x or plant.n_u != p.n_u:
        raise ValueError("plant dimensions do not match the partition")
    n_x, n_u, n_w = plant.n_x, plant.n_u, layer.n_w
    A_w, B_w, C_w = layer.A_w, layer.B_w, layer.C_w
    B_wu, B_wx = B_w[:, :n_u], B_w[:, n_u:]
    A = np.block([[plant.A, plant.B_u @ C_w], [B_wx, A_w + B_wu @ C_w]])
    zx = np.zeros((n_x, n_x))
    zw = np.zeros((n_w, n_u))
    B_us1 = np.vstack([zx, B_wx])
    B_us2 = np.vstack([plant.B_u, zw])
    B_bf = np.vstack([np.zeros((n_x, n_u)), B_wu])
    B_dd = np.vstack([plant.B_d, np.zeros((n_w, plant.n_d))])
    C_x = np.hstack([np.eye(n_x), np.zeros((n_x, n_w))])
    C_uf = np.hstack([np.zeros((n_u, n_x)), C_w])
    mats = [A, B_us1, B_us2, B_us1.copy(), B_us2.copy(), B_bf, B_dd, C_x, C_uf]
    for m in mats:
        m.setflags(write=False)
    return ClosedLoop(plant, layer, *mats)


def ic_response_map(cl: ClosedLoop, t: int) -> np.ndarray:
    """Maps (x_c, w_c) to (x[k0+t], u_f[k0+t]) under zero exogenous input."""
    return cl.C_cl @ cl.power(t)


def theta_maps(cl: ClosedLoop, i: int, t: int) -> dict[int, np.ndarray]:
    """Per-neighbour blocks of the IC response restricted to area i's outputs."""
    M = ic_response_map(cl, t)[cl.out_index(i)]
    return {j: M[:, cl.z_index(j)] for j in sorted(cl.partition.neighbors[i])}


def theta_signals(cl: ClosedLoop, i: int, reports: Mapping[int, tuple], t: int) -> tuple[np.ndarray, np.ndarray]:
    """(theta_x, theta_u) of area i at offset t from reported (x_cj, w_cj)."""
    total = np.zeros(len(cl.out_index(i)))
    for j, M in theta_maps(cl, i, t).items():
        if j not in reports:
            raise MissingReportError(f"area {i} lacks the initial-condition report of area {j}")
        xc, wc = reports[j]
        total += M @ np.concatenate([np.asarray(xc, dtype=float).reshape(-1), np.asarray(wc, dtype=float).reshape(-1)])
    n_xi = cl.partition.x_sizes[i]
    return total[:n_xi], total[n_xi:]


@dataclass(frozen=True)
class AreaModel:
    area: int
    support: tuple[int, ...]  # positions in z kept by the realisation
    A: np.ndarray
    B_s1: np.ndarray
    B_s2: np.ndarray
    B_sd: np.ndarray
    C_x: np.ndarray
    C_u: np.ndarray

    @property
    def n_s(self) -> int:
        return self.A.shape[0]

    @property
    def C_o(self) -> np.ndarray:
        return np.vstack([self.C_x, self.C_u])

    def as_state_space(self) -> StateSpace:
        B = np.hstack([self.B_s1, self.B_s2])
        C = self.C_o
        return StateSpace(self.A, B, self.B_sd, C, np.zeros((C.shape[0], B.shape[1])), np.zeros((C.shape[0], self.B_sd.shape[1])))


def _graph_closure(adj: np.ndarray, seeds: set[int]) -> set[int]:
    """Nodes reachable from `seeds` along adj[target, source] != 0."""
    seen = set(seeds)
    frontier = list(seeds)
    while frontier:
        s = frontier.pop()
        for t in np.flatnonzero(adj[:, s]):
            if int(t) not in seen:
                seen.add(int(t))
                frontier.append(int(t))
    return seen


def extract_area_model(cl: ClosedLoop, i: int) -> AreaModel:
    """Realisation of (u_s1i, u_s2i) -> (x_i, u_fi) on the structural support.

    Keeps the closed-loop states that the area's commands can reach and that
    can reach the area's outputs, both judged on the sparsity graph of A.
    """
    p = cl.partition
    xi, ui = p.x_index(i), p.u_index(i)
    B_in = np.hstack([cl.B_us1[:, xi], cl.B_us2[:, ui]])
    C_out = np.vstack([cl.C_x[xi], cl.C_uf[ui]])
    adj = cl.A != 0
    reach = _graph_closure(adj, {int(r) for r in np.flatnonzero(np.any(B_in != 0, axis=1))})
    coreach = _graph_closure(adj.T, {int(c) for c in np.flatnonzero(np.any(C_out != 0, axis=0))})
    S = sorted(reach & coreach)
    if not S:
        S = sorted(coreach) or [0]
    A = cl.A[np.ix_(S, S)]
    return AreaModel(
        area=i,
        support=tuple(S),
        A=A,
        B_s1=cl.B_us1[np.ix_(S, xi)],
        B_s2=cl.B_us2[np.ix_(S, ui)],
        B_sd=cl.B_ds[S],
        C_x=cl.C_x[np.ix_(xi, S)],
        C_u=cl.C_uf[np.ix_(ui, S)],
    )
