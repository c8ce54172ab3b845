"""Discrete-time LTI realisations, area partitions and selection matrices.

Areas are indexed from 0 in the Python API. Index sets are contiguous and
ascending, so an area is fully described by an offset and a size for its
states and another pair for its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def _as_matrix(m, rows: int | None = None, cols: int | None = None, name: str = "") -> np.ndarray:
    a = np.array(m, dtype=float, copy=True)
    if a.ndim == 1 and rows is not None and cols is not None and a.size == rows * cols:
        a = a.reshape(rows, cols)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StateSpace:
    """x[k+1] = A x + B_u u + B_d d,  y = C x + D_u u + D_d d."""

    A: np.ndarray
    B_u: np.ndarray
    B_d: np.ndarray
    C: np.ndarray
    D_u: np.ndarray
    D_d: np.ndarray

    def __post_init__(self):
        for name in ("A", "B_u", "B_d", "C", "D_u", "D_d"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name=name))
        n = self.A.shape[0]
        if n < 1 or self.A.shape != (n, n):
            raise ValueError(f"A must be square and non-empty, got {self.A.shape}")
        checks = [
            ("B_u rows", self.B_u.shape[0], n),
            ("B_d rows", self.B_d.shape[0], n),
            ("C columns", self.C.shape[1], n),
            ("D_u shape", self.D_u.shape, (self.C.shape[0], self.B_u.shape[1])),
            ("D_d shape", self.D_d.shape, (self.C.shape[0], self.B_d.shape[1])),
        ]
        for what, got, want in checks:
            if got != want:
                raise ValueError(f"dimension mismatch in {what}: got {got}, expected {want}")
        if not np.all(np.isfinite(self.A)):
            raise ValueError("A has non-finite entries")

    @classmethod
    def network(cls, A, B_u, B_d=None) -> "StateSpace":
        """Realisation with full state output and no feedthrough."""
        A = np.asarray(A, dtype=float)
        B_u = np.asarray(B_u, dtype=float).reshape(A.shape[0], -1)
        B_d = np.zeros((A.shape[0], 0)) if B_d is None else np.asarray(B_d, dtype=float).reshape(A.shape[0], -1)
        n = A.shape[0]
        return cls(A, B_u, B_d, np.eye(n), np.zeros((n, B_u.shape[1])), np.zeros((n, B_d.shape[1])))

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B_u.shape[1]

    @property
    def n_d(self) -> int:
        return self.B_d.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def is_network_form(self) -> bool:
        return (
            self.C.shape == self.A.shape
            and np.array_equal(self.C, np.eye(self.n_x))
            and not np.any(self.D_u)
            and not np.any(self.D_d)
        )


def _vec(v, n: int, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.size != n:
        raise ValueError(f"{name} has length {a.size}, expected {n}")
    return a


def simulate_step(sys: StateSpace, x, u, d=None) -> tuple[np.ndarray, np.ndarray]:
    """One step of the realisation. Returns (x_next, y)."""
    x = _vec(x, sys.n_x, "x")
    u = _vec(u, sys.n_u, "u")
    d = np.zeros(sys.n_d) if d is None else _vec(d, sys.n_d, "d")
    x_next = sys.A @ x + sys.B_u @ u + sys.B_d @ d
    y = sys.C @ x + sys.D_u @ u + sys.D_d @ d
    return x_next, y


def forced_response(sys: StateSpace, inputs, horizon: int | None = None) -> np.ndarray:
    """Zero-initial-state response to an input sequence (rows are time steps).

    y[k] = D_u u[k] + sum_{i>=1} C A^{i-1} B_u u[k-i]
    """
    u = np.asarray(inputs, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, sys.n_u)
    if u.shape[1] != sys.n_u:
        raise ValueError(f"inputs have {u.shape[1]} columns, expected {sys.n_u}")
    if horizon is None:
        horizon = u.shape[0]
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    y = np.zeros((horizon, sys.n_y))
    x = np.zeros(sys.n_x)
    for k in range(horizon):
        uk = u[k] if k < u.shape[0] else np.zeros(sys.n_u)
        y[k] = sys.C @ x + sys.D_u @ uk
        x = sys.A @ x + sys.B_u @ uk
    return y


def series(first: StateSpace, second: StateSpace) -> StateSpace:
    """Realisation of `second` driven by the output of `first` (no d channels)."""
    if first.n_y != second.n_u:
        raise ValueError("series interconnection needs first.n_y == second.n_u")
    n1, n2 = first.n_x, second.n_x
    A = np.block([[first.A, np.zeros((n1, n2))], [second.B_u @ first.C, second.A]])
    B = np.vstack([first.B_u, second.B_u @ first.D_u])
    C = np.hstack([second.D_u @ first.C, second.C])
    D = second.D_u @ first.D_u
    return StateSpace(A, B, np.zeros((n1 + n2, 0)), C, D, np.zeros((C.shape[0], 0)))


def spectral_radius(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got {A.shape}")
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


@dataclass(frozen=True)
class SelectionMatrix:
    """Columns e_{offset+1} .. e_{offset+size} of an identity of size `ambient`."""

    columns: tuple[int, ...]
    ambient: int

    def __post_init__(self):
        cols = tuple(int(c) for c in self.columns)
        object.__setattr__(self, "columns", cols)
        if any(c < 0 or c >= self.ambient for c in cols):
            raise IndexError(f"selection columns {cols} out of range for ambient {self.ambient}")
        if any(b <= a for a, b in zip(cols, cols[1:])):
            raise ValueError("selection columns must be distinct and ascending")

    @classmethod
    def contiguous(cls, offset: int, size: int, ambient: int) -> "SelectionMatrix":
        return cls(tuple(range(offset, offset + size)), ambient)

    @property
    def matrix(self) -> np.ndarray:
        S = np.zeros((self.ambient, len(self.columns)))
        S[list(self.columns), range(len(self.columns))] = 1.0
        return S

    def select(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.ambient:
            raise ValueError(f"vector of length {v.shape[0]} does not match ambient {self.ambient}")
        return v[list(self.columns)]

    def embed(self, v_small) -> np.ndarray:
        v_small = np.asarray(v_small, dtype=float).reshape(-1)
        if v_small.size != len(self.columns):
            raise ValueError("subvector length does not match selection size")
        out = np.zeros(self.ambient)
        out[list(self.columns)] = v_small
        return out


def select(S: SelectionMatrix, v) -> np.ndarray:
    return S.select(v)


def embed(S: SelectionMatrix, v_small, ambient: int | None = None) -> np.ndarray:
    if ambient is not None and ambient != S.ambient:
        raise ValueError("ambient dimension disagrees with the selection matrix")
    return S.embed(v_small)


@dataclass(frozen=True)
class AreaPartition:
    """Contiguous partition of state and input indices into N areas."""

    x_sizes: tuple[int, ...]
    u_sizes: tuple[int, ...]
    neighbors: tuple[frozenset[int], ...] = field(default=())

    def __post_init__(self):
        xs = tuple(int(s) for s in self.x_sizes)
        us = tuple(int(s) for s in self.u_sizes)
        object.__setattr__(self, "x_sizes", xs)
        object.__setattr__(self, "u_sizes", us)
        if len(xs) != len(us) or not xs:
            raise ValueError("need the same positive number of state and input sizes")
        if any(s <= 0 for s in xs + us):
            raise ValueError("area sizes must be positive")
        nb = self.neighbors or tuple(frozenset({i}) for i in range(len(xs)))
        nb = tuple(frozenset(int(j) for j in s) for s in nb)
        if len(nb) != len(xs):
            raise ValueError("one neighbourhood per area is required")
        for i, s in enumerate(nb):
            if i not in s:
                raise ValueError(f"area {i} must belong to its own neighbourhood")
            if any(j < 0 or j >= len(xs) for j in s):
                raise ValueError(f"neighbourhood of area {i} references unknown areas")
        object.__setattr__(self, "neighbors", nb)

    @property
    def N(self) -> int:
        return len(self.x_sizes)

    @property
    def n_x(self) -> int:
        return sum(self.x_sizes)

    @property
    def n_u(self) -> int:
        return sum(self.u_sizes)

    def x_offset(self, i: int) -> int:
        return sum(self.x_sizes[:i])

    def u_offset(self, i: int) -> int:
        return sum(self.u_sizes[:i])

    def x_index(self, i: int) -> list[int]:
        a = self.x_offset(i)
        return list(range(a, a + self.x_sizes[i]))

    def u_index(self, i: int) -> list[int]:
        a = self.u_offset(i)
        return list(range(a, a + self.u_sizes[i]))

    def S_x(self, i: int) -> SelectionMatrix:
        return SelectionMatrix.contiguous(self.x_offset(i), self.x_sizes[i], self.n_x)

    def S_u(self, i: int) -> SelectionMatrix:
        return SelectionMatrix.contiguous(self.u_offset(i), self.u_sizes[i], self.n_u)

    def area_of_x(self, idx: int) -> int:
        for i in range(self.N):
            if idx < self.x_offset(i) + self.x_sizes[i]:
                return i
        raise IndexError(idx)

    def area_of_u(self, idx: int) -> int:
        for i in range(self.N):
            if idx < self.u_offset(i) + self.u_sizes[i]:
                return i
        raise IndexError(idx)

    def with_neighbors(self, neighbors: Sequence[Sequence[int]]) -> "AreaPartition":
        return AreaPartition(self.x_sizes, self.u_sizes, tuple(frozenset(s) for s in neighbors))


def partition(n_x: int, n_u: int, sizes: Sequence[tuple[int, int]], neighbors=None) -> AreaPartition:
    """Build a partition from per-area (n_xi, n_ui) sizes."""
    xs = tuple(int(s[0]) for s in sizes)
    us = tuple(int(s[1]) for s in sizes)
    if sum(xs) != n_x or sum(us) != n_u:
        raise ValueError(f"area sizes sum to ({sum(xs)}, {sum(us)}), expected ({n_x}, {n_u})")
    nb = () if neighbors is None else tuple(frozenset(s) for s in neighbors)
    return AreaPartition(xs, us, nb)
