"""Convex sets and the exact set calculus used by the design pipeline.

Inputs (constraints and disturbance bounds) are boxes, propagated
uncertainty is zonotopes, tightened constraint sets are H-polytopes. With
that split every Minkowski sum and Pontryagin difference below is exact:
sums of zonotopes concatenate generators, and a difference with a
polyhedral minuend only shifts right-hand sides by support values.
"""

from __future__ import annotations

import itertools
from typing import Sequence, Union

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

EPS_MEM = 1e-9
LP_TOL = 1e-8


class EmptySetError(ValueError):
    """Raised when a support value is requested from an empty set."""


class LPFailure(RuntimeError):
    """The LP backend failed for reasons other than infeasibility."""


def _vector(v, name="vector") -> np.ndarray:
    a = np.array(v, dtype=float, copy=True).reshape(-1)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class Zonotope:
    """{c + G l : ||l||_inf <= 1}."""

    __slots__ = ("center", "generators")

    def __init__(self, center, generators=None):
        c = _vector(center, "center")
        if generators is None:
            G = np.zeros((c.size, 0))
        else:
            G = np.array(generators, dtype=float, copy=True)
            if G.ndim == 1:
                G = G.reshape(c.size, -1)
        if G.shape[0] != c.size:
            raise ValueError(f"generators have {G.shape[0]} rows, center has {c.size}")
        if c.size < 1:
            raise ValueError("sets need dimension >= 1")
        self.center = _readonly(c)
        self.generators = _readonly(G)

    @property
    def dim(self) -> int:
        return self.center.size

    def support(self, d) -> float:
        d = np.asarray(d, dtype=float)
        return float(d @ self.center + np.sum(np.abs(d @ self.generators)))

    def contains(self, p, tol: float = EPS_MEM) -> bool:
        p = _vector(p)
        G = self.generators
        if G.shape[1] == 0:
            return bool(np.max(np.abs(p - self.center)) <= tol)
        return member_of_minkowski_sum(p - self.center, [(G, Box(np.zeros(G.shape[1]), np.ones(G.shape[1])))], tol)

    def is_empty(self) -> bool:
        return False

    def vertices(self, max_generators: int = 20) -> np.ndarray:
        """Candidate vertices from generator sign patterns, pruned to the hull."""
        G = self.generators[:, np.any(self.generators != 0, axis=0)]
        if G.shape[1] > max_generators:
            raise ValueError(f"{G.shape[1]} generators exceed the enumeration cap {max_generators}")
        if G.shape[1] == 0:
            return self.center[None, :].copy()
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=G.shape[1])))
        pts = self.center + signs @ G.T
        return hull_points(pts)

    def reduce(self, max_generators: int) -> "Zonotope":
        """Outer approximation with at most `max_generators` generators.

        Keeps the longest generators and boxes the rest.
        """
        G = self.generators
        if G.shape[1] <= max_generators:
            return self
        k = max(max_generators - self.dim, 0)
        order = np.argsort(-np.linalg.norm(G, axis=0), kind="stable")
        keep, rest = G[:, order[:k]], G[:, order[k:]]
        return Zonotope(self.center, np.hstack([keep, np.diag(np.sum(np.abs(rest), axis=1))]))

    def __repr__(self):
        return f"Zonotope(dim={self.dim}, generators={self.generators.shape[1]})"


class Box(Zonotope):
    """Axis-aligned box; a zero half-width pins that coordinate."""

    __slots__ = ("halfwidths",)

    def __init__(self, center, halfwidths):
        c = _vector(center, "center")
        r = _vector(halfwidths, "halfwidths")
        if r.size == 1 and c.size > 1:
            r = np.full(c.size, r[0])
        if r.shape != c.shape:
            raise ValueError("center and halfwidths must have equal length")
        if np.any(r < 0):
            raise ValueError("halfwidths must be non-negative")
        nz = np.flatnonzero(r)
        G = np.zeros((c.size, nz.size))
        G[nz, np.arange(nz.size)] = r[nz]
        super().__init__(c, G)
        self.halfwidths = _readonly(r)

    @classmethod
    def from_bounds(cls, lower, upper) -> "Box":
        lo = _vector(lower)
        hi = _vector(upper)
        if np.any(hi < lo):
            raise ValueError("upper bounds must not be below lower bounds")
        return cls(0.5 * (lo + hi), 0.5 * (hi - lo))

    @classmethod
    def symmetric(cls, halfwidths) -> "Box":
        r = _vector(halfwidths)
        return cls(np.zeros(r.size), r)

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.halfwidths

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.halfwidths

    def support(self, d) -> float:
        d = np.asarray(d, dtype=float)
        return float(d @ self.center + np.abs(d) @ self.halfwidths)

    def contains(self, p, tol: float = EPS_MEM) -> bool:
        p = _vector(p)
        return bool(np.all(np.abs(p - self.center) <= self.halfwidths + tol))

    def to_hpolytope(self) -> "HPolytope":
        n = self.dim
        H = np.vstack([np.eye(n), -np.eye(n)])
        return HPolytope(H, np.concatenate([self.upper, -self.lower]))

    def __repr__(self):
        return f"Box(lower={self.lower.tolist()}, upper={self.upper.tolist()})"


class HPolytope:
    """{v : H v <= h}."""

    __slots__ = ("H", "h", "_vertices")

    def __init__(self, H, h):
        H = np.array(H, dtype=float, copy=True)
        h = np.array(h, dtype=float, copy=True).reshape(-1)
        if H.ndim == 1:
            H = H.reshape(1, -1)
        if H.shape[0] != h.size or H.shape[0] < 1:
            raise ValueError("H and h need the same positive number of rows")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(h))):
            raise ValueError("H-polytope entries must be finite")
        self.H = _readonly(H)
        self.h = _readonly(h)
        self._vertices = None

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    def support(self, d) -> float:
        d = np.asarray(d, dtype=float)
        res = linprog(-d, A_ub=self.H, b_ub=self.h, bounds=(None, None), method="highs")
        if res.status == 2:
            raise EmptySetError("support of an empty polytope")
        if res.status == 3:
            return np.inf
        if res.status != 0:
            raise LPFailure(res.message)
        return float(-res.fun)

    def contains(self, p, tol: float = EPS_MEM) -> bool:
        p = _vector(p)
        return bool(np.all(self.H @ p <= self.h + tol))

    def is_empty(self) -> bool:
        res = linprog(np.zeros(self.dim), A_ub=self.H, b_ub=self.h, bounds=(None, None), method="highs")
        if res.status == 2:
            return True
        if res.status not in (0, 3):
            raise LPFailure(res.message)
        return False

    def bounding_box(self) -> Box:
        n = self.dim
        hi = np.array([self.support(e) for e in np.eye(n)])
        lo = np.array([-self.support(-e) for e in np.eye(n)])
        if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
            raise ValueError("unbounded polytope has no bounding box")
        return Box.from_bounds(lo, np.maximum(hi, lo))

    def as_box(self, tol: float = 1e-12) -> Box:
        """The polytope as a box, if it is one."""
        for row in self.H:
            if np.count_nonzero(np.abs(row) > tol) > 1:
                raise ValueError("polytope has non-axis-aligned rows")
        return self.bounding_box()

    def vertices(self, max_combinations: int = 2_000_000) -> np.ndarray:
        """Vertices by brute-force enumeration of row subsets (small dims only)."""
        if self._vertices is not None:
            return self._vertices
        n, q = self.dim, self.H.shape[0]
        if _ncomb(q, n) > max_combinations:
            raise ValueError("too many row combinations for brute-force vertex enumeration")
        scale = 1.0 + np.max(np.abs(self.h))
        pts = []
        for rows in itertools.combinations(range(q), n):
            Hs = self.H[list(rows)]
            if abs(np.linalg.det(Hs)) < 1e-12:
                continue
            v = np.linalg.solve(Hs, self.h[list(rows)])
            if np.all(self.H @ v <= self.h + 1e-9 * scale):
                pts.append(v)
        if not pts:
            if self.is_empty():
                raise EmptySetError("empty polytope has no vertices")
            raise ValueError("polytope has no vertices (unbounded or lower-dimensional lineality)")
        out = _unique_rows(np.array(pts), 1e-9 * scale)
        self._vertices = _readonly(out)
        return self._vertices

    def __repr__(self):
        return f"HPolytope(dim={self.dim}, rows={self.H.shape[0]})"


class LinearImageSum:
    """Minkowski sum of linear images, sum_j M_j S_j, kept symbolically."""

    __slots__ = ("terms", "dim")

    def __init__(self, terms: Sequence[tuple[np.ndarray, "ConvexSet"]], dim: int | None = None):
        clean = []
        for M, S in terms:
            M = np.asarray(M, dtype=float)
            if M.ndim != 2 or M.shape[1] != S.dim:
                raise ValueError(f"image matrix {M.shape} does not match set dimension {S.dim}")
            clean.append((_readonly(M.copy()), S))
        if dim is None:
            if not clean:
                raise ValueError("empty image sum needs an explicit dimension")
            dim = clean[0][0].shape[0]
        if any(M.shape[0] != dim for M, _ in clean):
            raise ValueError("all images must share the output dimension")
        self.terms = tuple(clean)
        self.dim = int(dim)

    def support(self, d) -> float:
        d = np.asarray(d, dtype=float)
        return float(sum(support(S, M.T @ d) for M, S in self.terms))

    def contains(self, p, tol: float = EPS_MEM) -> bool:
        if not self.terms:
            return bool(np.max(np.abs(_vector(p))) <= tol)
        return member_of_minkowski_sum(p, list(self.terms), tol)

    def is_empty(self) -> bool:
        return any(is_empty(S) for _, S in self.terms)

    def vertices(self) -> np.ndarray:
        if not self.terms:
            return np.zeros((1, self.dim))
        pts = [hull_points(vertices(S) @ M.T) for M, S in self.terms]
        return minkowski_points(pts)

    def as_zonotope(self) -> Zonotope:
        """Exact zonotope when every term is a box or zonotope."""
        c = np.zeros(self.dim)
        gens = [np.zeros((self.dim, 0))]
        for M, S in self.terms:
            if not isinstance(S, Zonotope):
                raise TypeError("term is not a zonotope")
            c = c + M @ S.center
            gens.append(M @ S.generators)
        return Zonotope(c, np.hstack(gens))

    def __add__(self, other: "LinearImageSum") -> "LinearImageSum":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        return LinearImageSum(self.terms + other.terms, self.dim)

    def __repr__(self):
        return f"LinearImageSum(dim={self.dim}, terms={len(self.terms)})"


ConvexSet = Union[Box, Zonotope, HPolytope, LinearImageSum]


def _ncomb(q: int, n: int) -> int:
    from math import comb

    return comb(q, n)


def _unique_rows(pts: np.ndarray, tol: float) -> np.ndarray:
    out: list[np.ndarray] = []
    for p in pts:
        if not any(np.max(np.abs(p - o)) <= tol for o in out):
            out.append(p)
    return np.array(out)


def hull_points(pts: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Subset of `pts` that are vertices of their convex hull."""
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.shape[0] <= 2:
        return _unique_rows(pts, tol)
    mean = pts.mean(axis=0)
    X = pts - mean
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    scale = max(1.0, float(s[0]) if s.size else 0.0)
    r = int(np.sum(s > tol * scale * 10))
    if r == 0:
        return pts[:1].copy()
    Y = X @ Vt[:r].T
    if r == 1:
        return pts[[int(np.argmin(Y[:, 0])), int(np.argmax(Y[:, 0]))]]
    try:
        hull = ConvexHull(Y)
    except QhullError:
        hull = ConvexHull(Y, qhull_options="QJ")
    return _unique_rows(pts[np.sort(hull.vertices)], tol)


def minkowski_points(point_sets: Sequence[np.ndarray]) -> np.ndarray:
    """Hull vertices of the Minkowski sum of finite point sets."""
    acc = np.asarray(point_sets[0], dtype=float)
    for nxt in point_sets[1:]:
        nxt = np.asarray(nxt, dtype=float)
        acc = hull_points((acc[:, None, :] + nxt[None, :, :]).reshape(-1, acc.shape[1]))
    return hull_points(acc)


def vertices(S: ConvexSet) -> np.ndarray:
    return S.vertices()


def support(S: ConvexSet, direction) -> float:
    """sup over S of direction'v; +inf if unbounded, EmptySetError if empty."""
    d = np.asarray(direction, dtype=float).reshape(-1)
    if d.size != S.dim:
        raise ValueError(f"direction has length {d.size}, set has dimension {S.dim}")
    return S.support(d)


def minkowski_sum(a: Zonotope, b: Zonotope) -> Zonotope:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if isinstance(a, Box) and isinstance(b, Box):
        return Box(a.center + b.center, a.halfwidths + b.halfwidths)
    return Zonotope(a.center + b.center, np.hstack([a.generators, b.generators]))


def _as_hpolytope(S) -> HPolytope:
    if isinstance(S, HPolytope):
        return S
    if isinstance(S, Box):
        return S.to_hpolytope()
    raise TypeError(f"cannot use {type(S).__name__} as a polyhedral minuend")


def pontryagin_diff(minuend, subtrahend) -> HPolytope:
    """minuend (-) subtrahend in H-form: same rows, h_j - support(subtrahend, H_j)."""
    P = _as_hpolytope(minuend)
    if P.dim != subtrahend.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {subtrahend.dim}")
    shift = np.array([support(subtrahend, row) for row in P.H])
    if not np.all(np.isfinite(shift)):
        raise ValueError("subtrahend must be bounded")
    return HPolytope(P.H, P.h - shift)


def linear_image(M, S: Zonotope) -> Zonotope:
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(1, -1)
    if M.shape[1] != S.dim:
        raise ValueError(f"matrix has {M.shape[1]} columns, set has dimension {S.dim}")
    if isinstance(S, Box) and M.shape[0] == M.shape[1] and np.count_nonzero(M - np.diag(np.diag(M))) == 0:
        return Box(M @ S.center, np.abs(np.diag(M)) * S.halfwidths)
    return Zonotope(M @ S.center, M @ S.generators)


def product(a, b):
    """Cartesian product in block coordinates."""
    if isinstance(a, Box) and isinstance(b, Box):
        return Box(np.concatenate([a.center, b.center]), np.concatenate([a.halfwidths, b.halfwidths]))
    if isinstance(a, Zonotope) and isinstance(b, Zonotope):
        G = np.zeros((a.dim + b.dim, a.generators.shape[1] + b.generators.shape[1]))
        G[: a.dim, : a.generators.shape[1]] = a.generators
        G[a.dim :, a.generators.shape[1] :] = b.generators
        return Zonotope(np.concatenate([a.center, b.center]), G)
    pa, pb = _as_hpolytope(a), _as_hpolytope(b)
    H = np.zeros((pa.H.shape[0] + pb.H.shape[0], pa.dim + pb.dim))
    H[: pa.H.shape[0], : pa.dim] = pa.H
    H[pa.H.shape[0] :, pa.dim :] = pb.H
    return HPolytope(H, np.concatenate([pa.h, pb.h]))


def product_all(sets: Sequence) -> object:
    out = sets[0]
    for s in sets[1:]:
        out = product(out, s)
    return out


def contains(S: ConvexSet, point, tol: float = EPS_MEM) -> bool:
    return S.contains(point, tol)


def is_empty(S: ConvexSet) -> bool:
    return S.is_empty()


def member_of_minkowski_sum(point, summands: Sequence[tuple[np.ndarray, ConvexSet]], tol: float = LP_TOL) -> bool:
    """Decide whether point = sum_j M_j s_j for some s_j in S_j, by one LP.

    The LP minimises the l1 residual of the equality; the point is a member
    when that residual is at most `tol`. An empty summand makes the answer
    False. Backend failures raise LPFailure.
    """
    p = _vector(point, "point")
    n = p.size
    flat = []
    for M, S in summands:
        M = np.asarray(M, dtype=float)
        if M.ndim == 1:
            M = M.reshape(n, -1)
        if isinstance(S, LinearImageSum):
            flat.extend((M @ Mt, St) for Mt, St in S.terms)
        else:
            flat.append((M, S))
    nvar = 0
    const = np.zeros(n)
    A_cols, bounds, ub_rows, ub_rhs, poly_blocks = [], [], [], [], []
    for M, S in flat:
        if M.shape != (n, S.dim):
            raise ValueError(f"summand image {M.shape} inconsistent with point {n} and set {S.dim}")
        if isinstance(S, Box):
            A_cols.append(M)
            bounds.extend(zip(S.lower, S.upper))
            k = S.dim
        elif isinstance(S, Zonotope):
            const += M @ S.center
            A_cols.append(M @ S.generators)
            k = S.generators.shape[1]
            bounds.extend([(-1.0, 1.0)] * k)
        elif isinstance(S, HPolytope):
            A_cols.append(M)
            bounds.extend([(None, None)] * S.dim)
            k = S.dim
            poly_blocks.append((nvar, S))
        else:
            raise TypeError(f"unsupported summand {type(S).__name__}")
        nvar += k
    A_img = np.hstack(A_cols) if A_cols else np.zeros((n, 0))
    for start, S in poly_blocks:
        row = np.zeros((S.H.shape[0], nvar + 2 * n))
        row[:, start : start + S.dim] = S.H
        ub_rows.append(row)
        ub_rhs.append(S.h)
    # variables: [s, e_plus, e_minus]
    A_eq = np.hstack([A_img, np.eye(n), -np.eye(n)])
    c = np.concatenate([np.zeros(nvar), np.ones(2 * n)])
    res = linprog(
        c,
        A_ub=np.vstack(ub_rows) if ub_rows else None,
        b_ub=np.concatenate(ub_rhs) if ub_rhs else None,
        A_eq=A_eq,
        b_eq=p - const,
        bounds=bounds + [(0, None)] * (2 * n),
        method="highs",
    )
    if res.status == 2:
        return False
    if res.status != 0:
        raise LPFailure(res.message)
    scale = 1.0 + float(np.max(np.abs(p)))
    return bool(res.fun <= tol * scale)


def to_record(S: ConvexSet) -> dict:
    if isinstance(S, Box):
        return {"type": "box", "center": S.center.tolist(), "halfwidths": S.halfwidths.tolist()}
    if isinstance(S, Zonotope):
        return {"type": "zonotope", "center": S.center.tolist(), "generators": S.generators.tolist()}
    if isinstance(S, HPolytope):
        return {"type": "hpolytope", "H": S.H.tolist(), "h": S.h.tolist()}
    raise TypeError(f"cannot serialise {type(S).__name__}")


def from_record(rec: dict) -> ConvexSet:
    kind = rec.get("type")
    if kind == "box":
        return Box(rec["center"], rec["halfwidths"])
    if kind == "zonotope":
        c = np.asarray(rec["center"], dtype=float)
        G = np.asarray(rec["generators"], dtype=float).reshape(c.size, -1)
        return Zonotope(c, G)
    if kind == "hpolytope":
        H = np.asarray(rec["H"], dtype=float)
        return HPolytope(H.reshape(len(rec["h"]), -1), rec["h"])
    raise ValueError(f"unknown set record type {kind!r}")
