"""Independent oracles and random-instance builders shared by the tests."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.spatial import Delaunay

from nrfmpc.design import ConstraintSpec, DesignInfeasible, DesignOptions, run_design
from nrfmpc.linsys import AreaPartition, StateSpace
from nrfmpc.nrf import NrfBlock, build_nrf_layer
from nrfmpc.sets import Box


# ---------------------------------------------------------------- set oracles


def sign_vertices(center, G) -> np.ndarray:
    """All c + G s for s in {-1, 1}^m (a superset of the zonotope's vertices)."""
    G = np.asarray(G, dtype=float)
    m = G.shape[1]
    if m == 0:
        return np.asarray(center, dtype=float)[None, :]
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=m)))
    return np.asarray(center, dtype=float) + signs @ G.T


def support_by_enumeration(points, d) -> float:
    return float(np.max(np.asarray(points) @ np.asarray(d)))


def in_hull(points, p, tol=1e-9) -> bool:
    """Point-in-convex-hull via a Delaunay triangulation (full-dimensional sets)."""
    tri = Delaunay(points)
    return bool(tri.find_simplex(p, tol=tol) >= 0)


def grid(lower, upper, n=5) -> np.ndarray:
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(lower, upper)]
    return np.array(list(itertools.product(*axes)))


# ---------------------------------------------------------------- QP oracle


def qp_by_enumeration(P, q, A, b, tol=1e-9):
    """Optimum of min 0.5x'Px + q'x s.t. Ax <= b by trying every active set.

    Returns (x, objective) or (None, inf) if no KKT point exists.
    """
    n, m = P.shape[0], A.shape[0]
    best = (None, np.inf)
    for k in range(0, min(n, m) + 1):
        for act in itertools.combinations(range(m), k):
            act = list(act)
            Aa = A[act]
            K = np.block([[P, Aa.T], [Aa, np.zeros((k, k))]])
            rhs = np.concatenate([-q, b[act]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            if not np.all(np.isfinite(sol)):
                continue
            x, lam = sol[:n], sol[n:]
            if np.any(lam < -1e-9) or np.any(A @ x - b > tol * (1 + np.abs(b))):
                continue
            obj = 0.5 * x @ P @ x + q @ x
            if obj < best[1] - 1e-12:
                best = (x, obj)
    return best


def random_qp(rng, n, m):
    M = rng.normal(size=(n, n))
    P = M @ M.T + 0.1 * np.eye(n)
    q = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    b = rng.normal(size=m) + 0.5
    return P, q, A, b


# ---------------------------------------------------------------- small systems


def two_area_system(a1, a2, c12, c21, b1, b2, nrf, X=10.0, U=10.0, us2=2.0, us1=5.0, noise=0.01, dist=0.05):
    """Scalar two-area plant with first-order controllers and full neighbourhoods.

    nrf = ((pole1, gain_u_other1, gain_x_own1, gain_x_other1), (...)) per area.
    """
    A = np.array([[a1, c12], [c21, a2]])
    B = np.diag([b1, b2])
    plant = StateSpace.network(A, B, np.eye(2))
    part = AreaPartition((1, 1), (1, 1), (frozenset({0, 1}), frozenset({0, 1})))
    blocks = []
    for i, (pole, gu, gx, gxo) in enumerate(nrf):
        o = 1 - i
        K = np.zeros((1, 4))
        K[0, o] = gu
        K[0, 2 + i] = gx
        K[0, 2 + o] = gxo
        blocks.append(NrfBlock.from_diagonal(pole, K))
    layer = build_nrf_layer(part, blocks)
    spec = ConstraintSpec(
        partition=part,
        X=(Box.symmetric([X]),) * 2,
        U=(Box.symmetric([U]),) * 2,
        V=Box.symmetric(np.full(4, noise)),
        D_d=Box.symmetric([dist, dist]),
        D_bf=Box.symmetric(np.full(2, noise)),
        D_bs1=Box.symmetric(np.full(2, noise)),
        D_bs2=Box.symmetric(np.full(2, noise)),
        U_s1=(Box.symmetric([us1]),) * 2,
        U_s2=(Box.symmetric([us2]),) * 2,
    )
    return plant, layer, spec


def random_certified_two_area(rng, attempts=200):
    """Draw stable two-area systems until one passes the one-step certificate."""
    for _ in range(attempts):
        a1, a2 = rng.uniform(0.2, 0.7, 2)
        c12, c21 = rng.uniform(-0.1, 0.1, 2)
        b1, b2 = rng.uniform(0.5, 1.0, 2)
        nrf = tuple(
            (rng.uniform(0.1, 0.5), rng.uniform(-0.05, 0.05), -rng.uniform(0.05, 0.2), rng.uniform(-0.05, 0.05))
            for _ in range(2)
        )
        plant, layer, spec = two_area_system(a1, a2, c12, c21, b1, b2, nrf,
                                             us2=rng.uniform(2.0, 4.0), us1=rng.uniform(2.0, 8.0))
        try:
            art = run_design(spec, layer, plant, DesignOptions(rho_max=1))
        except DesignInfeasible:
            continue
        if art.certified:
            return plant, layer, spec, art
    raise RuntimeError("no certified system found")


# ---------------------------------------------------------------- set-calculus suite


def _random_set(rng, dim):
    from nrfmpc.sets import Zonotope

    c = rng.uniform(-2, 2, dim)
    if rng.random() < 0.5:
        return Box(c, rng.uniform(0.1, 2.0, dim))
    m = int(rng.integers(dim, dim + 3))
    return Zonotope(c, rng.uniform(-1, 1, (dim, m)))


def _verts(S):
    if isinstance(S, Box):
        return grid(S.lower, S.upper, 2)
    return sign_vertices(S.center, S.generators)


def set_calculus_suite(n=1000, seed=0, tol=1e-9) -> dict:
    """Randomised comparison of the set calculus against enumeration oracles.

    Returns mismatch counts per operation and the number of checks made.
    """
    from nrfmpc import sets as S

    rng = np.random.default_rng(seed)
    bad = {"support": 0, "minkowski": 0, "pontryagin": 0, "membership": 0, "containment": 0}
    checks = dict.fromkeys(bad, 0)
    for _ in range(n):
        dim = int(rng.integers(1, 4))
        A, B = _random_set(rng, dim), _random_set(rng, dim)
        d = rng.normal(size=dim)
        checks["support"] += 1
        if abs(S.support(A, d) - support_by_enumeration(_verts(A), d)) > tol * (1 + abs(S.support(A, d))):
            bad["support"] += 1
        sum_pts = (_verts(A)[:, None, :] + _verts(B)[None, :, :]).reshape(-1, dim)
        checks["minkowski"] += 1
        if abs(S.support(S.minkowski_sum(A, B), d) - support_by_enumeration(sum_pts, d)) > tol * (1 + np.abs(sum_pts).max()):
            bad["minkowski"] += 1

        # box minuend large enough for a non-empty difference
        Bs = S.linear_image(0.3 * np.eye(dim), B)
        big = Box(rng.uniform(-1, 1, dim), rng.uniform(2.0, 4.0, dim))
        P = S.pontryagin_diff(big, Bs)
        bv = _verts(Bs)
        lo = big.lower - bv.min(axis=0)
        hi = big.upper - bv.max(axis=0)
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = 1.0
            checks["pontryagin"] += 1
            if abs(P.support(e) - hi[k]) > tol * (1 + abs(hi[k])) or abs(P.support(-e) + lo[k]) > tol * (1 + abs(lo[k])):
                bad["pontryagin"] += 1
        # (A - B) + B stays inside A on sampled points
        for _ in range(5):
            p = rng.uniform(lo, hi) if np.all(hi >= lo) else None
            if p is None:
                break
            checks["containment"] += 1
            q = p + bv[rng.integers(bv.shape[0])]
            if not big.contains(q, 1e-9):
                bad["containment"] += 1

        # membership against a Delaunay hull of the vertices
        V = _verts(A)
        if dim == 1:
            p = rng.uniform(V.min() - 1, V.max() + 1, 1)
            truth = bool(V.min() - 1e-12 <= p[0] <= V.max() + 1e-12)
        else:
            try:
                p = rng.uniform(V.min(axis=0) - 0.5, V.max(axis=0) + 0.5)
                truth = in_hull(V, p)
            except Exception:
                continue
        # skip points within numerical distance of the boundary
        if any(in_hull_safe(V, A.center + (1 + s) * (p - A.center)) != truth for s in (-1e-6, 1e-6)):
            continue
        checks["membership"] += 1
        if S.contains(A, p) != truth:
            bad["membership"] += 1
    return {"mismatches": bad, "checks": checks}


def in_hull_safe(V, p):
    if V.shape[1] == 1:
        return bool(V.min() - 1e-12 <= p[0] <= V.max() + 1e-12)
    return in_hull(V, p)


# ---------------------------------------------------------------- QP suite


def qp_suite(n=1000, seed=0, tol=1e-6) -> dict:
    from nrfmpc.optim import OPTIMAL, INFEASIBLE, QpProblem, solve_qp

    rng = np.random.default_rng(seed)
    out = {"instances": n, "objective_mismatch": 0, "status_mismatch": 0, "kkt_fail": 0, "optimal": 0}
    for _ in range(n):
        nv = int(rng.integers(1, 9))
        m = int(rng.integers(0, 13))
        P, q, A, b = random_qp(rng, nv, m)
        x_ref, f_ref = qp_by_enumeration(P, q, A, b)
        sol = solve_qp(QpProblem(P, q, A, b))
        if x_ref is None:
            if sol.status != INFEASIBLE:
                out["status_mismatch"] += 1
            continue
        if sol.status != OPTIMAL:
            out["status_mismatch"] += 1
            continue
        out["optimal"] += 1
        if abs(sol.objective - f_ref) > tol * (1 + abs(f_ref)):
            out["objective_mismatch"] += 1
        if max(sol.primal_residual, sol.dual_residual, sol.complementarity) > tol:
            out["kkt_fail"] += 1
    return out
