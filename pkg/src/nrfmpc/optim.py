"""Dense convex LP and QP solvers.

LPs go to the HiGHS backend shipped with scipy. QPs use a dual active-set
method (Goldfarb-Idnani) with equality rows eliminated through a null-space
basis, which keeps pinned variables exact and the solver deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, null_space
from scipy.optimize import linprog

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"


@dataclass(frozen=True)
class QpProblem:
    """min 0.5 x'Px + q'x  s.t.  A_ineq x <= b_ineq,  A_eq x = b_eq."""

    P: np.ndarray
    q: np.ndarray
    A_ineq: np.ndarray | None = None
    b_ineq: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        n = q.size
        P = np.zeros((n, n)) if self.P is None else np.asarray(self.P, dtype=float)
        if P.shape != (n, n):
            raise ValueError(f"P has shape {P.shape}, expected {(n, n)}")
        if np.max(np.abs(P - P.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(P), initial=0.0)):
            raise ValueError("P must be symmetric")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        for A_name, b_name in (("A_ineq", "b_ineq"), ("A_eq", "b_eq")):
            A = getattr(self, A_name)
            b = getattr(self, b_name)
            A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float).reshape(-1, n)
            b = np.zeros(0) if b is None else np.asarray(b, dtype=float).reshape(-1)
            if A.shape[0] != b.size:
                raise ValueError(f"{A_name} has {A.shape[0]} rows but {b_name} has {b.size}")
            object.__setattr__(self, A_name, A)
            object.__setattr__(self, b_name, b)

    @property
    def n(self) -> int:
        return self.q.size


@dataclass
class QpSolution:
    x: np.ndarray | None
    objective: float
    status: str
    iterations: int
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    complementarity: float = np.inf
    lam_ineq: np.ndarray | None = None
    lam_eq: np.ndarray | None = None
    active_set: tuple[int, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def kkt_residuals(prob: QpProblem, x, lam_ineq, lam_eq) -> tuple[float, float, float]:
    """(primal, dual, complementarity) residuals in the problem's own scaling."""
    x = np.asarray(x, dtype=float)
    lam_ineq = np.zeros(prob.A_ineq.shape[0]) if lam_ineq is None else np.asarray(lam_ineq)
    lam_eq = np.zeros(prob.A_eq.shape[0]) if lam_eq is None else np.asarray(lam_eq)
    grad = prob.P @ x + prob.q + prob.A_ineq.T @ lam_ineq + prob.A_eq.T @ lam_eq
    slack = prob.b_ineq - prob.A_ineq @ x
    primal = max(
        float(np.max(-slack, initial=0.0)),
        float(np.max(np.abs(prob.A_eq @ x - prob.b_eq), initial=0.0)),
    )
    dual = max(float(np.max(np.abs(grad), initial=0.0)), float(np.max(-lam_ineq, initial=0.0)))
    comp = float(np.max(np.abs(lam_ineq * slack), initial=0.0))
    return primal, dual, comp


def solve_lp(prob: QpProblem, tol: float = 1e-8, max_iter: int = 100_000) -> QpSolution:
    """Solve an LP (P must be zero) with HiGHS."""
    if np.any(prob.P):
        raise ValueError("solve_lp requires P = 0")
    res = linprog(
        prob.q,
        A_ub=prob.A_ineq if prob.A_ineq.size else None,
        b_ub=prob.b_ineq if prob.b_ineq.size else None,
        A_eq=prob.A_eq if prob.A_eq.size else None,
        b_eq=prob.b_eq if prob.b_eq.size else None,
        bounds=(None, None),
        method="highs",
        options={"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": tol,
                 "maxiter": max_iter},
    )
    nit = int(getattr(res, "nit", 0) or 0)
    if res.status == 2:
        return QpSolution(None, np.inf, INFEASIBLE, nit)
    if res.status == 3:
        return QpSolution(None, -np.inf, UNBOUNDED, nit)
    if res.status == 1:
        return QpSolution(None, np.nan, MAX_ITER, nit)
    if res.status != 0:
        raise RuntimeError(f"LP backend failure: {res.message}")
    # scipy reports marginals as d(obj)/d(b); our multipliers are their negatives
    lam_in = -res.ineqlin.marginals if prob.A_ineq.size else np.zeros(0)
    lam_eq = -res.eqlin.marginals if prob.A_eq.size else np.zeros(0)
    p, d, c = kkt_residuals(prob, res.x, lam_in, lam_eq)
    return QpSolution(np.asarray(res.x), float(res.fun), OPTIMAL, nit, p, d, c, lam_in, lam_eq)


class _EqualityReduction:
    """x = x0 + Z y parametrises {A_eq x = b_eq}."""

    def __init__(self, prob: QpProblem):
        n = prob.n
        if prob.A_eq.shape[0] == 0:
            self.x0 = np.zeros(n)
            self.Z = np.eye(n)
            self.consistent = True
            return
        self.x0 = np.linalg.lstsq(prob.A_eq, prob.b_eq, rcond=None)[0]
        scale = 1.0 + np.max(np.abs(prob.b_eq), initial=0.0)
        self.consistent = bool(np.max(np.abs(prob.A_eq @ self.x0 - prob.b_eq)) <= 1e-10 * scale)
        self.Z = null_space(prob.A_eq)


def _solve_reduced(G, a, C, b, tol, max_iter, warm):
    """Goldfarb-Idnani on min 0.5 y'Gy + a'y s.t. C y <= b (rows of C unit-norm).

    Returns (y, lam, active, iterations, status).
    """
    n = G.shape[0]
    m = C.shape[0]
    chol = cho_factor(G)
    Ginv = lambda v: cho_solve(chol, v)  # noqa: E731
    lam = np.zeros(m)
    active: list[int] = []

    def eq_solve(act):
        # minimiser on the face {C_act y = b_act}; multipliers for C y <= b
        if not act:
            return Ginv(-a), np.zeros(0)
        N = C[act]
        GiN = Ginv(N.T)
        M = N @ GiN
        y0 = Ginv(-a)
        mu = np.linalg.solve(M, N @ y0 - b[act])
        return y0 - GiN @ mu, mu

    y = None
    if warm:
        act = [j for j in warm if 0 <= j < m]
        if act and np.linalg.matrix_rank(C[act]) == len(act):
            try:
                y_w, mu = eq_solve(act)
                if np.all(mu >= -tol):
                    y = y_w
                    active = list(act)
                    lam[act] = np.maximum(mu, 0.0)
            except np.linalg.LinAlgError:
                y = None
    if y is None:
        y = Ginv(-a)
        active = []
        lam[:] = 0.0

    it = 0
    while it < max_iter:
        viol = C @ y - b
        if active:
            viol[active] = -np.inf
        p = int(np.argmax(viol)) if m else -1
        if m == 0 or viol[p] <= tol:
            return y, lam, active, it, OPTIMAL
        n_p = C[p]
        # inner loop: keep stepping until p joins the active set
        while True:
            it += 1
            if it > max_iter:
                return y, lam, active, it, MAX_ITER
            if active:
                N = C[active]
                GiN = Ginv(N.T)
                M = N @ GiN
                r = np.linalg.solve(M, GiN.T @ n_p)
                z = Ginv(n_p) - GiN @ r
                if len(active) >= n:
                    z = np.zeros(n)
            else:
                r = np.zeros(0)
                z = Ginv(n_p)
            s = float(n_p @ y - b[p])
            # partial (dual) step length
            t1, k_drop = np.inf, -1
            for pos, j in enumerate(active):
                if r[pos] > 1e-14 and lam[j] / r[pos] < t1:
                    t1, k_drop = lam[j] / r[pos], pos
            zn = float(z @ n_p)
            t2 = s / zn if zn > 1e-11 * float(n_p @ Ginv(n_p)) else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                return y, lam, active, it, INFEASIBLE
            if np.isfinite(t2):
                y = y - t * z
            for pos, j in enumerate(active):
                lam[j] -= t * r[pos]
            lam[p] += t
            if t == t2:
                active.append(p)
                break
            j = active.pop(k_drop)
            lam[j] = 0.0
    return y, lam, active, it, MAX_ITER


def solve_qp(
    prob: QpProblem,
    tol: float = 1e-9,
    kkt_tol: float = 1e-6,
    max_iter: int = 100_000,
    warm_active: tuple[int, ...] | None = None,
) -> QpSolution:
    """Solve a strictly convex QP (P positive definite on the equality null space).

    `warm_active` seeds the dual active-set iteration with a previous active set;
    it is used only if it yields a dual-feasible starting point.
    """
    red = _EqualityReduction(prob)
    if not red.consistent:
        return QpSolution(None, np.inf, INFEASIBLE, 0)
    Z, x0 = red.Z, red.x0
    m = prob.A_ineq.shape[0]
    if Z.shape[1] == 0:
        x = x0
        slack = prob.b_ineq - prob.A_ineq @ x
        if np.any(slack < -tol * (1 + np.abs(prob.b_ineq))):
            return QpSolution(None, np.inf, INFEASIBLE, 0)
        lam_eq = np.linalg.lstsq(prob.A_eq.T, -(prob.P @ x + prob.q), rcond=None)[0]
        lam_in = np.zeros(m)
        p, d, c = kkt_residuals(prob, x, lam_in, lam_eq)
        obj = float(0.5 * x @ prob.P @ x + prob.q @ x)
        return QpSolution(x, obj, OPTIMAL, 0, p, d, c, lam_in, lam_eq)

    G = Z.T @ prob.P @ Z
    G = 0.5 * (G + G.T)
    a = Z.T @ (prob.P @ x0 + prob.q)
    C = prob.A_ineq @ Z
    b = prob.b_ineq - prob.A_ineq @ x0
    norms = np.linalg.norm(C, axis=1)
    degenerate = norms <= 1e-14
    if np.any(b[degenerate] < -tol):
        return QpSolution(None, np.inf, INFEASIBLE, 0)
    keep = np.flatnonzero(~degenerate)
    Cn = C[keep] / norms[keep, None]
    bn = b[keep] / norms[keep]
    warm = None
    if warm_active:
        pos = {int(j): k for k, j in enumerate(keep)}
        warm = [pos[j] for j in warm_active if j in pos]
    try:
        y, lam_n, act, it, status = _solve_reduced(G, a, Cn, bn, tol, max_iter, warm)
    except np.linalg.LinAlgError as exc:
        raise ValueError("QP is not strictly convex on the equality-constrained subspace") from exc
    if status != OPTIMAL:
        return QpSolution(None, np.inf if status == INFEASIBLE else np.nan, status, it)
    x = x0 + Z @ y
    lam_in = np.zeros(m)
    lam_in[keep] = lam_n / norms[keep]
    if prob.A_eq.shape[0]:
        resid = -(prob.P @ x + prob.q + prob.A_ineq.T @ lam_in)
        lam_eq = np.linalg.lstsq(prob.A_eq.T, resid, rcond=None)[0]
    else:
        lam_eq = np.zeros(0)
    p, d, c = kkt_residuals(prob, x, lam_in, lam_eq)
    obj = float(0.5 * x @ prob.P @ x + prob.q @ x)
    active = tuple(sorted(int(keep[j]) for j in act))
    status = OPTIMAL if max(p, d, c) <= kkt_tol * (1.0 + np.max(np.abs(prob.b_ineq), initial=0.0)) else MAX_ITER
    return QpSolution(x, obj, status, it, p, d, c, lam_in, lam_eq, active)
