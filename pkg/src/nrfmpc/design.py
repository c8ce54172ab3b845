"""Offline design of the second layer.

The pipeline, per area i and prediction offset t:

1. U_fi = U_i (-) (U_s2i (+) D_bs2 slice), the command room left to the first layer.
2. Interval sets W_lj bounding every controller-state row, from the companion
   recursion and the fed-signal boxes D_wp of the neighbourhood.
3. Bounding sets for the four pieces of the area output o_i = (x_i, u_fi):
   Psi (persistent disturbance), H (initial-condition noise), Theta (reported
   neighbourhood initial conditions) and Delta (other areas' commands plus
   non-neighbour initial conditions).
4. Tightened output constraints P_it = S_i (-) (-H_t) (-) Psi_t (-) Delta_t,
   kept as one stacked H-polytope over o_i.
5. A recursive-feasibility certificate: every vertex of Theta_it must be
   steerable into P_it with budget-limited commands, for t = 1..rho.

Besides box constraints on x_i and u_i, an area may carry mixed rows
lower <= L_x x_i + L_u u_i <= upper. They are tightened into rows over
(x_i, u_fi) by the same budget argument as step 1.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import sets as S
from .linsys import AreaPartition, StateSpace
from .nrf import AreaModel, ClosedLoop, NrfLayer, assemble_closed_loop, extract_area_model, ic_response_map
from .sets import Box, HPolytope, LinearImageSum

ARTIFACT_VERSION = 1


class DesignInfeasible(RuntimeError):
    """A design stage produced an empty set or an uncertifiable area."""

    def __init__(self, area: int, stage: str, detail: str, t: int | None = None, remedy: str = ""):
        msg = f"area {area}: {stage} failed" + (f" at t={t}" if t is not None else "") + f": {detail}"
        if remedy:
            msg += f" (remedy: {remedy})"
        super().__init__(msg)
        self.area = area
        self.stage = stage
        self.t = t
        self.detail = detail
        self.remedy = remedy


REMEDY_BUDGET = "retune the command budgets U_s1i / U_s2i"
REMEDY_FIRST_LAYER = "retune the first layer so the tightened sets stay non-empty"


@dataclass(frozen=True)
class MixedConstraint:
    """lower <= L_x x_i + L_u u_i <= upper, row-wise."""

    L_x: np.ndarray
    L_u: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        L_x = np.atleast_2d(np.asarray(self.L_x, dtype=float))
        L_u = np.atleast_2d(np.asarray(self.L_u, dtype=float))
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if not (L_x.shape[0] == L_u.shape[0] == lo.size == hi.size):
            raise ValueError("mixed constraint pieces must have matching row counts")
        if np.any(hi < lo):
            raise ValueError("mixed constraint has upper < lower")
        for name, v in (("L_x", L_x), ("L_u", L_u), ("lower", lo), ("upper", hi)):
            object.__setattr__(self, name, v)

    @property
    def rows(self) -> int:
        return self.lower.size


@dataclass(frozen=True)
class ConstraintSpec:
    """Objective sets per area, exogenous-signal boxes and command budgets."""

    partition: AreaPartition
    X: tuple[Box, ...]
    U: tuple[Box, ...]
    V: Box
    D_d: Box
    D_bf: Box
    D_bs1: Box
    D_bs2: Box
    U_s1: tuple[Box, ...]
    U_s2: tuple[Box, ...]
    mixed: tuple[tuple[MixedConstraint, ...], ...] = ()

    def __post_init__(self):
        p = self.partition
        for name in ("X", "U", "U_s1", "U_s2"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        mixed = tuple(tuple(m) for m in self.mixed) or tuple(() for _ in range(p.N))
        object.__setattr__(self, "mixed", mixed)
        for i in range(p.N):
            if self.X[i].dim != p.x_sizes[i] or self.U_s1[i].dim != p.x_sizes[i]:
                raise ValueError(f"area {i}: X_i and U_s1i must have dimension {p.x_sizes[i]}")
            if self.U[i].dim != p.u_sizes[i] or self.U_s2[i].dim != p.u_sizes[i]:
                raise ValueError(f"area {i}: U_i and U_s2i must have dimension {p.u_sizes[i]}")
            for m in self.mixed[i]:
                if m.L_x.shape[1] != p.x_sizes[i] or m.L_u.shape[1] != p.u_sizes[i]:
                    raise ValueError(f"area {i}: mixed constraint widths do not match the area")
        if self.D_bf.dim != p.n_u or self.D_bs2.dim != p.n_u or self.D_bs1.dim != p.n_x:
            raise ValueError("communication-noise boxes have the wrong dimension")

    @property
    def N(self) -> int:
        return self.partition.N

    def V_x(self) -> Box:
        n = self.partition.n_x
        return Box(self.V.center[:n], self.V.halfwidths[:n])

    def V_w(self) -> Box:
        n = self.partition.n_x
        return Box(self.V.center[n:], self.V.halfwidths[n:])

    def D_s(self) -> Box:
        """Box of d_s = (zeta + beta_s1, beta_s2, beta_f, d)."""
        return S.product_all([S.minkowski_sum(self.V_x(), self.D_bs1), self.D_bs2, self.D_bf, self.D_d])

    def mixed_rows(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Stacked (L_x, L_u, lower, upper) of area i's mixed rows."""
        p = self.partition
        ms = self.mixed[i]
        if not ms:
            return np.zeros((0, p.x_sizes[i])), np.zeros((0, p.u_sizes[i])), np.zeros(0), np.zeros(0)
        return (
            np.vstack([m.L_x for m in ms]),
            np.vstack([m.L_u for m in ms]),
            np.concatenate([m.lower for m in ms]),
            np.concatenate([m.upper for m in ms]),
        )


@dataclass(frozen=True)
class StageCost:
    """g = o' Q o + u_s1' R1 u_s1 + u_s2' R2 u_s2 with o = C_o xi."""

    Q: np.ndarray
    R1: np.ndarray
    R2: np.ndarray


def _slice_box(b: Box, idx: Sequence[int]) -> Box:
    idx = list(idx)
    return Box(b.center[idx], b.halfwidths[idx])


def command_budget_tighten(spec: ConstraintSpec, i: int) -> Box:
    """U_fi = U_i (-) (U_s2i (+) D_bs2 slice), exact on boxes."""
    sub = S.minkowski_sum(spec.U_s2[i], _slice_box(spec.D_bs2, spec.partition.u_index(i)))
    lo = spec.U[i].lower + sub.halfwidths - sub.center
    hi = spec.U[i].upper - sub.halfwidths - sub.center
    if np.any(hi < lo):
        raise DesignInfeasible(i, "command budget tightening", "U_fi is empty", remedy=REMEDY_BUDGET)
    return Box.from_bounds(lo, hi)


def mixed_tighten(spec: ConstraintSpec, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Mixed rows moved from u_i onto u_fi: bounds (-) L_u (U_s2i (+) D_bs2 slice)."""
    L_x, L_u, lo, hi = spec.mixed_rows(i)
    if lo.size == 0:
        return L_x, L_u, lo, hi
    sub = S.minkowski_sum(spec.U_s2[i], _slice_box(spec.D_bs2, spec.partition.u_index(i)))
    up = np.array([sub.support(r) for r in L_u])
    dn = np.array([sub.support(-r) for r in L_u])
    lo_t, hi_t = lo + dn, hi - up
    if np.any(hi_t < lo_t):
        raise DesignInfeasible(i, "mixed-constraint tightening", "empty row interval", remedy=REMEDY_BUDGET)
    return L_x, L_u, lo_t, hi_t


@dataclass(frozen=True)
class NrfStateSets:
    """Interval bounds for controller-state rows, plus the fed-signal boxes."""

    U_f: tuple[Box, ...]
    D_w: tuple[Box, ...]
    W_rows: tuple[tuple[Box, ...], ...]  # per command row l: W_l1..W_ln (1-D boxes)

    def W_area(self, layer: NrfLayer, i: int) -> Box:
        """Product of the row intervals for area i, in w_i order."""
        parts = [w for l in layer.partition.u_index(i) for w in self.W_rows[l]]
        return S.product_all(parts)

    def W_all(self, layer: NrfLayer) -> Box:
        return S.product_all([w for rows in self.W_rows for w in rows])


def fed_box(spec: ConstraintSpec, U_f: Box, p: int) -> Box:
    """D_wp: bound on area p's piece of (u_f + beta_f, x + zeta + u_s1 + beta_s1)."""
    part = spec.partition
    u_part = S.minkowski_sum(U_f, _slice_box(spec.D_bf, part.u_index(p)))
    xi = part.x_index(p)
    x_part = S.minkowski_sum(
        S.minkowski_sum(spec.X[p], _slice_box(spec.V_x(), xi)),
        S.minkowski_sum(spec.U_s1[p], _slice_box(spec.D_bs1, xi)),
    )
    return S.product(u_part, x_part)


def nrf_state_sets(layer: NrfLayer, spec: ConstraintSpec) -> NrfStateSets:
    """W_l1 from U_fi, then the backward recursion for rows n_r .. 2."""
    part = spec.partition
    U_f = tuple(command_budget_tighten(spec, i) for i in range(part.N))
    D_w = tuple(fed_box(spec, U_f[p], p) for p in range(part.N))
    W_rows = []
    for l, blk in enumerate(layer.blocks):
        i = part.area_of_u(l)
        k = l - part.u_offset(i)
        W1 = Box([U_f[i].center[k]], [U_f[i].halfwidths[k]])
        n = blk.order
        rows: list[Box | None] = [None] * n
        rows[0] = W1
        for j in range(n - 1, 0, -1):
            acc = S.linear_image(np.array([[-blk.a[j]]]), W1)
            if j + 1 < n:
                acc = S.minkowski_sum(acc, rows[j + 1])
            for p in sorted(part.neighbors[i]):
                cols = part.u_index(p) + [part.n_u + c for c in part.x_index(p)]
                acc = S.minkowski_sum(acc, S.linear_image(blk.K[j : j + 1, cols], D_w[p]))
            rows[j] = Box([acc.center[0]], [float(np.sum(np.abs(acc.generators)))])
        W_rows.append(tuple(rows))
    return NrfStateSets(U_f, D_w, tuple(W_rows))


def _out_matrix(cl: ClosedLoop, i: int) -> np.ndarray:
    return cl.C_cl[cl.out_index(i)]


def disturbance_propagation(cl: ClosedLoop, spec: ConstraintSpec, i: int, T: int) -> list[S.Zonotope]:
    """Psi_t for t = 1..T: reachable image of the persistent d_s box on o_i."""
    C = _out_matrix(cl, i)
    Ds = spec.D_s()
    out = []
    c = np.zeros(C.shape[0])
    gens = []
    for t in range(1, T + 1):
        M = C @ cl.power(t - 1) @ cl.B_ds
        c = c + M @ Ds.center
        gens.append(M @ Ds.generators)
        out.append(S.Zonotope(c.copy(), np.hstack(gens)))
    return out


def ic_set(cl: ClosedLoop, spec: ConstraintSpec, nrf_sets: NrfStateSets, j: int) -> HPolytope:
    """Admissible (x_j, w_j): X_j, the W row intervals and the mixed rows."""
    layer = cl.layer
    X = spec.X[j]
    W = nrf_sets.W_area(layer, j)
    P = S.product(X, W).to_hpolytope()
    L_x, L_u, lo, hi = mixed_tighten(spec, j)
    if lo.size:
        _, _, C_wj = layer.area_realisation(j)
        G = np.hstack([L_x, L_u @ C_wj])
        P = HPolytope(np.vstack([P.H, G, -G]), np.concatenate([P.h, hi, -lo]))
    return P


def perturbed_ic_set(cl: ClosedLoop, spec: ConstraintSpec, nrf_sets: NrfStateSets, j: int) -> LinearImageSum:
    """Reported (x_cj, w_cj): admissible set plus the matching slice of V."""
    P = ic_set(cl, spec, nrf_sets, j)
    idx = cl.z_index(j)
    noise = _slice_box(spec.V, idx)
    n = len(idx)
    return LinearImageSum([(np.eye(n), P), (np.eye(n), noise)], n)


def noise_sets(cl: ClosedLoop, spec: ConstraintSpec, i: int, T: int) -> list[S.Zonotope]:
    """H_t for t = 1..T: image of V on o_i through the IC response (all areas)."""
    C = _out_matrix(cl, i)
    return [S.linear_image(C @ cl.power(t), spec.V) for t in range(1, T + 1)]


def theta_sets(cl: ClosedLoop, ic_sets: Sequence[LinearImageSum], i: int, T: int) -> list[LinearImageSum]:
    """Theta_t: IC response of the neighbourhood's reported initial conditions."""
    out = []
    for t in range(1, T + 1):
        M = ic_response_map(cl, t)[cl.out_index(i)]
        terms = []
        for j in sorted(cl.partition.neighbors[i]):
            Mj = M[:, cl.z_index(j)]
            terms.extend((Mj @ Mt, St) for Mt, St in ic_sets[j].terms)
        out.append(LinearImageSum(terms, M.shape[0]))
    return out


def cross_coupling_sets(
    cl: ClosedLoop, spec: ConstraintSpec, ic_sets: Sequence[LinearImageSum], i: int, T: int
) -> list[LinearImageSum]:
    """Delta_t: other areas' commands over window 1..t and non-neighbour ICs."""
    part = cl.partition
    C = _out_matrix(cl, i)
    others = [j for j in range(part.N) if j != i]
    far = [j for j in range(part.N) if j not in part.neighbors[i]]
    out = []
    cmd_terms: list = []
    for t in range(1, T + 1):
        Ct = C @ cl.power(t - 1)
        for j in others:
            cmd_terms.append((Ct @ cl.B_us1[:, part.x_index(j)], spec.U_s1[j]))
            cmd_terms.append((Ct @ cl.B_us2[:, part.u_index(j)], spec.U_s2[j]))
        M = C @ cl.power(t)
        ic_terms = []
        for j in far:
            Mj = M[:, cl.z_index(j)]
            ic_terms.extend((Mj @ Mt, St) for Mt, St in ic_sets[j].terms)
        terms = [(m, s) for m, s in cmd_terms + ic_terms if np.any(m)]
        out.append(LinearImageSum(terms, C.shape[0]))
    return out


@dataclass(frozen=True)
class OutputConstraints:
    """Untightened constraint rows over o_i = (x_i, u_fi), with row tags."""

    H: np.ndarray
    h: np.ndarray
    tags: tuple[str, ...]  # "x", "u<k>" or "mixed"


def output_constraints(spec: ConstraintSpec, nrf_sets: NrfStateSets, i: int) -> OutputConstraints:
    part = spec.partition
    n_x, n_u = part.x_sizes[i], part.u_sizes[i]
    n = n_x + n_u
    rows, rhs, tags = [], [], []
    X = spec.X[i]
    for k in range(n_x):
        e = np.zeros(n)
        e[k] = 1.0
        rows += [e, -e]
        rhs += [X.upper[k], -X.lower[k]]
        tags += ["x", "x"]
    for k, l in enumerate(part.u_index(i)):
        e = np.zeros(n)
        e[n_x + k] = 1.0
        W1 = nrf_sets.W_rows[l][0]
        rows += [e, -e]
        rhs += [W1.upper[0], -W1.lower[0]]
        tags += [f"u{k}", f"u{k}"]
    L_x, L_u, lo, hi = mixed_tighten(spec, i)
    for r in range(lo.size):
        g = np.concatenate([L_x[r], L_u[r]])
        rows += [g, -g]
        rhs += [hi[r], -lo[r]]
        tags += ["mixed", "mixed"]
    return OutputConstraints(np.array(rows), np.array(rhs), tuple(tags))


def tighten_rows(base: OutputConstraints, H_t, Psi_t, Delta_t) -> np.ndarray:
    """h - supp(-H_t) - supp(Psi_t) - supp(Delta_t), row by row."""
    h = base.h.copy()
    for r, row in enumerate(base.H):
        h[r] -= S.support(H_t, -row) + S.support(Psi_t, row) + S.support(Delta_t, row)
    return h


@dataclass
class AreaDesign:
    """Everything the runtime needs for one area, plus certificate data."""

    area: int
    T: int
    T_bar: int
    rho: int
    certified: bool
    H: np.ndarray  # constraint rows over o_i (shared by all t)
    h: list[np.ndarray]  # tightened right-hand sides for t = 1..len(h)
    tags: tuple[str, ...]
    U_f: Box
    W: Box
    cost: StageCost
    timings: dict = field(default_factory=dict)
    witness: dict | None = None

    def split(self, t: int) -> dict:
        """(H, h) pairs grouped as x-only rows, per-command rows and mixed rows."""
        h = self.h[t - 1]
        out: dict = {}
        for key in dict.fromkeys(self.tags):
            sel = [r for r, g in enumerate(self.tags) if g == key]
            n_x = self.H.shape[1] - self.U_f.dim
            if key == "x":
                out["x"] = (self.H[sel][:, :n_x], h[sel])
            elif key.startswith("u"):
                k = int(key[1:])
                out[key] = (self.H[sel][:, n_x + k : n_x + k + 1], h[sel])
            else:
                out[key] = (self.H[sel], h[sel])
        return out

    def P_set(self, t: int) -> HPolytope:
        return HPolytope(self.H, self.h[t - 1])


@dataclass
class DesignArtifacts:
    spec: ConstraintSpec
    nrf_sets: NrfStateSets
    areas: list[AreaDesign]
    total_seconds: float = 0.0
    fingerprint: str = ""

    @property
    def certified(self) -> bool:
        return all(a.certified for a in self.areas)


def xi_constraint(area: AreaDesign, model: AreaModel, t: int, theta_x, theta_u) -> HPolytope:
    """{phi : H C_o phi <= h_t - H theta}."""
    theta = np.concatenate([np.asarray(theta_x, dtype=float).reshape(-1), np.asarray(theta_u, dtype=float).reshape(-1)])
    return HPolytope(area.H @ model.C_o, area.h[t - 1] - area.H @ theta)


@dataclass
class CertificateResult:
    area: int
    rho: int
    checked: int
    failure: dict | None


def certificate_terms(model: AreaModel, spec: ConstraintSpec, t: int) -> list:
    """Command-reach images -C_o A^(s-1) B over s = 1..t."""
    terms = []
    Ak = np.eye(model.n_s)
    for _ in range(t):
        terms.append((-model.C_o @ Ak @ model.B_s1, spec.U_s1[model.area]))
        terms.append((-model.C_o @ Ak @ model.B_s2, spec.U_s2[model.area]))
        Ak = model.A @ Ak
    return terms


def feasibility_certificate(
    model: AreaModel,
    spec: ConstraintSpec,
    thetas: Sequence[LinearImageSum],
    P_sets: Sequence[HPolytope],
    rho_max: int = 5,
) -> CertificateResult:
    """Largest rho <= rho_max such that every vertex of Theta_t lies in
    (-C_o reach_t) (+) P_t for all t <= rho. Stops at the first failing t."""
    rho = 0
    checked = 0
    for t in range(1, rho_max + 1):
        P = P_sets[t - 1]
        if P.is_empty():
            return CertificateResult(model.area, rho, checked, {"t": t, "reason": "tightened set is empty"})
        terms = certificate_terms(model, spec, t) + [(np.eye(P.dim), P)]
        for v in thetas[t - 1].vertices():
            checked += 1
            if not S.member_of_minkowski_sum(v, terms):
                return CertificateResult(
                    model.area, rho, checked, {"t": t, "reason": "vertex not steerable", "vertex": v.tolist()}
                )
        rho = t
    return CertificateResult(model.area, rho, checked, None)


@dataclass(frozen=True)
class DesignOptions:
    rho_max: int = 5
    T: int | None = None  # horizon override
    T_bar: int = 0
    allow_uncertified: bool = False
    workers: int = 1
    cost: StageCost | Sequence[StageCost] | None = None


def _default_cost(part: AreaPartition, i: int) -> StageCost:
    n_o = part.x_sizes[i] + part.u_sizes[i]
    return StageCost(np.zeros((n_o, n_o)), np.eye(part.x_sizes[i]), np.eye(part.u_sizes[i]))


def fingerprint(cl: ClosedLoop) -> str:
    import hashlib

    h = hashlib.sha256()
    for m in (cl.A, cl.B_ds, cl.B_us1, cl.B_us2, cl.C_cl):
        h.update(np.ascontiguousarray(m).tobytes())
    return h.hexdigest()[:16]


def run_design(spec: ConstraintSpec, layer: NrfLayer, plant: StateSpace, options: DesignOptions = DesignOptions()) -> DesignArtifacts:
    """Budgets, NRF sets, propagation sets, tightened rows, certificate."""
    t_start = time.perf_counter()
    cl = assemble_closed_loop(plant, layer)
    part = cl.partition
    nrf_sets = nrf_state_sets(layer, spec)
    for l, rows in enumerate(nrf_sets.W_rows):
        if any(w.halfwidths[0] < 0 for w in rows):
            raise DesignInfeasible(part.area_of_u(l), "controller-state sets", "negative width", remedy=REMEDY_FIRST_LAYER)
    ics = [perturbed_ic_set(cl, spec, nrf_sets, j) for j in range(part.N)]
    T_sets = max(options.rho_max, options.T or 1)

    def one_area(i: int) -> AreaDesign:
        t0 = time.perf_counter()
        model = extract_area_model(cl, i)
        base = output_constraints(spec, nrf_sets, i)
        Hs = noise_sets(cl, spec, i, T_sets)
        Psis = disturbance_propagation(cl, spec, i, T_sets)
        Deltas = cross_coupling_sets(cl, spec, ics, i, T_sets)
        Thetas = theta_sets(cl, ics, i, T_sets)
        hs = [tighten_rows(base, Hs[t], Psis[t], Deltas[t]) for t in range(T_sets)]
        t_sets = time.perf_counter() - t0
        cert = feasibility_certificate(model, spec, Thetas, [HPolytope(base.H, h) for h in hs], options.rho_max)
        t_cert = time.perf_counter() - t0 - t_sets
        certified = cert.rho >= 1
        T = options.T if options.T is not None else cert.rho
        if options.T is not None and T > cert.rho and not options.allow_uncertified:
            raise DesignInfeasible(
                i, "feasibility certificate", f"horizon {T} exceeds certified rho {cert.rho}", remedy=REMEDY_BUDGET
            )
        if not certified and not options.allow_uncertified:
            raise DesignInfeasible(
                i, "feasibility certificate", str(cert.failure), t=(cert.failure or {}).get("t"), remedy=REMEDY_BUDGET
            )
        if options.cost is None:
            cost = _default_cost(part, i)
        elif isinstance(options.cost, StageCost):
            cost = options.cost
        else:
            cost = options.cost[i]
        for t in range(max(T, 1)):
            P = HPolytope(base.H, hs[t])
            if P.is_empty():
                raise DesignInfeasible(i, "inner approximation", "tightened set is empty", t=t + 1, remedy=REMEDY_FIRST_LAYER)
        return AreaDesign(
            area=i,
            T=max(T, 1) if options.allow_uncertified else T,
            T_bar=options.T_bar,
            rho=cert.rho,
            certified=certified,
            H=base.H,
            h=hs,
            tags=base.tags,
            U_f=nrf_sets.U_f[i],
            W=nrf_sets.W_area(layer, i),
            cost=cost,
            timings={"sets_s": t_sets, "certificate_s": t_cert, "vertices_checked": cert.checked},
            witness=cert.failure,
        )

    if options.workers > 1:
        with ThreadPoolExecutor(max_workers=options.workers) as ex:
            areas = list(ex.map(one_area, range(part.N)))
    else:
        areas = [one_area(i) for i in range(part.N)]
    return DesignArtifacts(spec, nrf_sets, areas, time.perf_counter() - t_start, fingerprint(cl))


def design_report(art: DesignArtifacts) -> dict:
    rows = []
    for a in art.areas:
        rows.append(
            {
                "area": a.area,
                "rho": a.rho,
                "certified": a.certified,
                "T": a.T,
                "T_bar": a.T_bar,
                "seconds": round(a.timings.get("sets_s", 0.0) + a.timings.get("certificate_s", 0.0), 6),
                "vertices_checked": a.timings.get("vertices_checked", 0),
                "failure": a.witness,
            }
        )
    return {
        "version": ARTIFACT_VERSION,
        "certified": art.certified,
        "total_seconds": round(art.total_seconds, 6),
        "areas": rows,
    }


def artifacts_to_record(art: DesignArtifacts) -> dict:
    return {
        "version": ARTIFACT_VERSION,
        "fingerprint": art.fingerprint,
        "total_seconds": art.total_seconds,
        "areas": [
            {
                "area": a.area,
                "T": a.T,
                "T_bar": a.T_bar,
                "rho": a.rho,
                "certified": a.certified,
                "H": a.H.tolist(),
                "h": [h.tolist() for h in a.h],
                "tags": list(a.tags),
                "U_f": S.to_record(a.U_f),
                "W": S.to_record(a.W),
                "cost": {"Q": np.asarray(a.cost.Q).tolist(), "R1": np.asarray(a.cost.R1).tolist(),
                         "R2": np.asarray(a.cost.R2).tolist()},
                "witness": a.witness,
            }
            for a in art.areas
        ],
    }


def artifacts_from_record(rec: dict, spec: ConstraintSpec, layer: NrfLayer) -> DesignArtifacts:
    if rec.get("version") != ARTIFACT_VERSION:
        raise ValueError(f"unsupported artifact version {rec.get('version')!r}")
    areas = []
    for a in rec["areas"]:
        areas.append(
            AreaDesign(
                area=int(a["area"]),
                T=int(a["T"]),
                T_bar=int(a["T_bar"]),
                rho=int(a["rho"]),
                certified=bool(a["certified"]),
                H=np.asarray(a["H"], dtype=float),
                h=[np.asarray(h, dtype=float) for h in a["h"]],
                tags=tuple(a["tags"]),
                U_f=S.from_record(a["U_f"]),
                W=S.from_record(a["W"]),
                cost=StageCost(*(np.asarray(a["cost"][k], dtype=float) for k in ("Q", "R1", "R2"))),
                witness=a.get("witness"),
            )
        )
    return DesignArtifacts(spec, nrf_state_sets(layer, spec), areas, float(rec.get("total_seconds", 0.0)),
                           str(rec.get("fingerprint", "")))
