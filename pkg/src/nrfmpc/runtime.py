"""Online execution of the second layer and closed-loop simulation.

One simulation step runs two synchronous exchange rounds:

1. every area reports its (noisy) initial condition (x_j + nu_x, w_j + nu_w);
   each area forms theta for t = 1..T from its neighbourhood's reports,
   solves its condensed QP and keeps the first commands;
2. every area broadcasts u_s1i + beta_s1i, corrupted once at the source, and
   the first layer reads fed = (u_f + beta_f, x + zeta + u_s1 + beta_s1).

The plant then receives u = u_f + u_s2 + beta_s2.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .design import AreaDesign, ConstraintSpec, DesignArtifacts
from .linsys import StateSpace
from .nrf import AreaModel, ClosedLoop, NrfLayer, assemble_closed_loop, extract_area_model, theta_signals
from .optim import OPTIMAL, QpProblem, solve_qp
from .sets import Box

EPS_REG = 1e-12
QUIESCENCE_MARGIN = 0.5

IC_REPORT = "ic"
COMMAND_REPORT = "command"

# per-signal stream ids for the noise generator
_STREAMS = ("nu", "zeta", "beta_f", "beta_s1", "beta_s2")


class FeasibilityBreach(RuntimeError):
    """An area's QP had no feasible point."""

    def __init__(self, area: int, k: int, problem: QpProblem):
        super().__init__(f"area {area} QP infeasible at step {k}")
        self.area = area
        self.k = k
        self.problem = problem


class InitialConditionError(ValueError):
    """Initial state outside X or controller state outside the W sets."""

    def __init__(self, area: int, what: str, index: int, value: float):
        super().__init__(f"area {area}: initial {what}[{index}] = {value} is not admissible")
        self.area = area
        self.what = what
        self.index = index
        self.value = value


class BusError(RuntimeError):
    """A synchronous round is missing a sender."""


@dataclass(frozen=True)
class AreaMessage:
    sender: int
    k: int
    kind: str  # IC_REPORT or COMMAND_REPORT
    payload: tuple[np.ndarray, ...]


def bus_round(messages: Sequence[AreaMessage], neighbors, noise: Mapping[int, Sequence[np.ndarray]] | None = None):
    """Deliver each message to the areas that list its sender as a neighbour.

    `noise[sender]` is added to the payload once, before delivery, so every
    receiver sees the same corrupted value.
    """
    N = len(neighbors)
    by_sender = {m.sender: m for m in messages}
    if len(by_sender) != len(messages):
        raise BusError("more than one message from the same sender")
    missing = [j for j in range(N) if j not in by_sender]
    if missing:
        raise BusError(f"round aborted, no message from areas {missing}")
    sent = {}
    for j, m in by_sender.items():
        if noise is not None and j in noise:
            sent[j] = tuple(np.asarray(p, dtype=float) + np.asarray(n, dtype=float) for p, n in zip(m.payload, noise[j]))
        else:
            sent[j] = tuple(np.asarray(p, dtype=float) for p in m.payload)
    return {i: {j: sent[j] for j in sorted(neighbors[i])} for i in range(N)}


class NoiseStreams:
    """Uniform samples on each box, one counter-based stream per signal and area."""

    def __init__(self, seed: int, spec: ConstraintSpec, layer: NrfLayer):
        self.seed = int(seed)
        self.spec = spec
        self.layer = layer
        root = np.random.SeedSequence(self.seed)
        N = spec.N
        self._gens = {
            (s, i): np.random.Generator(np.random.Philox(np.random.SeedSequence(root.entropy, spawn_key=(si, i))))
            for si, s in enumerate(_STREAMS)
            for i in range(N)
        }

    @staticmethod
    def _uniform(gen: np.random.Generator, box: Box) -> np.ndarray:
        return box.center + box.halfwidths * gen.uniform(-1.0, 1.0, box.dim)

    def sample(self) -> dict:
        """One step of noise, assembled into network-wide vectors."""
        spec, layer = self.spec, self.layer
        part = spec.partition
        n_x, n_u, n_w = part.n_x, part.n_u, layer.n_w
        out = {"nu_x": np.zeros(n_x), "nu_w": np.zeros(n_w), "zeta": np.zeros(n_x),
               "beta_f": np.zeros(n_u), "beta_s1": np.zeros(n_x), "beta_s2": np.zeros(n_u)}
        Vx, Vw = spec.V_x(), spec.V_w()
        for i in range(part.N):
            xi, ui, wi = part.x_index(i), part.u_index(i), layer.w_index(i)
            nu = self._uniform(self._gens["nu", i], Box(np.concatenate([Vx.center[xi], Vw.center[wi]]),
                                                         np.concatenate([Vx.halfwidths[xi], Vw.halfwidths[wi]])))
            out["nu_x"][xi] = nu[: len(xi)]
            out["nu_w"][wi] = nu[len(xi) :]
            out["zeta"][xi] = self._uniform(self._gens["zeta", i], Box(Vx.center[xi], Vx.halfwidths[xi]))
            out["beta_f"][ui] = self._uniform(self._gens["beta_f", i], Box(spec.D_bf.center[ui], spec.D_bf.halfwidths[ui]))
            out["beta_s1"][xi] = self._uniform(self._gens["beta_s1", i], Box(spec.D_bs1.center[xi], spec.D_bs1.halfwidths[xi]))
            out["beta_s2"][ui] = self._uniform(self._gens["beta_s2", i], Box(spec.D_bs2.center[ui], spec.D_bs2.halfwidths[ui]))
        return out


@dataclass
class CondensedQp:
    """Static pieces of area i's QP; only the right-hand side changes per step."""

    P: np.ndarray
    G: np.ndarray  # constraint rows over the decision vector, t = 1..T stacked
    A_bud: np.ndarray
    b_bud: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    n_s1: int  # length of the stacked u_s1 block
    n1: int
    n2: int


def condense(model: AreaModel, area: AreaDesign, spec: ConstraintSpec) -> CondensedQp:
    """Substitute xi_t = sum_s A^(t-1-s) (B_s1 u_s1[s] + B_s2 u_s2[s]) with xi_0 = 0."""
    T, L = area.T, area.T + area.T_bar
    n1, n2 = model.B_s1.shape[1], model.B_s2.shape[1]
    nv = T * n1 + L * n2
    Phi = np.zeros((model.n_s, nv))
    C_o = model.C_o
    Q, R1, R2 = (np.asarray(m, dtype=float) for m in (area.cost.Q, area.cost.R1, area.cost.R2))
    H_blocks = []
    P = np.zeros((nv, nv))
    for t in range(1, L + 1):
        s = t - 1
        Phi = model.A @ Phi
        if s < T:
            Phi[:, s * n1 : (s + 1) * n1] += model.B_s1
        c = T * n1 + s * n2
        Phi[:, c : c + n2] += model.B_s2
        O = C_o @ Phi
        P += O.T @ Q @ O
        if t <= T:
            H_blocks.append(area.H @ O)
    for s in range(T):
        P[s * n1 : (s + 1) * n1, s * n1 : (s + 1) * n1] += R1
    for s in range(L):
        c = T * n1 + s * n2
        P[c : c + n2, c : c + n2] += R2
    P = 2.0 * P + EPS_REG * np.eye(nv)
    P = 0.5 * (P + P.T)

    rows, rhs, eq_rows, eq_rhs = [], [], [], []
    U1, U2 = spec.U_s1[area.area], spec.U_s2[area.area]
    blocks = [(s * n1, U1) for s in range(T)] + [(T * n1 + s * n2, U2) for s in range(L)]
    for off, box in blocks:
        for k in range(box.dim):
            e = np.zeros(nv)
            e[off + k] = 1.0
            if box.halfwidths[k] == 0.0:
                eq_rows.append(e)
                eq_rhs.append(box.center[k])
            else:
                rows += [e, -e]
                rhs += [box.upper[k], -box.lower[k]]
    return CondensedQp(
        P=P,
        G=np.vstack(H_blocks),
        A_bud=np.array(rows).reshape(-1, nv),
        b_bud=np.array(rhs),
        A_eq=np.array(eq_rows).reshape(-1, nv),
        b_eq=np.array(eq_rhs),
        n_s1=T * n1,
        n1=n1,
        n2=n2,
    )


@dataclass
class SubcontrollerState:
    area: int
    design: AreaDesign
    model: AreaModel
    qp: CondensedQp
    warm: tuple[int, ...] = ()
    last_status: str = ""
    last_micros: float = 0.0
    last_iterations: int = 0


def make_subcontrollers(cl: ClosedLoop, art: DesignArtifacts) -> list[SubcontrollerState]:
    out = []
    for a in art.areas:
        model = extract_area_model(cl, a.area)
        out.append(SubcontrollerState(a.area, a, model, condense(model, a, art.spec)))
    return out


def xi_rhs(state: SubcontrollerState, thetas: Sequence[np.ndarray]) -> np.ndarray:
    """h_t - H theta_t stacked over t = 1..T."""
    d = state.design
    return np.concatenate([d.h[t] - d.H @ thetas[t] for t in range(d.T)])


def subcontroller_step(
    state: SubcontrollerState, cl: ClosedLoop, reports: Mapping[int, tuple], k: int
) -> tuple[np.ndarray, np.ndarray, AreaMessage, dict]:
    """Theta from the reports, condensed QP, first commands and the outgoing broadcast."""
    d, qp = state.design, state.qp
    thetas = [np.concatenate(theta_signals(cl, state.area, reports, t)) for t in range(1, d.T + 1)]
    b_xi = xi_rhs(state, thetas)
    prob = QpProblem(
        qp.P,
        np.zeros(qp.P.shape[0]),
        np.vstack([qp.G, qp.A_bud]),
        np.concatenate([b_xi, qp.b_bud]),
        qp.A_eq if qp.A_eq.shape[0] else None,
        qp.b_eq if qp.A_eq.shape[0] else None,
    )
    t0 = time.perf_counter()
    sol = solve_qp(prob, warm_active=state.warm or None)
    state.last_micros = (time.perf_counter() - t0) * 1e6
    state.last_status = sol.status
    state.last_iterations = sol.iterations
    info = {"status": sol.status, "micros": state.last_micros, "slack": float(np.min(b_xi[: d.H.shape[0]]))}
    if sol.status != OPTIMAL:
        raise FeasibilityBreach(state.area, k, prob)
    state.warm = sol.active_set
    u_s1 = sol.x[: qp.n1].copy()
    u_s2 = sol.x[qp.n_s1 : qp.n_s1 + qp.n2].copy()
    return u_s1, u_s2, AreaMessage(state.area, k, COMMAND_REPORT, (u_s1,)), info


@dataclass
class SimulationTrace:
    """Per-step signals; row k holds the state at k and everything applied at k."""

    seed: int
    N: int
    x: np.ndarray
    w: np.ndarray
    u: np.ndarray
    u_f: np.ndarray
    u_s1: np.ndarray
    u_s2: np.ndarray
    d: np.ndarray
    noise: dict
    qp_status: list
    qp_micros: np.ndarray
    slack: np.ndarray
    x_final: np.ndarray
    w_final: np.ndarray
    breach: dict | None = None
    eps_reg: float = EPS_REG

    @property
    def steps(self) -> int:
        return self.x.shape[0]

    def states(self) -> np.ndarray:
        """x at k = 0..steps (the last row is the state after the final step)."""
        return np.vstack([self.x, self.x_final])

    def columns(self) -> list[tuple[str, np.ndarray]]:
        cols = [("k", np.arange(self.steps))]

        def add(name, arr):
            for c in range(arr.shape[1]):
                cols.append((f"{name}{c}", arr[:, c]))

        add("x", self.x)
        add("w", self.w)
        add("u", self.u)
        add("u_f", self.u_f)
        add("u_s1_", self.u_s1)
        add("u_s2_", self.u_s2)
        for key in ("zeta", "beta_f", "beta_s1", "beta_s2", "nu_x", "nu_w"):
            add(key + "_", self.noise[key])
        add("d", self.d)
        add("slack", self.slack)
        return cols

    def to_csv(self, path) -> None:
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([c for c, _ in cols] + [f"qp_status{i}" for i in range(self.N)] +
                        [f"qp_micros{i}" for i in range(self.N)])
            for k in range(self.steps):
                row = [str(k)] + [format(float(v[k]), ".17g") for _, v in cols[1:]]
                row += list(self.qp_status[k]) + [format(float(m), ".17g") for m in self.qp_micros[k]]
                wr.writerow(row)


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Raw columns of a trace file keyed by header name."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = list(rd)
    out: dict[str, np.ndarray] = {}
    for c, name in enumerate(header):
        vals = [r[c] for r in rows]
        if name.startswith("qp_status"):
            out[name] = np.array(vals, dtype=object)
        else:
            out[name] = np.array(vals, dtype=float)
    return out


def check_initial_condition(art: DesignArtifacts, layer: NrfLayer, x0, w0) -> None:
    """x_c in X and every controller-state row inside its W interval."""
    spec = art.spec
    part = spec.partition
    for i in range(part.N):
        xi = np.asarray(x0)[part.x_index(i)]
        X = spec.X[i]
        for c in range(xi.size):
            if not (X.lower[c] - 1e-12 <= xi[c] <= X.upper[c] + 1e-12):
                raise InitialConditionError(i, "x", part.x_index(i)[c], float(xi[c]))
        wi = np.asarray(w0)[layer.w_index(i)]
        W = art.areas[i].W
        for c in range(wi.size):
            if not (W.lower[c] - 1e-12 <= wi[c] <= W.upper[c] + 1e-12):
                raise InitialConditionError(i, "w", layer.w_index(i)[c], float(wi[c]))


def simulate(
    plant: StateSpace,
    layer: NrfLayer,
    art: DesignArtifacts,
    scenario: Callable[[int], np.ndarray],
    seed: int,
    horizon: int,
    x0=None,
    w0=None,
) -> SimulationTrace:
    """Distributed closed-loop run; stops early and flags the trace on a breach."""
    if not art.certified and not all(a.T >= 1 for a in art.areas):
        raise ValueError("design artifacts carry no usable horizon")
    cl = assemble_closed_loop(plant, layer)
    part = layer.partition
    N, n_x, n_u, n_w = part.N, part.n_x, part.n_u, layer.n_w
    x = np.zeros(n_x) if x0 is None else np.asarray(x0, dtype=float).copy()
    w = layer.w_init.copy() if w0 is None else np.asarray(w0, dtype=float).copy()
    check_initial_condition(art, layer, x, w)
    subs = make_subcontrollers(cl, art)
    streams = NoiseStreams(seed, art.spec, layer)
    A_w, C_w = layer.A_w, layer.C_w

    rec = {k: [] for k in ("x", "w", "u", "u_f", "u_s1", "u_s2", "d", "slack", "micros", "status")}
    noise_rec = {k: [] for k in ("zeta", "beta_f", "beta_s1", "beta_s2", "nu_x", "nu_w")}
    breach = None
    for k in range(horizon):
        nz = streams.sample()
        dk = np.asarray(scenario(k), dtype=float).reshape(-1)
        # round 1: initial-condition reports, noise added at the source
        msgs = [AreaMessage(j, k, IC_REPORT, (x[part.x_index(j)], w[layer.w_index(j)])) for j in range(N)]
        ic_noise = {j: (nz["nu_x"][part.x_index(j)], nz["nu_w"][layer.w_index(j)]) for j in range(N)}
        inbox = bus_round(msgs, part.neighbors, ic_noise)
        u_s1 = np.zeros(n_x)
        u_s2 = np.zeros(n_u)
        slack = np.zeros(N)
        micros = np.zeros(N)
        status = []
        out_msgs = []
        try:
            for s in subs:
                a1, a2, msg, info = subcontroller_step(s, cl, inbox[s.area], k)
                u_s1[part.x_index(s.area)] = a1
                u_s2[part.u_index(s.area)] = a2
                slack[s.area] = info["slack"]
                micros[s.area] = info["micros"]
                status.append(info["status"])
                out_msgs.append(msg)
        except FeasibilityBreach as exc:
            breach = {"k": k, "area": exc.area}
            break
        # round 2: command broadcasts, beta_s1 added at the source
        cmd_noise = {j: (nz["beta_s1"][part.x_index(j)],) for j in range(N)}
        delivered = bus_round(out_msgs, part.neighbors, cmd_noise)
        u_f = C_w @ w
        fed_x = x + nz["zeta"]
        for i in range(N):
            # every receiver sees the same corrupted broadcast, so the own copy suffices
            fed_x[part.x_index(i)] += delivered[i][i][0]
        fed = np.concatenate([u_f + nz["beta_f"], fed_x])
        u = u_f + u_s2 + nz["beta_s2"]
        for key, val in (("x", x), ("w", w), ("u", u), ("u_f", u_f), ("u_s1", u_s1), ("u_s2", u_s2), ("d", dk),
                         ("slack", slack), ("micros", micros), ("status", status)):
            rec[key].append(np.array(val, copy=True) if key != "status" else tuple(val))
        for key in noise_rec:
            noise_rec[key].append(nz[key])
        x = plant.A @ x + plant.B_u @ u + plant.B_d @ dk
        w = A_w @ w + layer.B_w @ fed

    def stack(key, width):
        return np.array(rec[key]).reshape(-1, width)

    return SimulationTrace(
        seed=int(seed),
        N=N,
        x=stack("x", n_x),
        w=stack("w", n_w),
        u=stack("u", n_u),
        u_f=stack("u_f", n_u),
        u_s1=stack("u_s1", n_x),
        u_s2=stack("u_s2", n_u),
        d=stack("d", plant.n_d),
        noise={k: np.array(v).reshape(len(v), -1) if v else np.zeros((0, 0)) for k, v in noise_rec.items()},
        qp_status=rec["status"],
        qp_micros=stack("micros", N),
        slack=stack("slack", N),
        x_final=x,
        w_final=w,
        breach=breach,
    )


def replay_monolithic(plant: StateSpace, layer: NrfLayer, trace: SimulationTrace, x0, w0) -> np.ndarray:
    """Dense closed-loop replay of the recorded commands and noise; returns z over time."""
    cl = assemble_closed_loop(plant, layer)
    z = np.concatenate([np.asarray(x0, dtype=float), np.asarray(w0, dtype=float)])
    out = [z]
    n = trace.noise
    for k in range(trace.steps):
        z = cl.step(
            z,
            trace.u_s1[k],
            trace.u_s2[k],
            n["zeta"][k] + n["beta_s1"][k],
            n["beta_s2"][k],
            n["beta_f"][k],
            trace.d[k],
        )
        out.append(z)
    return np.array(out)


def solve_time_stats(traces: Sequence[SimulationTrace]) -> list[dict]:
    """Per-area QP solve-time statistics in milliseconds."""
    if not traces:
        return []
    N = traces[0].N
    out = []
    for i in range(N):
        ms = np.concatenate([t.qp_micros[:, i] for t in traces]) / 1000.0
        if ms.size == 0:
            out.append({"area": i, "samples": 0})
            continue
        vals, counts = np.unique(np.round(ms, 3), return_counts=True)
        out.append(
            {
                "area": i,
                "samples": int(ms.size),
                "min_ms": float(ms.min()),
                "max_ms": float(ms.max()),
                "mean_ms": float(ms.mean()),
                "median_ms": float(np.median(ms)),
                "mode_ms": float(vals[np.argmax(counts)]),
            }
        )
    return out
