"""Command-line front end: design, simulate, verify and report.

Exit codes: 0 success, 1 a check failed (certificate, feasibility breach or
trace verification), 2 bad usage or configuration.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import design as D
from .config import ConfigError, RunConfig, build_system, design_options, load_config, parse_config
from .nrf import assemble_closed_loop, theta_signals
from .runtime import read_trace_csv, simulate, solve_time_stats

log = logging.getLogger("nrfmpc")

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2
THREADS_ENV = "NRFMPC_THREADS"


def _emit(record: dict) -> None:
    sys.stdout.write(yaml.safe_dump(record, sort_keys=False))


def _artifacts_path(cfg: RunConfig, override: str | None) -> Path:
    if override:
        return Path(override)
    if cfg.output.artifacts:
        return Path(cfg.output.artifacts)
    return Path(cfg.output.dir) / "artifacts.yaml"


def load_or_design(cfg: RunConfig, system, path: Path | None) -> D.DesignArtifacts:
    """Artifacts from `path` when it exists (fingerprint-checked), else a fresh design."""
    if path is not None and path.exists():
        with open(path) as fh:
            rec = yaml.safe_load(fh)
        art = D.artifacts_from_record(rec, system.spec, system.layer)
        expected = D.fingerprint(assemble_closed_loop(system.plant, system.layer))
        if art.fingerprint and art.fingerprint != expected:
            raise ConfigError(f"{path}: artifacts were designed for a different system")
        return art
    return D.run_design(system.spec, system.layer, system.plant, design_options(cfg, system))


def cmd_design(cfg: RunConfig, artifacts: str | None = None) -> int:
    system = build_system(cfg)
    try:
        art = D.run_design(system.spec, system.layer, system.plant, design_options(cfg, system))
    except D.DesignInfeasible as exc:
        _emit({"status": "design_infeasible", "area": exc.area, "stage": exc.stage, "t": exc.t,
               "detail": exc.detail, "remedy": exc.remedy})
        return EXIT_CHECK
    out = _artifacts_path(cfg, artifacts)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        yaml.safe_dump(D.artifacts_to_record(art), fh, sort_keys=False)
    report = D.design_report(art)
    report["artifacts"] = str(out)
    with open(out.parent / "design_report.yaml", "w") as fh:
        yaml.safe_dump(report, fh, sort_keys=False)
    _emit({"status": "certified" if art.certified else "uncertified", "rho": [a.rho for a in art.areas],
           "horizons": [a.T for a in art.areas], "total_seconds": report["total_seconds"], "artifacts": str(out)})
    return EXIT_OK if art.certified else EXIT_CHECK


def _simulate_one(args: tuple) -> dict:
    cfg_dict, art_rec, seed, steps, out_dir = args
    cfg = parse_config(cfg_dict)
    system = build_system(cfg)
    art = D.artifacts_from_record(art_rec, system.spec, system.layer)
    trace = simulate(system.plant, system.layer, art, system.scenario, seed, steps, system.x0, system.w0)
    path = Path(out_dir) / f"trace_seed{seed}.csv"
    trace.to_csv(path)
    return {"seed": seed, "steps": trace.steps, "breach": trace.breach, "trace": str(path),
            "stats": solve_time_stats([trace])}


def _parse_seeds(seed: int | None, seeds: str | None, cfg: RunConfig) -> list[int]:
    if seed is not None:
        return [seed]
    if seeds:
        try:
            a, b = seeds.split("..")
            return list(range(int(a), int(b) + 1))
        except ValueError as exc:
            raise ConfigError(f"--seeds expects a..b, got {seeds!r}") from exc
    return list(cfg.simulate.seeds)


def cmd_simulate(cfg: RunConfig, seeds: list[int], steps: int | None, out: str | None, artifacts: str | None) -> int:
    system = build_system(cfg)
    path = _artifacts_path(cfg, artifacts)
    art = load_or_design(cfg, system, path)
    out_dir = Path(out or cfg.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = steps or cfg.simulate.steps
    jobs = [(cfg.to_dict(), D.artifacts_to_record(art), s, steps, str(out_dir)) for s in seeds]
    workers = max(1, int(os.environ.get(THREADS_ENV, "1")))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_simulate_one, jobs))
    else:
        results = [_simulate_one(j) for j in jobs]
    summary = {"runs": results}
    with open(out_dir / "simulation_summary.yaml", "w") as fh:
        yaml.safe_dump(summary, fh, sort_keys=False)
    _emit({"status": "ok" if all(r["breach"] is None for r in results) else "feasibility_breach",
           "runs": [{k: r[k] for k in ("seed", "steps", "breach", "trace")} for r in results]})
    return EXIT_OK if all(r["breach"] is None for r in results) else EXIT_CHECK


def _block(cols: dict, prefix: str, width: int) -> np.ndarray:
    return np.column_stack([cols[f"{prefix}{c}"] for c in range(width)]) if width else np.zeros((0, 0))


def verify_columns(cols: dict, cfg: RunConfig, system, art: D.DesignArtifacts) -> list[dict]:
    """Re-check a trace from its raw columns; returns one record per failure."""
    spec, layer = system.spec, system.layer
    part = spec.partition
    tol = cfg.verify.tol
    x = _block(cols, "x", part.n_x)
    w = _block(cols, "w", layer.n_w)
    u = _block(cols, "u", part.n_u)
    us1 = _block(cols, "u_s1_", part.n_x)
    us2 = _block(cols, "u_s2_", part.n_u)
    nu_x = _block(cols, "nu_x_", part.n_x)
    nu_w = _block(cols, "nu_w_", layer.n_w)
    failures = []

    def check(arr, lo, hi, what, index_of):
        bad = np.argwhere((arr < lo - tol) | (arr > hi + tol))
        for k, c in bad:
            failures.append({"step": int(k), "constraint": what, "index": int(c), "area": int(index_of(c)),
                             "value": float(arr[k, c]), "lower": float(lo[c]), "upper": float(hi[c])})

    X_lo = np.concatenate([spec.X[i].lower for i in range(part.N)])
    X_hi = np.concatenate([spec.X[i].upper for i in range(part.N)])
    U_lo = np.concatenate([spec.U[i].lower for i in range(part.N)])
    U_hi = np.concatenate([spec.U[i].upper for i in range(part.N)])
    check(x, X_lo, X_hi, "x in X", part.area_of_x)
    check(u, U_lo, U_hi, "u in U", part.area_of_u)
    W = D.nrf_state_sets(layer, spec).W_all(layer)
    check(w, W.lower, W.upper, "w in W", lambda c: next(i for i in range(part.N) if c in layer.w_index(i)))
    for i in range(part.N):
        for m in spec.mixed[i]:
            val = x[:, part.x_index(i)] @ m.L_x.T + u[:, part.u_index(i)] @ m.L_u.T
            check(val, m.lower, m.upper, f"mixed rows of area {i}", lambda c, i=i: i)
    for i in range(part.N):
        st = cols.get(f"qp_status{i}")
        if st is not None:
            for k in np.flatnonzero(st != "optimal"):
                failures.append({"step": int(k), "constraint": "qp status", "area": i, "value": str(st[k])})

    # quiescence, with the t = 1 slack recomputed from the reported initial conditions
    cl = assemble_closed_loop(system.plant, layer)
    margin, qtol = cfg.verify.quiescence_margin, cfg.verify.quiescence_tol
    for k in range(x.shape[0]):
        reports = {j: (x[k, part.x_index(j)] + nu_x[k, part.x_index(j)], w[k, layer.w_index(j)] + nu_w[k, layer.w_index(j)])
                   for j in range(part.N)}
        for a in art.areas:
            theta = np.concatenate(theta_signals(cl, a.area, reports, 1))
            if float(np.min(a.h[0] - a.H @ theta)) <= margin:
                continue
            i = a.area
            effort = max(np.max(np.abs(us1[k, part.x_index(i)])), np.max(np.abs(us2[k, part.u_index(i)])))
            if effort > qtol:
                failures.append({"step": k, "constraint": "quiescence", "area": i, "value": float(effort),
                                 "upper": qtol})
    return failures


def cmd_verify(cfg: RunConfig, traces: list[str], artifacts: str | None) -> int:
    system = build_system(cfg)
    art = load_or_design(cfg, system, _artifacts_path(cfg, artifacts))
    results = []
    ok = True
    for path in traces:
        cols = read_trace_csv(path)
        fails = verify_columns(cols, cfg, system, art)
        ok &= not fails
        results.append({"trace": path, "steps": int(cols["k"].size), "passed": not fails, "failures": fails[:50],
                        "failure_count": len(fails)})
    _emit({"status": "passed" if ok else "failed", "traces": results})
    return EXIT_OK if ok else EXIT_CHECK


def cmd_report(traces: list[str], out: str | None) -> int:
    per_area: dict[int, list] = {}
    effort = []
    for path in traces:
        cols = read_trace_csv(path)
        i = 0
        while f"qp_micros{i}" in cols:
            per_area.setdefault(i, []).append(cols[f"qp_micros{i}"] / 1000.0)
            i += 1
        us = [v for k, v in cols.items() if k.startswith("u_s1_") or k.startswith("u_s2_")]
        if us:
            effort.append(float(np.max(np.abs(np.column_stack(us)))))
    rows = []
    for i, chunks in sorted(per_area.items()):
        ms = np.concatenate(chunks)
        vals, counts = np.unique(np.round(ms, 3), return_counts=True)
        rows.append({"area": i, "samples": int(ms.size), "min_ms": float(ms.min()), "max_ms": float(ms.max()),
                     "mean_ms": float(ms.mean()), "median_ms": float(np.median(ms)),
                     "mode_ms": float(vals[np.argmax(counts)])})
    report = {"traces": list(traces), "solve_times": rows, "max_second_layer_effort": max(effort, default=0.0)}
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as fh:
            yaml.safe_dump(report, fh, sort_keys=False)
    _emit(report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nrfmpc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="run the offline design and write artifacts")
    d.add_argument("--config", required=True)
    d.add_argument("--artifacts")

    s = sub.add_parser("simulate", help="simulate seeded closed-loop runs")
    s.add_argument("--config", required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--seed", type=int)
    g.add_argument("--seeds", help="inclusive range a..b")
    s.add_argument("--steps", type=int)
    s.add_argument("--out")
    s.add_argument("--artifacts")

    v = sub.add_parser("verify", help="re-check traces against the constraints")
    v.add_argument("--config", required=True)
    v.add_argument("--artifacts")
    v.add_argument("traces", nargs="+")

    r = sub.add_parser("report", help="aggregate solve-time statistics")
    r.add_argument("traces", nargs="+")
    r.add_argument("--out")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        if args.command == "report":
            return cmd_report(args.traces, args.out)
        cfg = load_config(args.config)
        if args.command == "design":
            return cmd_design(cfg, args.artifacts)
        if args.command == "simulate":
            return cmd_simulate(cfg, _parse_seeds(args.seed, args.seeds, cfg), args.steps, args.out, args.artifacts)
        return cmd_verify(cfg, args.traces, args.artifacts)
    except (ConfigError, FileNotFoundError) as exc:
        _emit({"status": "error", "error": str(exc)})
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
