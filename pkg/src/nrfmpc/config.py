"""Run configuration: YAML schema, validation and system assembly."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable

import numpy as np
import yaml

from .design import ConstraintSpec, DesignOptions, MixedConstraint, StageCost
from .linsys import AreaPartition, StateSpace
from .nrf import NrfBlock, NrfLayer, build_nrf_layer
from .platoon import PlatoonParams, build_platoon, equilibrium_state, scenario_dp0
from .sets import Box


class ConfigError(ValueError):
    """Schema or consistency failure in a run configuration."""


def _check_keys(section: str, data: dict, allowed: set[str]) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(data).__name__}")
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"{section}: unknown keys {sorted(extra)}")


def _section(cls, name: str, data: dict | None):
    data = {} if data is None else data
    _check_keys(name, data, {f.name for f in fields(cls)})
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


@dataclass
class DesignSection:
    rho_max: int = 5
    T: int | None = None
    T_bar: int = 0
    allow_uncertified: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.rho_max < 1:
            raise ValueError("rho_max must be >= 1")
        if self.T is not None and self.T < 1:
            raise ValueError("T must be >= 1")
        if self.T_bar < 0 or self.workers < 1:
            raise ValueError("T_bar must be >= 0 and workers >= 1")


@dataclass
class SimulateSection:
    steps: int = 2000
    seeds: list = field(default_factory=lambda: [0])

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        self.seeds = [int(s) for s in self.seeds]


@dataclass
class VerifySection:
    quiescence_margin: float = 0.5
    quiescence_tol: float = 1e-6
    tol: float = 1e-9


@dataclass
class OutputSection:
    dir: str = "out"
    artifacts: str | None = None


@dataclass
class RunConfig:
    """A complete run description; `system` is either a platoon or a generic network."""

    system: dict
    scenario: dict = field(default_factory=lambda: {"type": "zero"})
    initial: dict = field(default_factory=lambda: {"type": "zero"})
    design: DesignSection = field(default_factory=DesignSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    verify: VerifySection = field(default_factory=VerifySection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return {
            "system": copy.deepcopy(self.system),
            "scenario": copy.deepcopy(self.scenario),
            "initial": copy.deepcopy(self.initial),
            "design": asdict(self.design),
            "simulate": asdict(self.simulate),
            "verify": asdict(self.verify),
            "output": asdict(self.output),
        }

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def parse_config(data: dict) -> RunConfig:
    _check_keys("config", data, {"system", "scenario", "initial", "design", "simulate", "verify", "output"})
    if "system" not in data:
        raise ConfigError("config: missing 'system'")
    cfg = RunConfig(
        system=copy.deepcopy(data["system"]),
        scenario=copy.deepcopy(data.get("scenario") or {"type": "zero"}),
        initial=copy.deepcopy(data.get("initial") or {"type": "zero"}),
        design=_section(DesignSection, "design", data.get("design")),
        simulate=_section(SimulateSection, "simulate", data.get("simulate")),
        verify=_section(VerifySection, "verify", data.get("verify")),
        output=_section(OutputSection, "output", data.get("output")),
    )
    # building the system validates every dimension up front
    build_system(cfg)
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        raise ConfigError(f"{path}: empty configuration")
    return parse_config(data)


@dataclass
class System:
    plant: StateSpace
    layer: NrfLayer
    spec: ConstraintSpec
    cost: StageCost | list[StageCost] | None
    scenario: Callable[[int], np.ndarray]
    x0: np.ndarray
    w0: np.ndarray
    extra: dict = field(default_factory=dict)


def _platoon_params(sys_cfg: dict) -> PlatoonParams:
    allowed = {f.name for f in fields(PlatoonParams)} | {"type"}
    _check_keys("system", sys_cfg, allowed)
    kw = {k: v for k, v in sys_cfg.items() if k != "type"}
    for key in ("coefficients", "A_car", "B_car", "y_bounds", "v_bounds", "us1_bounds"):
        if key in kw and kw[key] is not None:
            kw[key] = tuple(tuple(r) if isinstance(r, list) else r for r in kw[key])
    try:
        return PlatoonParams(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"system: {exc}") from exc


def _box(entry, name: str) -> Box:
    try:
        lo, hi = np.asarray(entry["lower"], dtype=float), np.asarray(entry["upper"], dtype=float)
        return Box.from_bounds(lo, hi)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected {{lower: [...], upper: [...]}} ({exc})") from exc


def _network_system(sc: dict):
    allowed = {"type", "A", "B_u", "B_d", "areas", "neighbors", "nrf", "sets", "cost"}
    _check_keys("system", sc, allowed)
    try:
        A = np.asarray(sc["A"], dtype=float)
        B = np.asarray(sc["B_u"], dtype=float).reshape(A.shape[0], -1)
        B_d = np.asarray(sc.get("B_d", np.zeros((A.shape[0], 0))), dtype=float).reshape(A.shape[0], -1)
        plant = StateSpace.network(A, B, B_d)
        part = AreaPartition(
            tuple(a[0] for a in sc["areas"]),
            tuple(a[1] for a in sc["areas"]),
            tuple(frozenset(n) for n in sc.get("neighbors", ())),
        )
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise ConfigError(f"system: {exc}") from exc
    if part.n_x != plant.n_x or part.n_u != plant.n_u:
        raise ConfigError("system: area sizes do not add up to the plant dimensions")
    try:
        blocks = [NrfBlock(b["a"], b["K"]) for b in sc["nrf"]]
        layer = build_nrf_layer(part, blocks)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"system.nrf: {exc}") from exc
    if plant.n_d == 0:
        raise ConfigError("system: the network plant needs at least one disturbance channel (B_d)")
    st = sc.get("sets") or {}
    _check_keys("system.sets", st, {"X", "U", "V", "D_d", "D_bf", "D_bs1", "D_bs2", "U_s1", "U_s2", "mixed"})
    try:
        spec = ConstraintSpec(
            partition=part,
            X=tuple(_box(e, "X") for e in st["X"]),
            U=tuple(_box(e, "U") for e in st["U"]),
            V=_box(st["V"], "V"),
            D_d=_box(st["D_d"], "D_d"),
            D_bf=_box(st["D_bf"], "D_bf"),
            D_bs1=_box(st["D_bs1"], "D_bs1"),
            D_bs2=_box(st["D_bs2"], "D_bs2"),
            U_s1=tuple(_box(e, "U_s1") for e in st["U_s1"]),
            U_s2=tuple(_box(e, "U_s2") for e in st["U_s2"]),
            mixed=tuple(tuple(MixedConstraint(**m) for m in ms) for ms in st.get("mixed", ())),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"system.sets: {exc}") from exc
    if spec.V.dim != part.n_x + layer.n_w or spec.D_d.dim != plant.n_d:
        raise ConfigError("system.sets: V must cover x and w, D_d must match B_d")
    cost = None
    if sc.get("cost"):
        c = sc["cost"]
        cost = [StageCost(np.asarray(q, float), np.asarray(r1, float), np.asarray(r2, float))
                for q, r1, r2 in zip(c["Q"], c["R1"], c["R2"])]
    return plant, layer, spec, cost


def _scenario(cfg: RunConfig, n_d: int, T_s: float | None) -> Callable[[int], np.ndarray]:
    sc = cfg.scenario
    _check_keys("scenario", sc, {"type", "value"})
    kind = sc.get("type", "zero")
    if kind == "zero":
        return lambda k: np.zeros(n_d)
    if kind == "constant":
        v = np.asarray(sc.get("value"), dtype=float).reshape(-1)
        if v.size != n_d:
            raise ConfigError(f"scenario: constant value must have length {n_d}")
        return lambda k: v.copy()
    if kind == "platoon_v0":
        if T_s is None:
            raise ConfigError("scenario: platoon_v0 needs a platoon system")
        return lambda k: np.array([scenario_dp0(k, T_s)])
    raise ConfigError(f"scenario: unknown type {kind!r}")


def build_system(cfg: RunConfig) -> System:
    sc = cfg.system
    if not isinstance(sc, dict) or "type" not in sc:
        raise ConfigError("system: needs a 'type' (platoon or network)")
    if sc["type"] == "platoon":
        params = _platoon_params(sc)
        model, layer, spec, cost = build_platoon(params)
        plant, T_s = model.plant, params.T_s
        extra = {"platoon": model}
    elif sc["type"] == "network":
        plant, layer, spec, cost = _network_system(sc)
        T_s, extra = None, {}
    else:
        raise ConfigError(f"system: unknown type {sc['type']!r}")
    scenario = _scenario(cfg, plant.n_d, T_s)
    ini = cfg.initial
    _check_keys("initial", ini, {"type", "speed", "x", "w"})
    kind = ini.get("type", "zero")
    if kind == "zero":
        x0, w0 = np.zeros(plant.n_x), np.zeros(layer.n_w)
    elif kind == "equilibrium":
        if sc["type"] != "platoon":
            raise ConfigError("initial: equilibrium is defined for the platoon only")
        x0, w0 = equilibrium_state(params, float(ini.get("speed", 10.0)))
    elif kind == "explicit":
        x0 = np.asarray(ini.get("x"), dtype=float).reshape(-1)
        w0 = np.asarray(ini.get("w", np.zeros(layer.n_w)), dtype=float).reshape(-1)
        if x0.size != plant.n_x or w0.size != layer.n_w:
            raise ConfigError("initial: x/w lengths do not match the system")
    else:
        raise ConfigError(f"initial: unknown type {kind!r}")
    return System(plant, layer, spec, cost, scenario, x0, w0, extra)


def design_options(cfg: RunConfig, system: System) -> DesignOptions:
    d = cfg.design
    return DesignOptions(
        rho_max=d.rho_max, T=d.T, T_bar=d.T_bar, allow_uncertified=d.allow_uncertified,
        workers=d.workers, cost=system.cost,
    )


def platoon_config(**overrides: Any) -> RunConfig:
    """The bundled benchmark: 10 cars, leader speed profile, one-step horizons."""
    data = {
        "system": {"type": "platoon", "N": 10},
        "scenario": {"type": "platoon_v0"},
        "initial": {"type": "equilibrium", "speed": 10.0},
        "design": {"rho_max": 5, "T": 1, "T_bar": 0, "allow_uncertified": True},
        "simulate": {"steps": 2000, "seeds": [0, 1, 2, 3, 4]},
    }
    for k, v in overrides.items():
        data[k] = v
    return parse_config(data)
