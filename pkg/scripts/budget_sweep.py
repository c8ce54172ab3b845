"""Certified horizon of every platoon area as the command budgets are scaled.

    python scripts/budget_sweep.py [--scales 0.25 0.5 1 1.5 1.9] [--rho-max 3]

Prints one line per scale with rho for each car and the first witness.
"""

from __future__ import annotations

import argparse

import numpy as np

from nrfmpc.design import DesignInfeasible, DesignOptions, run_design
from nrfmpc.platoon import PlatoonParams, build_platoon


def sweep(scales, rho_max: int, N: int) -> None:
    base = PlatoonParams(N=N)
    for s in scales:
        us1 = tuple(b * s for b in base.us1_bounds)
        try:
            model, layer, spec, cost = build_platoon(PlatoonParams(N=N, us1_bounds=us1, us2_bound=base.us2_bound * s))
            art = run_design(spec, layer, model.plant,
                             DesignOptions(rho_max=rho_max, T=1, allow_uncertified=True, cost=cost))
        except DesignInfeasible as exc:
            print(f"scale {s:5.2f}: design infeasible ({exc})")
            continue
        rho = [a.rho for a in art.areas]
        line = f"scale {s:5.2f}: rho {rho}"
        failing = [a for a in art.areas if a.witness]
        if failing:
            w = failing[0].witness
            line += f"  area {failing[0].area}: {w['reason']} at {np.round(w['vertex'], 3).tolist()}"
        print(line)


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scales", type=float, nargs="+", default=[0.25, 0.5, 1.0, 1.5, 1.9])
    p.add_argument("--rho-max", type=int, default=3)
    p.add_argument("-N", type=int, default=10)
    a = p.parse_args()
    sweep(a.scales, a.rho_max, a.N)
