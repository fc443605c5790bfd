"""Energy conservation and temporal convergence of the Crank-Nicolson solver.

Runs one long simulation (energy history to CSV) and a sequence of halved
time steps; successive differences at the final time should shrink by 4.

    python scripts/eb_time_convergence.py --mesh single_tet --dt 0.02 --levels 4
"""

import math
from dataclasses import dataclass

import numpy as np

from _config import parse_config, save_json
from ggfem import eb
from ggfem.mesh import load_mesh


@dataclass
class TimeConfig:
    """Temporal convergence study for the Crank-Nicolson scheme."""

    mesh: str = "single_tet"
    k: int = 7
    T: float = 1.0
    dt: float = 0.02
    levels: int = 4
    smooth_passes: int = 4
    long_steps: int = 1000
    csv: str = "results/energy.csv"
    out: str = "results/time_convergence.json"


def main(cfg):
    sys_ = eb.assemble_eb(load_mesh(cfg.mesh), cfg.k)
    x0 = eb.elliptic_projection(sys_, eb.SmoothTriple())
    if cfg.smooth_passes:
        x0 = eb.prepare_initial_data(sys_, x0, passes=cfg.smooth_passes)
    long = eb.run_simulation(sys_, x0, eb.CNConfig(cfg.dt, cfg.long_steps, cfg.k))
    long.write_csv(cfg.csv)
    print(f"energy drift over {cfg.long_steps} steps: {long.energy_drift:.2e}")
    L = sys_.mass()
    finals = []
    for level in range(cfg.levels):
        dt = cfg.dt / 2**level
        steps = round(cfg.T / dt)
        finals.append(eb.run_simulation(sys_, x0, eb.CNConfig(dt, steps, cfg.k)).final.x)
    diffs = [math.sqrt(d @ (L @ d)) for d in (np.subtract(a, b) for a, b in zip(finals, finals[1:]))]
    ratios = [a / b for a, b in zip(diffs, diffs[1:])]
    for lv, (d, r) in enumerate(zip(diffs, [None] + ratios)):
        print(f"dt={cfg.dt / 2**lv:.5f}  |x(dt) - x(dt/2)| = {d:.3e}" + (f"  ratio {r:.3f}" if r else ""))
    save_json(cfg, {"energy_drift": long.energy_drift, "differences": diffs, "ratios": ratios}, cfg.out)


if __name__ == "__main__":
    main(parse_config(TimeConfig))
