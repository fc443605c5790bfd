"""Discrete stability constant of div: V_h -> Q_h on a sequence of meshes.

    python scripts/div_stability.py --meshes cube6,cube6_refined(2)
"""

from dataclasses import dataclass

from _config import parse_config, save_json
from ggfem.complex import verify_div_surjectivity
from ggfem.mesh import load_mesh


@dataclass
class DivConfig:
    """Surjectivity of the discrete divergence and its stability constant."""

    meshes: tuple = ("single_tet", "two_tet", "cube6")
    k: int = 7
    out: str = "results/div_stability.json"


def main(cfg):
    results = {}
    for name in cfg.meshes:
        rep = verify_div_surjectivity(load_mesh(name), cfg.k, "float", stability=True)
        results[name] = rep.as_dict()
        print(f"{name:>18}  rank {rep.rank_div}/{rep.dim_Q}  beta={rep.stability_constant:.8f}")
    save_json(cfg, results, cfg.out)


if __name__ == "__main__":
    main(parse_config(DivConfig))
