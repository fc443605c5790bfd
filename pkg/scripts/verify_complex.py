"""Exactness of the discrete complex on a list of meshes.

    python scripts/verify_complex.py --meshes single_tet,two_tet --mode exact
"""

import time
from dataclasses import dataclass

from _config import parse_config, save_json
from ggfem.complex import verify_dual_complex, verify_exactness
from ggfem.mesh import load_mesh


@dataclass
class ComplexConfig:
    """Exactness study of the discrete complex."""

    meshes: tuple = ("single_tet", "two_tet")
    k: int = 7
    mode: str = "exact"
    dual: bool = False
    out: str = "results/complex.json"


def main(cfg):
    results = {}
    for name in cfg.meshes:
        mesh = load_mesh(name)
        t0 = time.perf_counter()
        rep = verify_exactness(mesh, cfg.k, cfg.mode)
        entry = rep.as_dict()
        entry["seconds"] = time.perf_counter() - t0
        if cfg.dual:
            entry["dual"] = verify_dual_complex(mesh, cfg.k).as_dict()
        results[name] = entry
        print(f"{name:>18}  {rep.verdict:<10} dims {list(rep.dims.values())}  ranks {list(rep.ranks.values())}  "
              f"{entry['seconds']:.1f}s")
    save_json(cfg, results, cfg.out)
    return results


if __name__ == "__main__":
    main(parse_config(ComplexConfig))
