"""Inf-sup constant and elliptic-projection error under mesh refinement.

``--scale`` multiplies the wavenumbers of the smooth target; larger values
make the coarse meshes under-resolve it so refinement has a visible effect.

    python scripts/refinement_study.py --meshes cube6,cube6_refined(2) --scale 3
"""

import gc
import time
from dataclasses import dataclass

from _config import parse_config, save_json
from ggfem import eb
from ggfem.mesh import load_mesh


@dataclass
class RefinementConfig:
    """h-dependence of the inf-sup constant and of the projection error."""

    meshes: tuple = ("single_tet", "cube6", "cube6_refined(2)")
    k: int = 7
    scale: float = 3.0
    infsup_method: str = "auto"
    out: str = "results/refinement.json"


def main(cfg):
    base = eb.SmoothTriple()
    target = eb.SmoothTriple(w=tuple(cfg.scale * c for c in base.w), v=tuple(cfg.scale * c for c in base.v))
    results = {}
    for name in cfg.meshes:
        mesh = load_mesh(name)
        t0 = time.perf_counter()
        sys_ = eb.assemble_eb(mesh, cfg.k)
        gamma = eb.infsup_estimate(sys_, cfg.infsup_method)
        err = eb.projection_error(sys_, eb.elliptic_projection(sys_, target), target)
        results[name] = {"h": mesh.h(), "dims": list(sys_.dims), "gamma_h": gamma.gamma_h, "method": gamma.method,
                         "error": err.as_dict(), "seconds": time.perf_counter() - t0}
        print(f"{name:>18}  h={mesh.h():.3f}  gamma_h={gamma.gamma_h:.6f}  error={err.total:.3e}  "
              f"({results[name]['seconds']:.0f}s)")
        del sys_
        gc.collect()
    save_json(cfg, results, cfg.out)


if __name__ == "__main__":
    main(parse_config(RefinementConfig))
