"""Command-line front end: ``ggfem verify local|complex``, ``ggfem solve eb``, ``ggfem mesh gen|info``.

Exit codes: 0 when every check passes, 1 when a check fails, 2 for usage or
configuration errors.  Reports are ``ggreport 1`` JSON documents written to
stdout (or ``--out``); time series go to ``--csv``.

Numerical modules are imported only after the arguments are parsed so that
``--threads`` (or ``GGFEM_THREADS``) can cap the BLAS pool before it starts.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
DEFAULT_LOCAL_K = {"sigma": 5, "v": 3}


class UsageError(Exception):
    """Invalid configuration detected before or during dispatch."""


@dataclass
class RunConfig:
    command: str
    mesh: str = "single_tet"
    k: int | None = None
    mode: str = "exact"
    space: str = ""
    trials: int = 5
    seed: int = 0
    dt: float = 0.01
    steps: int = 100
    richardson: bool = False
    smooth_passes: int = 4
    drift_tol: float = 1e-8
    dual: bool = False
    surjectivity: bool = False
    out: str | None = None
    csv: str | None = None
    threads: int | None = None
    kind: str = ""
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.threads is not None and self.threads < 1:
            raise UsageError("--threads must be >= 1")
        if self.k is not None and self.k < 0:
            raise UsageError("k must be non-negative")
        if self.mode not in ("exact", "float"):
            raise UsageError(f"unknown mode {self.mode!r}")
        if self.command == "solve eb":
            if not (self.dt == self.dt and abs(self.dt) != float("inf")) or self.dt <= 0:
                raise UsageError("--dt must be a positive finite number")
            if self.steps < 0:
                raise UsageError("--steps must be >= 0")
            if self.smooth_passes < 0:
                raise UsageError("--smooth-passes must be >= 0")
        if self.trials < 0:
            raise UsageError("--trials must be >= 0")
        return self


def resolve_threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("GGFEM_THREADS")
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"GGFEM_THREADS must be an integer, got {env!r}") from None


def apply_threads(n):
    if n is not None:
        for var in THREAD_VARS:
            os.environ[var] = str(n)


# ---------------------------------------------------------------------------
# parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: GGFEM_THREADS or all)")
    common.add_argument("--out", default=None, help="write the JSON report here instead of stdout")

    p = argparse.ArgumentParser(prog="ggfem", description="Gradgrad-complex finite elements: verification and solver")
    sub = p.add_subparsers(dest="group", required=True)

    verify = sub.add_parser("verify", help="structural verification suites").add_subparsers(dest="what", required=True)
    loc = verify.add_parser("local", parents=[common], help="local bubble, divergence and unisolvence checks")
    loc.add_argument("--space", required=True,
                     help="sigma, sigma-bubble, sigma-bubble-star, v, v-bubble, v-bubble-star, u or q")
    loc.add_argument("--k", type=int, default=None, help="degree (default 5 for sigma spaces, 3 for v spaces)")
    loc.add_argument("--trials", type=int, default=5, help="random rational tetrahedra besides the reference one")
    loc.add_argument("--seed", type=int, default=0)

    cpx = verify.add_parser("complex", parents=[common], help="exactness of the global discrete complex")
    cpx.add_argument("--mesh", default="single_tet", help="generator name or mesh file")
    cpx.add_argument("--k", type=int, default=7)
    cpx.add_argument("--mode", default="exact", choices=("exact", "float"))
    cpx.add_argument("--dual", action="store_true", help="also check the complex ending in the discontinuous space")
    cpx.add_argument("--surjectivity", action="store_true", help="also estimate the div stability constant")

    solve = sub.add_parser("solve", help="solvers").add_subparsers(dest="what", required=True)
    ebp = solve.add_parser("eb", parents=[common], help="Crank-Nicolson run of the Einstein-Bianchi system")
    ebp.add_argument("--mesh", default="single_tet")
    ebp.add_argument("--k", type=int, default=7)
    ebp.add_argument("--dt", type=float, default=0.01)
    ebp.add_argument("--steps", type=int, default=100)
    ebp.add_argument("--richardson", action="store_true", help="also run at dt/2 and dt/4 and report the ratio")
    ebp.add_argument("--smooth-passes", type=int, default=4,
                     help="high-frequency damping passes applied to the projected initial data (0 disables)")
    ebp.add_argument("--drift-tol", type=float, default=1e-8)
    ebp.add_argument("--csv", default=None, help="time-series CSV path")

    mesh = sub.add_parser("mesh", help="mesh utilities").add_subparsers(dest="what", required=True)
    gen = mesh.add_parser("gen", parents=[common], help="write a generated mesh to a file")
    gen.add_argument("--kind", required=True, help="single_tet, two_tet, cube6 or cube6_refined(n)")
    gen.add_argument("--file", required=True, help="output mesh path")
    info = mesh.add_parser("info", parents=[common], help="topology summary of a mesh")
    info.add_argument("--mesh", required=True)
    return p


def config_from_args(ns):
    cmd = f"{ns.group} {ns.what}"
    cfg = RunConfig(command=cmd, out=ns.out, threads=resolve_threads(ns.threads))
    for name in ("mesh", "k", "mode", "space", "trials", "seed", "dt", "steps", "richardson", "smooth_passes",
                 "drift_tol", "dual", "surjectivity", "csv", "kind"):
        if hasattr(ns, name):
            setattr(cfg, name, getattr(ns, name))
    if cmd == "mesh gen":
        cfg.extra["file"] = ns.file
    if cmd == "verify local" and cfg.k is None:
        cfg.k = DEFAULT_LOCAL_K["sigma" if cfg.space.startswith("sigma") else "v"]
        if cfg.space in ("u", "q"):
            cfg.k = 7
    return cfg.validate()


# ---------------------------------------------------------------------------
# commands


def cmd_verify_local(cfg):
    from .verification import verify_local

    rep = verify_local(cfg.space, cfg.k, cfg.trials, cfg.seed)
    return rep.passed, "verify_local", rep.as_dict()


def cmd_verify_complex(cfg):
    from .complex import verify_dual_complex, verify_div_surjectivity, verify_exactness
    from .mesh import load_mesh

    mesh = load_mesh(cfg.mesh)
    rep = verify_exactness(mesh, cfg.k, cfg.mode)
    payload = {"complex": rep.as_dict()}
    passed = rep.verdict in ("exact", "withheld")
    if cfg.dual:
        dual = verify_dual_complex(mesh, cfg.k)
        payload["dual_complex"] = dual.as_dict()
        passed = passed and dual.membership_exact and dual.closed_not_exact
    if cfg.surjectivity:
        surj = verify_div_surjectivity(mesh, cfg.k, "float", stability=True)
        payload["div_surjectivity"] = surj.as_dict()
        passed = passed and surj.onto
    return passed, "verify_complex", payload


def cmd_solve_eb(cfg):
    from . import eb
    from .mesh import load_mesh

    mesh = load_mesh(cfg.mesh)
    run = eb.CNConfig(cfg.dt, cfg.steps, cfg.k)
    sys_ = eb.assemble_eb(mesh, cfg.k)
    x0 = eb.elliptic_projection(sys_, eb.SmoothTriple())
    if cfg.smooth_passes:
        x0 = eb.prepare_initial_data(sys_, x0, passes=cfg.smooth_passes)
    res = eb.run_simulation(sys_, x0, run, richardson=cfg.richardson)
    if cfg.csv:
        res.write_csv(cfg.csv)
    drift_ok = res.energy_drift <= cfg.drift_tol
    payload = {
        "mesh": mesh.name, "k": cfg.k, "dt": cfg.dt, "steps": cfg.steps, "T": cfg.dt * cfg.steps,
        "dims": list(sys_.dims), "smooth_passes": cfg.smooth_passes,
        "energy_initial": res.energies[0], "energy_final": res.energies[-1], "energy_drift": res.energy_drift,
        "energy_drift_ok": drift_ok, "csv": cfg.csv,
    }
    passed = drift_ok
    if cfg.richardson:
        ratio = res.richardson_ratio
        payload["richardson_ratio"] = ratio
        payload["richardson_ok"] = 3.2 <= ratio <= 4.8
        passed = passed and payload["richardson_ok"]
    return passed, "solve_eb", payload


def cmd_mesh_gen(cfg):
    from .mesh import generate_mesh, write_mesh

    mesh = generate_mesh(cfg.kind)
    write_mesh(mesh, cfg.extra["file"])
    return True, "mesh", {"file": cfg.extra["file"], **_mesh_info(mesh)}


def cmd_mesh_info(cfg):
    from .mesh import load_mesh

    mesh = load_mesh(cfg.mesh)
    return mesh.euler == 1, "mesh", _mesh_info(mesh)


def _mesh_info(mesh):
    return {**mesh.info(), "h": mesh.h(), "interior_faces": len(mesh.interior_faces())}


COMMANDS = {
    "verify local": cmd_verify_local,
    "verify complex": cmd_verify_complex,
    "solve eb": cmd_solve_eb,
    "mesh gen": cmd_mesh_gen,
    "mesh info": cmd_mesh_info,
}


def main(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors, 0 for --help
        return int(exc.code or 0)
    try:
        cfg = config_from_args(ns)
        apply_threads(cfg.threads)
        from .errors import GGFemError
        from .report import dumps, make_report

        try:
            passed, kind, payload = COMMANDS[cfg.command](cfg)
        except (GGFemError, ValueError, FileNotFoundError) as exc:
            raise UsageError(str(exc)) from exc
    except UsageError as exc:
        print(f"ggfem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = dumps(make_report(kind, payload, passed))
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"ggfem {cfg.command}: {'PASS' if passed else 'FAIL'}", file=sys.stderr)
    return EXIT_OK if passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
