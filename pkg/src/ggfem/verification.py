"""Local verification suites: bubble characterisations, divergence images, unisolvence.

Every check runs in exact arithmetic on the reference tetrahedron and on a
set of random rational tetrahedra.  A check passes only when its equality is
proven (see :func:`ggfem.local_spaces.verify_span_equality`).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .dofs import unisolvence_check
from .errors import DegreeError
from .local_spaces import (
    basis_lemma_check,
    bubble_dimension_formula,
    bubble_space,
    div_image_check,
    q_perp_dimension,
    trace_kernel,
    verify_span_equality,
)
from .poly import random_rational_tet, reference_geom
from .report import format_rational

# space name -> (minimum k, default k, check names)
LOCAL_SUITES = {
    "sigma": (4, 5, ("sym_normal_basis", "sigma_bubble_equals_trace_kernel", "sigma_star_bubble_equals_trace_kernel",
                     "sigma_star_dimension", "sigma_unisolvence")),
    "sigma-bubble": (4, 5, ("sigma_bubble_equals_trace_kernel",)),
    "sigma-bubble-star": (4, 5, ("sigma_star_bubble_equals_trace_kernel", "sigma_star_dimension")),
    "v": (3, 3, ("traceless_basis", "v_bubble_equals_trace_kernel", "v_star_bubble_equals_trace_kernel",
                 "v_star_dimension", "v_div_image", "v_star_div_image", "v_unisolvence")),
    "v-bubble": (3, 3, ("v_bubble_equals_trace_kernel", "v_div_image")),
    "v-bubble-star": (3, 3, ("v_star_bubble_equals_trace_kernel", "v_star_dimension", "v_star_div_image")),
    "u": (7, 7, ("u_unisolvence",)),
    "q": (3, 7, ("q_unisolvence",)),
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return {"check": self.name, "passed": self.passed, **self.details}


def _span(space, kernel, k, geom):
    rep = verify_span_equality(bubble_space(space, k, geom), trace_kernel(kernel, k, geom))
    return rep.equal, rep.as_dict()


def _unisolvent(space_id, k, geom):
    rep = unisolvence_check(space_id, k, geom=geom, condition=False)
    d = rep.as_dict()
    d.pop("condition_estimate")
    return rep.determinant_nonzero, d


def run_check(name, k, geom):
    """Run one named check on one tetrahedron."""
    if name == "sym_normal_basis":
        d = basis_lemma_check("sym_normals", geom)
        return CheckResult(name, d["rank"] == 6, d)
    if name == "traceless_basis":
        d = basis_lemma_check("traceless_nt", geom)
        return CheckResult(name, d["rank"] == 8, d)
    if name == "sigma_bubble_equals_trace_kernel":
        return CheckResult(name, *_span("sigma", "sigma_full", k, geom))
    if name == "sigma_star_bubble_equals_trace_kernel":
        return CheckResult(name, *_span("sigma_star", "sigma_star", k, geom))
    if name == "v_bubble_equals_trace_kernel":
        return CheckResult(name, *_span("v", "v_full", k, geom))
    if name == "v_star_bubble_equals_trace_kernel":
        return CheckResult(name, *_span("v_star", "v_star", k, geom))
    if name in ("sigma_star_dimension", "v_star_dimension"):
        space = name[: -len("_dimension")]
        dim = bubble_space(space, k, geom).rank()
        want = bubble_dimension_formula(space, k)
        return CheckResult(name, dim == want, {"dim": dim, "formula": want})
    if name in ("v_div_image", "v_star_div_image"):
        star = name.startswith("v_star")
        rep = div_image_check("v_star" if star else "v_full", k, geom)
        d = rep.as_dict()
        d["target_formula"] = q_perp_dimension(k - 1, star)
        return CheckResult(name, rep.equal and rep.target_dim == d["target_formula"], d)
    if name.endswith("_unisolvence"):
        space_id = {"sigma": "Sigma", "v": "V", "u": "U", "q": "Q"}[name.split("_")[0]]
        return CheckResult(name, *_unisolvent(space_id, k, geom))
    raise ValueError(f"unknown check {name!r}")


def suite_checks(space, k):
    """Check names that apply to ``space`` at degree ``k`` (validates the pair)."""
    if space not in LOCAL_SUITES:
        raise ValueError(f"unknown space {space!r}; choose from {', '.join(LOCAL_SUITES)}")
    kmin, _, names = LOCAL_SUITES[space]
    if k < kmin:
        raise DegreeError(f"k ≥ {kmin} required for space {space} (got k = {k})")
    if space == "sigma" and k < 5:
        names = tuple(n for n in names if n != "sigma_unisolvence")  # the element starts at k = 5
    return names


def trial_geometries(trials, seed=0):
    """The reference tetrahedron followed by ``trials`` random rational tetrahedra."""
    rng = random.Random(seed)
    return [reference_geom()] + [random_rational_tet(rng) for _ in range(trials)]


@dataclass
class LocalReport:
    space: str
    k: int
    seed: int
    results: list  # per tetrahedron: (vertices, [CheckResult])

    @property
    def passed(self):
        return all(c.passed for _, checks in self.results for c in checks)

    def as_dict(self):
        return {
            "space": self.space,
            "k": self.k,
            "seed": self.seed,
            "tetrahedra": [
                {"vertices": [[format_rational(c) for c in v] for v in verts], "checks": [c.as_dict() for c in checks]}
                for verts, checks in self.results
            ],
        }


def verify_local(space, k, trials=5, seed=0):
    names = suite_checks(space, k)
    results = []
    for geom in trial_geometries(trials, seed):
        results.append((geom.vertices, [run_check(n, k, geom) for n in names]))
    return LocalReport(space, k, seed, results)
