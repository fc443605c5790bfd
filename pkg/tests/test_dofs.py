import random
from collections import Counter
from fractions import Fraction

import flint
import pytest

from ggfem.dofs import (
    assemble_space,
    dimension_formula,
    dof_matrix,
    dual_basis,
    local_dofs,
    space_layout,
    unisolvence_check,
)
from ggfem.errors import DegreeError
from ggfem.exact import bareiss_det
from ggfem.local_spaces import dot_normal_rows
from ggfem.mesh import generate_mesh
from ggfem.poly import BaryPoly, cart_gradient, matrix_cross_normal, matrix_dot_vector, random_rational_tet, reference_geom

REF = reference_geom()


@pytest.fixture(scope="module")
def two_tet():
    return generate_mesh("two_tet")


def to_fractions(m):
    return [Fraction(int(x.p), int(x.q)) for x in m.entries()]


def element_vector(space, t, coeffs):
    """Exact layout coefficients of a global function on element t."""
    loc = flint.fmpq_mat(space.layout.size, 1,
                         [flint.fmpq(coeffs[g].numerator, coeffs[g].denominator) for g in space.elem_dofs[t]])
    return to_fractions(space.shape_exact(t) * loc)


def face_restriction(poly, tet, face):
    """Restriction to a face, with variables ordered by ascending global vertex."""
    drop = next(i for i, v in enumerate(tet) if v not in face)
    kept = [v for v in tet if v != tet[drop]]
    r = poly.restrict(drop)
    perm = [kept.index(v) for v in face]
    return BaryPoly({tuple(e[p] for p in perm): c for e, c in r.terms.items()}, r.degree_bound, 3)


# ---------------------------------------------------------------------------
# local functionals


@pytest.mark.parametrize("space, k, count", [("Sigma", 5, 336), ("V", 3, 160), ("U", 7, 220), ("Sigma", 7, 720),
                                             ("Q", 7, 168)])
def test_local_dof_counts(space, k, count):
    assert len(local_dofs(space, k, geom=REF)) == count == space_layout(space, k).size


def test_u_dof_families():
    kinds = Counter(d.kind for d in local_dofs("U", 7, geom=REF))
    assert kinds == {"vertex_derivative": 4 * 35, "edge_moment": 6 * 8, "face_moment": 4 * 7, "interior_moment": 4}


def test_sigma_k5_has_no_edge_moments():
    assert not any(d.kind == "edge_moment" for d in local_dofs("Sigma", 5, geom=REF))


@pytest.mark.parametrize("space, k", [("Sigma", 4), ("V", 2), ("U", 6), ("Q", 2)])
def test_degree_range(space, k):
    with pytest.raises(DegreeError):
        local_dofs(space, k, geom=REF)


UNISOLVENCE_CASES = [("Sigma", 5), ("Sigma", 6), ("Sigma", 7), ("V", 3), ("V", 4), ("V", 5), ("V", 6), ("U", 7),
                     ("Q", 7), ("Q", 5)]


@pytest.mark.parametrize("space, k", UNISOLVENCE_CASES)
@pytest.mark.parametrize("seed", [None, 11, 12])
def test_unisolvence(space, k, seed):
    g = REF if seed is None else random_rational_tet(random.Random(seed))
    rep = unisolvence_check(space, k, geom=g, condition=False)
    assert rep.determinant_nonzero and rep.size == rep.ndofs


def test_unisolvence_agrees_with_bareiss_determinant():
    mat = dof_matrix(local_dofs("V", 3, geom=REF), space_layout("V", 3))
    assert bareiss_det(mat.to_lists()) != 0


def test_singular_dof_matrix_reports_failing_row():
    from ggfem.exact import first_dependent_row

    mat = dof_matrix(local_dofs("V", 3, geom=REF), space_layout("V", 3))
    mat.rows[7] = dict(mat.rows[3])
    assert first_dependent_row(mat) == 7


def test_dual_basis_biorthogonal():
    lay = space_layout("V", 3)
    dofs = local_dofs("V", 3, geom=REF)
    inv = dual_basis("V", 3, geom=REF)
    prod = dof_matrix(dofs, lay).to_fmpq() * inv
    n = lay.size
    assert prod == flint.fmpq_mat(n, n, [int(i == j) for i in range(n) for j in range(n)])


def test_interior_shape_functions_have_no_normal_trace():
    lay = space_layout("V", 3)
    dofs = local_dofs("V", 3, geom=REF)
    inv = dual_basis("V", 3, geom=REF)
    interior = [j for j, d in enumerate(dofs) if d.kind == "interior_moment"]
    assert interior
    for i in range(4):
        rows = dot_normal_rows(lay, i, REF).to_fmpq()
        for j in interior:
            col = flint.fmpq_mat(lay.size, 1, [inv[r, j] for r in range(lay.size)])
            assert all(x == 0 for x in (rows * col).entries())


def test_q_vertex_shape_function_is_nodal():
    lay = space_layout("Q", 7)
    dofs = local_dofs("Q", 7, geom=REF)
    inv = dual_basis("Q", 7, geom=REF)
    j = next(j for j, d in enumerate(dofs) if d.kind == "vertex_derivative" and d.label == ("value", 1))
    vertex = dofs[j].entity[1][0]
    f = lay.field_of([Fraction(int(inv[r, j].p), int(inv[r, j].q)) for r in range(lay.size)])
    for v in range(4):
        pt = [int(i == v) for i in range(4)]
        assert [p.evaluate(pt) for p in f.entries] == [int(v == vertex and c == 1) for c in range(3)]


# ---------------------------------------------------------------------------
# global spaces


@pytest.mark.parametrize("kind", ["single_tet", "two_tet", "cube6"])
@pytest.mark.parametrize("space, kk", [("U", 7), ("Sigma", 7), ("V", 6), ("Q", 7)])
def test_global_dimension_formulas(kind, space, kk):
    m = generate_mesh(kind)
    sp = assemble_space(space, kk, m)
    assert sp.dim == dimension_formula(space, 7, m.counts)


def test_single_tet_dims():
    m = generate_mesh("single_tet")
    dims = [assemble_space(s, k, m).dim for s, k in (("U", 7), ("Sigma", 7), ("V", 6), ("Q", 7), ("Vhat", 6))]
    assert dims == [220, 720, 672, 168, 672]


def test_element_maps_injective(two_tet):
    for s, k in (("U", 7), ("Sigma", 7), ("V", 6), ("Q", 7)):
        sp = assemble_space(s, k, two_tet)
        assert all(len(set(gl)) == len(gl) for gl in sp.elem_dofs)


def _random_coeffs(space, seed):
    rng = random.Random(seed)
    return [Fraction(rng.randint(-9, 9), rng.randint(1, 5)) for _ in range(space.dim)]


@pytest.mark.parametrize("space_id, k", [("Sigma", 7), ("V", 6), ("U", 7), ("Q", 7)])
def test_conformity_across_interior_face(two_tet, space_id, k):
    sp = assemble_space(space_id, k, two_tet)
    face = two_tet.interior_faces()[0]
    normal = two_tet.face_frames[face].normal
    coeffs = _random_coeffs(sp, 3)
    traces = []
    for t in two_tet.face_tets[face]:
        f = sp.layout.field_of(element_vector(sp, t, coeffs))
        geom, tet = two_tet.geoms[t], two_tet.tets[t]
        if space_id == "Sigma":
            parts = matrix_cross_normal(f, normal).entries
        elif space_id == "V":
            parts = matrix_dot_vector(f, normal).entries
        elif space_id == "U":
            parts = f.entries + cart_gradient(f, geom).entries
        else:
            parts = f.entries
        traces.append([face_restriction(p, tet, face) for p in parts])
    same = all(a.equals(b) for a, b in zip(*traces))
    if space_id == "Q":
        assert not same  # only vertex values are shared
        for v in face:
            vals = []
            for t in two_tet.face_tets[face]:
                f = sp.layout.field_of(element_vector(sp, t, coeffs))
                pt = [int(w == v) for w in two_tet.tets[t]]
                vals.append([p.evaluate(pt) for p in f.entries])
            assert vals[0] == vals[1]
    else:
        assert same


@pytest.mark.parametrize("space_id, k", [("Sigma", 7), ("U", 7), ("V", 6), ("Q", 7)])
def test_interpolation_idempotent(two_tet, space_id, k):
    sp = assemble_space(space_id, k, two_tet)
    coeffs = _random_coeffs(sp, 5)
    vecs = [element_vector(sp, t, coeffs) for t in range(len(two_tet.tets))]
    vals, resid = sp.interpolate_exact(vecs)
    assert resid == 0 and vals == coeffs


def test_affine_functions_are_in_u(two_tet):
    from ggfem.complex import p1_interpolants

    U = assemble_space("U", 7, two_tet)
    assert len(p1_interpolants(U)) == 4
