import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ggfem.errors import DegenerateGeometryError, DegreeError
from ggfem.exact import SparseRows, bareiss_rank, product_is_zero, rank_mod
from ggfem.local_spaces import (
    basis_lemma_check,
    basis_lemma_check_vertices,
    bubble_dimension_formula,
    bubble_space,
    div_image_check,
    face_scalar_space,
    monomial_basis,
    q_perp_constraints,
    q_perp_dimension,
    trace_kernel,
    verify_span_equality,
    vertex_jet_rows,
)
from ggfem.poly import dim_poly, random_rational_tet, reference_geom

REF = reference_geom()


def random_tet(seed):
    return random_rational_tet(random.Random(seed))


@pytest.mark.parametrize("k, space, dim", [(5, "S", 336), (3, "T", 160), (0, "R", 1), (7, "S", 720), (6, "T", 672)])
def test_monomial_basis_dims(k, space, dim):
    b = monomial_basis(k, space, REF)
    assert b.count == dim and b.rank() == dim


@pytest.mark.parametrize("k, variant, dim", [
    (2, "full", 6),
    (2, "vanish_vertices", 3),
    (3, ("vanish_two_vertices", 0, 1), 8),
    (0, ("vanish_two_vertices", 0, 1), 0),
])
def test_face_scalar_space(k, variant, dim):
    assert face_scalar_space(1, k, variant).rank() == dim


@pytest.mark.parametrize("space, k, dim", [("sigma_star", 4, 6), ("sigma_star", 5, 36), ("v_star", 3, 20),
                                           ("sigma", 4, 18)])
def test_bubble_dims(space, k, dim):
    assert bubble_space(space, k, REF).rank() == dim
    assert bubble_dimension_formula(space, k) == dim


@pytest.mark.parametrize("space, k", [("sigma", 3), ("sigma_star", 3), ("v", 2), ("v_star", 2)])
def test_bubble_degree_guard(space, k):
    with pytest.raises(DegreeError):
        bubble_space(space, k, REF)


@pytest.mark.parametrize("space, k, dim", [("sigma_full", 4, 18), ("sigma_star", 4, 6), ("v_star", 3, 20)])
def test_trace_kernel_dims(space, k, dim):
    assert trace_kernel(space, k, REF).kernel_dim() == dim


@pytest.mark.parametrize("bubble, kernel, k", [
    ("sigma", "sigma_full", 4),
    ("sigma", "sigma_full", 5),
    ("sigma_star", "sigma_star", 4),
    ("sigma_star", "sigma_star", 6),
    ("v", "v_full", 3),
    ("v", "v_full", 4),
    ("v_star", "v_star", 3),
    ("v_star", "v_star", 5),
])
def test_span_equalities(bubble, kernel, k):
    rep = verify_span_equality(bubble_space(bubble, k, REF), trace_kernel(kernel, k, REF))
    assert rep.equal and rep.proven and rep.dim_a == rep.dim_b == rep.dim_intersection


def test_star_kernel_is_strict_subspace():
    rep = verify_span_equality(bubble_space("sigma", 4, REF), trace_kernel("sigma_star", 4, REF))
    assert not rep.equal
    assert (rep.dim_a, rep.dim_b, rep.dim_intersection) == (18, 6, 6)


@given(st.integers(0, 10**6))
@settings(max_examples=8, deadline=None)
def test_sigma_bubble_characterisation_on_random_tets(seed):
    g = random_tet(seed)
    assert verify_span_equality(bubble_space("sigma", 4, g), trace_kernel("sigma_full", 4, g)).equal
    assert verify_span_equality(bubble_space("v_star", 3, g), trace_kernel("v_star", 3, g)).equal


@pytest.mark.parametrize("seed", [None, 1, 2])
def test_basis_lemmas(seed):
    g = REF if seed is None else random_tet(seed)
    assert basis_lemma_check("sym_normals", g)["rank"] == 6
    assert basis_lemma_check("traceless_nt", g)["rank"] == 8


def test_basis_lemma_on_coplanar_points():
    with pytest.raises(DegenerateGeometryError):
        basis_lemma_check_vertices("sym_normals", ((0, 0, 0), (1, 0, 0), (0, 1, 0), (2, 3, 0)))


@pytest.mark.parametrize("space, k, image", [("v_star", 3, 14), ("v_full", 3, 26), ("v_full", 4, 56),
                                             ("v_star", 4, 44)])
def test_div_images(space, k, image):
    rep = div_image_check(space, k, REF)
    assert rep.inclusion and rep.equal
    assert rep.image_dim == rep.target_dim == image == q_perp_dimension(k - 1, space == "v_star")


def test_q_perp_target_dims():
    assert q_perp_constraints(2, REF).kernel_dim() == 26
    assert q_perp_constraints(2, REF, with_vertices=True).kernel_dim() == 14


@pytest.mark.parametrize("k", [4, 5])
def test_sigma_trace_kernel_vanishes_to_first_order_at_vertices(k):
    kern = trace_kernel("sigma_full", k, REF)
    basis = kern.kernel_basis()
    jets = vertex_jet_rows(kern.layout, REF, (0, 1))
    assert product_is_zero(jets, basis.transpose())


@pytest.mark.parametrize("k", [3, 4])
def test_v_trace_kernel_vanishes_at_vertices(k):
    kern = trace_kernel("v_full", k, REF)
    jets = vertex_jet_rows(kern.layout, REF, (0,))
    assert product_is_zero(jets, kern.kernel_basis().transpose())


@pytest.mark.parametrize("k", [4, 5, 6])
def test_sigma_bubble_sum_is_direct(k):
    b = bubble_space("sigma", k, REF)
    nface = 4 * dim_poly(k - 3, 3)
    face = SparseRows(b.layout.size, b.vectors.rows[:nface])
    inner = SparseRows(b.layout.size, b.vectors.rows[nface:])
    assert rank_mod(face) + rank_mod(inner) == b.rank()


@pytest.mark.parametrize("space, k", [("sigma", 4), ("v_star", 3), ("v", 3)])
def test_modular_rank_agrees_with_bareiss(space, k):
    b = bubble_space(space, k, REF)
    assert bareiss_rank(b.vectors.to_lists()) == rank_mod(b.vectors)


def test_v_bubble_spanning_set_is_redundant():
    b = bubble_space("v", 4, REF)
    assert b.count > b.rank()
