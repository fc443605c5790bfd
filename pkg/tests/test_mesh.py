import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ggfem.errors import DegenerateGeometryError, MeshError
from ggfem.mesh import (
    SHIPPED_MESHES,
    FaceFrame,
    build_mesh,
    generate_mesh,
    load_mesh,
    mesh_io,
    parse_mesh,
    read_mesh,
    write_mesh,
)


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def _euler_oracle(tets):
    """Count sub-simplices directly from the tet list."""
    verts = {v for t in tets for v in t}
    edges = {frozenset(e) for t in tets for e in itertools.combinations(t, 2)}
    faces = {frozenset(f) for t in tets for f in itertools.combinations(t, 3)}
    return len(verts), len(edges), len(faces), len(tets)


@pytest.mark.parametrize("kind, counts", [
    ("single_tet", (4, 6, 4, 1)),
    ("two_tet", (5, 9, 7, 2)),
    ("cube6", (8, 19, 18, 6)),
    ("cube6_refined(2)", (27, 98, 120, 48)),
])
def test_counts(kind, counts):
    m = generate_mesh(kind)
    c = m.counts
    assert (c["V"], c["E"], c["F"], c["T"]) == counts
    assert (c["V"], c["E"], c["F"], c["T"]) == _euler_oracle(m.tets)
    assert m.euler == 1


def test_cube6_shares_main_diagonal():
    m = generate_mesh("cube6")
    lo = m.vertices.index((0, 0, 0))
    hi = m.vertices.index((1, 1, 1))
    assert all(lo in t and hi in t for t in m.tets)


@pytest.mark.parametrize("kind", SHIPPED_MESHES + ("cube6_refined(3)",))
def test_generated_meshes_are_conforming(kind):
    m = generate_mesh(kind)
    assert all(len(ts) in (1, 2) for ts in m.face_tets.values())
    if kind.startswith("cube"):
        assert sum(g.abs_volume for g in m.geoms) == 1
    assert m.euler == 1


@pytest.mark.parametrize("kind", ["cube7", "cube6_refined(4)", "cube6_refined(x)", "cube6_refined2"])
def test_unsupported_kinds(kind):
    with pytest.raises(MeshError):
        generate_mesh(kind)


@pytest.mark.parametrize("kind", SHIPPED_MESHES)
def test_edge_frames_orthogonal(kind):
    m = generate_mesh(kind)
    for e, fr in m.edge_frames.items():
        assert e[0] < e[1]
        assert _dot(fr.tangent, fr.n) == 0 and _dot(fr.tangent, fr.m) == 0 and _dot(fr.n, fr.m) == 0
        assert fr.tangent == tuple(b - a for a, b in zip(m.vertices[e[0]], m.vertices[e[1]]))


@pytest.mark.parametrize("kind", ["two_tet", "cube6"])
def test_face_frames_identical_from_both_sides(kind):
    m = generate_mesh(kind)
    for f in m.interior_faces():
        frames = []
        for t in m.face_tets[f]:
            local = [v for v in m.tets[t] if v in f]
            verts = sorted(local)
            frames.append(FaceFrame.build(verts, [m.vertices[v] for v in verts]))
        assert frames[0] == frames[1] == m.face_frames[f]
        fr = frames[0]
        assert _dot(fr.normal, fr.tau1) == 0 and _dot(fr.normal, fr.tau2) == 0
        assert fr.tau1 == tuple(b - a for a, b in zip(m.vertices[f[0]], m.vertices[f[1]]))


@pytest.mark.parametrize("kind", SHIPPED_MESHES)
def test_outward_normals(kind):
    m = generate_mesh(kind)
    for g in m.geoms:
        for i in range(4):
            bc = [sum(g.vertices[j][c] for j in range(4) if j != i) / 3 for c in range(3)]
            assert _dot(g.normals[i], [a - b for a, b in zip(g.vertices[i], bc)]) < 0


# ---------------------------------------------------------------------------
# input validation and file IO


def test_degenerate_tet_is_named():
    verts = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0))
    with pytest.raises(DegenerateGeometryError, match="tet 0"):
        build_mesh(verts, [(0, 1, 2, 3)])


def test_nonconforming_face():
    verts = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, -1), (1, 1, 1))
    with pytest.raises(MeshError, match="shared by 3"):
        build_mesh(verts, [(0, 1, 2, 3), (0, 1, 2, 4), (0, 1, 2, 5)])


@pytest.mark.parametrize("kind", SHIPPED_MESHES)
def test_round_trip(kind, tmp_path):
    m = generate_mesh(kind)
    path = tmp_path / "m.ggmesh"
    write_mesh(m, path)
    back = read_mesh(path)
    assert back.vertices == m.vertices and back.tets == m.tets
    assert mesh_io(path, "read").tets == m.tets


@given(st.lists(st.tuples(*[st.fractions(-3, 3, max_denominator=9)] * 3), min_size=4, max_size=4, unique=True))
@settings(max_examples=40, deadline=None)
def test_round_trip_rational_coordinates(verts):
    try:
        m = build_mesh(verts, [(0, 1, 2, 3)])
    except DegenerateGeometryError:
        return
    text = "\n".join(["ggmesh 1", "vertices 4"] + [" ".join(f"{c.numerator}/{c.denominator}" for c in v) for v in
                                                   m.vertices] + ["tets 1", "0 1 2 3"])
    back = parse_mesh(text)
    assert back.vertices == tuple(tuple(Fraction(c) for c in v) for v in verts)


GOOD = "ggmesh 1\n# reference\nvertices 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\ntets 1\n0 1 2 3\n"


@pytest.mark.parametrize("text, match", [
    (GOOD.replace("0 1 2 3", "0 1 2 99"), "vertex 99.*out of range"),
    (GOOD.replace("0 0 1\n", "1 1 0\n"), "degenerate"),
    (GOOD.replace("ggmesh 1", "ggmesh 2"), "header"),
    (GOOD.replace("1 0 0", "1/0 0 0"), "cannot parse rational"),
    (GOOD.replace("0 1 0", "0 1"), "3 coordinates"),
    (GOOD.replace("tets 1", "tets 2"), "expected 2 tets"),
    (GOOD + "junk\n", "trailing"),
    ("", "empty"),
])
def test_parse_errors(text, match):
    with pytest.raises((MeshError, DegenerateGeometryError), match=match):
        parse_mesh(text)


def test_parse_error_reports_line():
    with pytest.raises(MeshError) as exc:
        parse_mesh(GOOD.replace("0 1 2 3", "0 1 2 99"))
    assert exc.value.line == 9


def test_load_mesh_dispatch(tmp_path):
    assert load_mesh("cube6").counts["T"] == 6
    path = tmp_path / "x.ggmesh"
    path.write_text(GOOD)
    assert load_mesh(str(path)).counts["T"] == 1
    with pytest.raises(MeshError, match="not found"):
        load_mesh(str(tmp_path / "missing.ggmesh"))
