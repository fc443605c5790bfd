"""Local polynomial spaces, bubble spaces and their characterisations.

Every space is represented by a spanning set of coefficient vectors in a
:class:`~ggfem.forms.Layout` (possibly redundant; dimensions are ranks) or
by a constraint system whose kernel is the space.  Span equalities are
decided with certified modular ranks (see :mod:`ggfem.exact`):

``span(A) = ker(C)``  iff  ``C A^T = 0`` exactly and ``rank A = n - rank C``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

from . import forms
from .errors import DegenerateGeometryError, DegreeError
from .exact import SparseRows, as_fmpz, product_is_zero, rank_mod
from .forms import COMPONENTS, Layout
from .poly import GeomCache, cross, dim_poly, monomial_index, monomials

SPACE_OF = {"sigma": "S", "sigma_star": "S", "v": "T", "v_star": "T"}
MIN_DEGREE = {"sigma": 4, "sigma_star": 4, "v": 3, "v_star": 3}


@dataclass
class LocalBasis:
    """Spanning set of a local space: rows of ``vectors`` are coefficient vectors."""

    layout: Layout
    vectors: SparseRows
    geom: GeomCache | None = None
    name: str = ""

    @property
    def count(self):
        return self.vectors.nrows

    def rank(self):
        return rank_mod(self.vectors)

    def fields(self):
        return [self.layout.field_of(self.dense_row(i)) for i in range(self.count)]

    def dense_row(self, i):
        v = [Fraction(0)] * self.layout.size
        for c, x in self.vectors.rows[i].items():
            v[c] = x
        return v


@dataclass
class ConstraintSystem:
    """Linear functionals on a layout; the described space is their common kernel."""

    layout: Layout
    rows: SparseRows
    geom: GeomCache | None = None
    name: str = ""
    families: dict = field(default_factory=dict)

    def rank(self):
        return rank_mod(self.rows)

    def kernel_dim(self):
        """Upper bound n - rank_p(C) on dim ker; equals it whenever rank_p is exact."""
        return self.layout.size - self.rank()

    def kernel_basis(self):
        """Exact rational kernel basis (rows) via flint's integer nullspace."""
        z = as_fmpz(self.rows)
        ns, nullity = z.nullspace()
        out = SparseRows(self.layout.size)
        for j in range(nullity):
            out.append({i: Fraction(int(ns[i, j])) for i in range(ns.nrows()) if ns[i, j] != 0})
        return out


# ---------------------------------------------------------------------------
# helpers producing coefficient vectors


def _tensor(layout, form_vec, mat):
    """Coefficient vector (dict) of the scalar form times a constant matrix."""
    out = {}
    if layout.space in ("S", "T"):
        if layout.space == "S" and any(mat[r][c] != mat[c][r] for r in range(3) for c in range(3)):
            raise ValueError("matrix is not symmetric")
        if layout.space == "T" and mat[0][0] + mat[1][1] + mat[2][2] != 0:
            raise ValueError("matrix is not traceless")
        comps = COMPONENTS[layout.space]
        for k, (r, c) in enumerate(comps):
            w = mat[r][c]
            if w:
                for i, x in form_vec.items():
                    out[k * layout.nmono + i] = x * w
        return out
    raise ValueError(f"unsupported layout {layout.space}")


def outer(a, b):
    return [[a[r] * b[c] for c in range(3)] for r in range(3)]


def sym_outer(a, b):
    return [[a[r] * b[c] + b[r] * a[c] for c in range(3)] for r in range(3)]


def _bubble_times(factor_vars, q_exps_list, k):
    """Forms prod(lambda_v for v in factor_vars) * lambda^q for each q (degree k total)."""
    idx = monomial_index(k, 4)
    out = []
    for q in q_exps_list:
        e = list(q)
        for v in factor_vars:
            e[v] += 1
        out.append({idx[tuple(e)]: Fraction(1)})
    return out


def _lift_face_exps(face_exps, face_vertices):
    e = [0, 0, 0, 0]
    for v, a in zip(face_vertices, face_exps):
        e[v] = a
    return tuple(e)


# ---------------------------------------------------------------------------
# operations


def monomial_basis(k, value_space, geom=None):
    """Canonical basis of P_k(K; X) (unit coefficient vectors)."""
    if k < 0:
        raise DegreeError("degree must be non-negative")
    lay = Layout(value_space, k)
    vecs = SparseRows(lay.size, [{i: Fraction(1)} for i in range(lay.size)])
    return LocalBasis(lay, vecs, geom, f"P_{k}({value_space})")


def face_scalar_space(i, k, variant="full", geom=None, vertices=None):
    """Degree-k forms in the barycentric coordinates of face ``i``.

    ``variant`` is ``full``, ``vanish_vertices`` (zero at the three face
    vertices) or ``("vanish_two_vertices", a, b)`` with face-local positions.
    The basis consists of monomials, so vanishing at a vertex amounts to
    dropping the corresponding pure power.
    """
    if k < 0:
        return LocalBasis(Layout("R", 0, 3), SparseRows(1), geom, "empty")
    lay = Layout("R", k, 3)
    excl = set()
    if variant == "vanish_vertices":
        excl = forms.pure_powers(k, 3)
    elif isinstance(variant, tuple) and variant[0] == "vanish_two_vertices":
        excl = {tuple(k if j == p else 0 for j in range(3)) for p in variant[1:]}
    elif variant != "full":
        raise ValueError(f"unknown variant {variant!r}")
    vecs = SparseRows(lay.size)
    for j, m in enumerate(monomials(k, 3)):
        if m not in excl:
            vecs.append({j: Fraction(1)})
    return LocalBasis(lay, vecs, geom, f"P_{k}^({i},{variant})")


def _require_degree(space, k):
    if k < MIN_DEGREE[space]:
        raise DegreeError(f"k >= {MIN_DEGREE[space]} required for {space} bubbles")


def sym_normal_basis(geom):
    """The six symmetric matrices n_i n_i^T (i = 0..3), sym(n_1 n_2^T), sym(n_1 n_3^T)."""
    n = geom.normals
    return [outer(n[i], n[i]) for i in range(4)] + [sym_outer(n[1], n[2]), sym_outer(n[1], n[3])]


def traceless_basis(geom):
    """The eight matrices n_i t^T with t running over two edges of face i."""
    out = []
    for i in range(4):
        j, l, m = (v for v in range(4) if v != i)
        out.append(outer(geom.normals[i], geom.tangents[(j, l)]))
        out.append(outer(geom.normals[i], geom.tangents[(j, m)]))
    return out


def bubble_space(space, k, geom):
    """Spanning set of Sigma_{K,k,b}, Sigma*_{K,k,b}, V_{K,k,b} or V*_{K,k,b}."""
    _require_degree(space, k)
    lay = Layout(SPACE_OF[space], k)
    vecs = SparseRows(lay.size)
    n = geom.normals
    if space in ("sigma", "sigma_star"):
        for i in range(4):
            fv = tuple(v for v in range(4) if v != i)
            excl = forms.pure_powers(k - 3, 3) if space == "sigma_star" else set()
            qs = [_lift_face_exps(q, fv) for q in monomials(k - 3, 3) if q not in excl]
            for form in _bubble_times(fv, qs, k):
                vecs.append(_tensor(lay, form, outer(n[i], n[i])))
        nb = dim_poly(k, 4)
        for comp in range(6):
            for form in _bubble_times((0, 1, 2, 3), monomials(k - 4, 4), k):
                vecs.append({comp * nb + j: x for j, x in form.items()})
    else:
        for i in range(4):
            for j, l in itertools.combinations([v for v in range(4) if v != i], 2):
                excl = set()
                if space == "v_star":
                    excl = {tuple(k - 2 if t == s else 0 for t in range(4)) for s in (j, l)}
                qs = [q for q in monomials(k - 2, 4) if q not in excl]
                mat = outer(n[i], geom.tangents[(j, l)])
                for form in _bubble_times((j, l), qs, k):
                    vecs.append(_tensor(lay, form, mat))
    return LocalBasis(lay, vecs, geom, f"{space}_bubble_{k}")


def cross_normal_rows(lay, i, geom):
    """Coefficients of (sigma x n_i) restricted to face i, one row per entry and face monomial."""
    nvec = geom.normals[i]
    pairs = forms.restriction_map(lay.degree, i)
    out = SparseRows(lay.size)
    for r in range(3):
        for s in range(3):
            combo = {}
            for a, b, sign in forms._CURL_CROSS[s]:
                combo[(r, a)] = combo.get((r, a), 0) + sign * nvec[b]
            for sub, full in pairs:
                out.append(forms.combo_row(lay, combo, {full: 1}))
    return out


def dot_normal_rows(lay, i, geom, normal=None):
    """Coefficients of (v n_i) restricted to face i."""
    nvec = geom.normals[i] if normal is None else normal
    pairs = forms.restriction_map(lay.degree, i)
    out = SparseRows(lay.size)
    for r in range(3):
        combo = {(r, c): nvec[c] for c in range(3)}
        for sub, full in pairs:
            out.append(forms.combo_row(lay, combo, {full: 1}))
    return out


def vertex_jet_rows(lay, geom, orders):
    """D^beta of every component at every vertex, for |beta| in ``orders``."""
    out = SparseRows(lay.size)
    betas = [b for m in orders for b in monomials(m, 3)]
    for v in range(4):
        for comp in range(lay.ncomp):
            for beta in betas:
                row = forms.vertex_jet_row(lay.degree, v, beta, geom)
                out.append(forms.offset_row(row, comp * lay.nmono))
    return out


def trace_kernel(space, k, geom):
    """Constraint system whose kernel is the boundary-trace-free subspace.

    ``sigma_full``: sigma x n = 0 on the boundary; ``sigma_star`` adds
    D^alpha sigma(x_i) = 0, |alpha| <= 2.  ``v_full``: v n = 0; ``v_star``
    adds grad v(x_i) = 0.
    """
    if k < 1:
        raise DegreeError("k >= 1 required")
    base = space.split("_")[0]
    lay = Layout("S" if base == "sigma" else "T", k)
    rows = SparseRows(lay.size)
    fam = {}
    for i in range(4):
        part = cross_normal_rows(lay, i, geom) if base == "sigma" else dot_normal_rows(lay, i, geom)
        fam[f"face{i}"] = (rows.nrows, rows.nrows + part.nrows)
        rows.extend(part)
    if space.endswith("star"):
        part = vertex_jet_rows(lay, geom, (0, 1, 2) if base == "sigma" else (1,))
        fam["vertex"] = (rows.nrows, rows.nrows + part.nrows)
        rows.extend(part)
    return ConstraintSystem(lay, rows, geom, f"{space}_trace_kernel_{k}", fam)


@dataclass(frozen=True)
class SpanReport:
    equal: bool
    dim_a: int
    dim_b: int
    dim_intersection: int
    inclusion: bool
    proven: bool

    def as_dict(self):
        return {
            "equal": self.equal,
            "dim_a": self.dim_a,
            "dim_b": self.dim_b,
            "dim_intersection": self.dim_intersection,
            "inclusion_exact": self.inclusion,
            "proven": self.proven,
        }


def verify_span_equality(a, b):
    """Compare span(a) with ker(b).

    Inclusion ``b a^T = 0`` is checked in exact integer arithmetic.  With it,
    ``rank_p(a) <= dim span(a) <= dim ker(b) <= n - rank_p(b)``, so equality is
    proven once the outer terms agree.  The intersection dimension is
    ``rank(a) - rank(b a^T)``, with ranks taken mod p.
    """
    if a.layout != b.layout:
        raise ValueError("spaces live in different layouts")
    n = a.layout.size
    ra = a.rank()
    rb = b.rank()
    dim_b = n - rb
    inclusion = product_is_zero(b.rows, a.vectors.transpose())
    if inclusion:
        inter = ra
    else:
        prod = b.rows.matmul_rows(a.vectors.transpose())
        inter = ra - rank_mod(prod)
    equal = inclusion and ra == dim_b
    return SpanReport(equal, ra, dim_b, inter, inclusion, proven=equal)


def basis_lemma_check(lemma, geom):
    """Rank of the symmetric normal basis (expects 6) or the traceless basis (expects 8)."""
    if geom.volume == 0:
        raise DegenerateGeometryError("degenerate tetrahedron")
    mats = sym_normal_basis(geom) if lemma == "sym_normals" else traceless_basis(geom)
    rows = SparseRows.from_lists([[x for row in m for x in row] for m in mats], 9)
    return {"lemma": lemma, "count": len(mats), "rank": rank_mod(rows)}


def basis_lemma_check_vertices(lemma, vertices):
    """Like :func:`basis_lemma_check` but from raw vertices (reports degenerate input)."""
    return basis_lemma_check(lemma, GeomCache.from_vertices(vertices))


def q_perp_constraints(k, geom, with_vertices=False):
    """Constraints defining Q_k^perp (and R_k^perp when ``with_vertices``) on P_k(K; R^3).

    int q_i = 0 (three rows) and int x . q = 0 (one row); R^perp adds q(x_v) = 0.
    Moments are scaled by 1/(6|K|), which does not change the kernel.
    """
    lay = Layout("R3", k)
    rows = SparseRows(lay.size)
    one = [1]
    for comp in range(3):
        rows.append(forms.offset_row(forms.moment_row(k, one, 0, 4), comp * lay.nmono))
    xrow = {}
    for comp in range(3):
        coords = [geom.vertices[v][comp] for v in range(4)]  # x_c = sum_v x_c(v) lambda_v
        xrow = forms.add_rows(xrow, forms.offset_row(forms.moment_row(k, coords, 1, 4), comp * lay.nmono))
    rows.append(xrow)
    if with_vertices:
        rows.extend(vertex_jet_rows(lay, geom, (0,)))
    return ConstraintSystem(lay, rows, geom, "R_perp" if with_vertices else "Q_perp")


@dataclass(frozen=True)
class DivImageReport:
    space: str
    k: int
    image_dim: int
    target_dim: int
    inclusion: bool
    equal: bool

    def as_dict(self):
        return dict(space=self.space, k=self.k, image_dim=self.image_dim, target_dim=self.target_dim,
                    inclusion_exact=self.inclusion, equal=self.equal)


def div_image_check(space, k, geom):
    """div of the trace-free kernel versus Q_{k-1}^perp (``v_full``) or R_{k-1}^perp (``v_star``)."""
    if k < 3:
        raise DegreeError("k >= 3 required")
    cons = trace_kernel(space, k, geom)
    kern = cons.kernel_basis()
    div = forms.div_operator("T", k, geom)
    image = kern.matmul_rows(div.transpose())  # row j = div of kernel vector j
    target = q_perp_constraints(k - 1, geom, with_vertices=space.endswith("star"))
    image_dim = rank_mod(image)
    target_dim = target.kernel_dim()
    inclusion = product_is_zero(target.rows, image.transpose())
    return DivImageReport(space, k, image_dim, target_dim, inclusion, inclusion and image_dim == target_dim)


def bubble_dimension_formula(space, k):
    if space == "sigma_star":
        return k**3 - 4 * k**2 + 5 * k - 14
    if space == "v_star":
        return (4 * k**3 + 6 * k**2 - 10 * k - 72) // 3
    if space == "sigma":
        return 4 * dim_poly(k - 3, 3) + 6 * dim_poly(k - 4, 4)
    raise ValueError(space)


def q_perp_dimension(k, star=False):
    """3 dim P_k - 4, minus 12 vertex conditions for R_k^perp."""
    return 3 * dim_poly(k, 4) - 4 - (12 if star else 0)
