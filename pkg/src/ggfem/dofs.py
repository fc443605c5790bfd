"""Degrees of freedom, unisolvence, shape functions and global spaces.

Every degree of freedom is a row vector acting on the element's coefficient
vector (see :mod:`ggfem.forms`).  Functionals attached to a vertex, edge or
face are built only from global data (Cartesian derivatives, canonical
frames, test monomials in the globally sorted entity coordinates), so the two
elements sharing an entity produce the same functional and the global space
is obtained by identifying DOF keys.

Moments are scaled: the edge length, face area and 6|K| factors are
dropped.  The scaling is a fixed positive number per entity, identical from
every neighbour, so spaces and unisolvence are unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import flint
import numpy as np

from . import forms
from .errors import DegreeError, SingularSystemError
from .exact import (PRIMES, SparseRows, det_nonzero_certified, first_dependent_row, fmpq_to_float, rank_mod,
                    solve_exact)
from .forms import COMPONENTS, Layout, entry_weights
from .local_spaces import bubble_space
from .poly import dim_poly, monomials, reference_geom

SPACE_IDS = ("U", "Sigma", "V", "Q", "Vhat")


def space_degree(space_id, k):
    """Polynomial degree of the shape functions for the space's own parameter ``k``."""
    if space_id == "U":
        return k + 2
    if space_id == "Q":
        return k - 2
    return k


def space_layout(space_id, k):
    vs = {"U": "R", "Sigma": "S", "V": "T", "Q": "R3", "Vhat": "T"}[space_id]
    return Layout(vs, space_degree(space_id, k))


def check_range(space_id, k):
    ok = {"U": k >= 7, "Sigma": k >= 5, "V": k >= 3, "Q": k - 2 >= 1, "Vhat": k >= 0}[space_id]
    if not ok:
        need = {"U": "k >= 7", "Sigma": "k >= 5", "V": "k >= 3", "Q": "k - 2 >= 1", "Vhat": "k >= 0"}[space_id]
        raise DegreeError(f"{space_id} requires {need}, got k = {k}")


@dataclass(frozen=True)
class DofFunctional:
    kind: str  # vertex_derivative, edge_moment, face_moment, interior_moment, coefficient
    entity: tuple  # (dim, global entity tuple)
    label: tuple  # description within the entity, identical across neighbours
    row: dict = field(compare=False, hash=False)

    @property
    def key(self):
        return self.entity + self.label


# ---------------------------------------------------------------------------
# element context


@dataclass(frozen=True)
class ElementContext:
    """Global data one element needs to build its functionals."""

    geom: object
    gverts: tuple  # global vertex index of each local vertex
    edge_frames: dict  # sorted global edge -> EdgeFrame
    face_frames: dict  # sorted global face -> FaceFrame
    index: int = 0

    @classmethod
    def of(cls, mesh, t):
        tet = mesh.tets[t]
        return cls(mesh.geoms[t], tet, {e: mesh.edge_frames[e] for e in mesh.tet_edges[t]},
                   {f: mesh.face_frames[f] for f in mesh.tet_faces[t]}, t)

    @classmethod
    def standalone(cls, geom):
        """Context for an isolated element with global vertex labels 0..3."""
        from .mesh import EdgeFrame, FaceFrame

        ef = {(a, b): EdgeFrame.build(a, b, geom.vertices[a], geom.vertices[b]) for a in range(4) for b in range(a + 1, 4)}
        ff = {}
        for i in range(4):
            f = tuple(v for v in range(4) if v != i)
            ff[f] = FaceFrame.build(f, [geom.vertices[v] for v in f])
        return cls(geom, (0, 1, 2, 3), ef, ff, 0)

    def local_of(self, gv):
        return self.gverts.index(gv)

    def edges(self):
        for a in range(4):
            for b in range(a + 1, 4):
                ga, gb = sorted((self.gverts[a], self.gverts[b]))
                yield (ga, gb), (self.local_of(ga), self.local_of(gb))

    def faces(self):
        for i in range(4):
            g = tuple(sorted(self.gverts[j] for j in range(4) if j != i))
            yield g, tuple(self.local_of(v) for v in g)


def _moment_on(lay, keep, test_vec, test_deg):
    """Scalar functional p -> int_sub p * q on the sub-simplex ``keep`` (local vertices, ordered)."""
    nsub = len(keep)
    row = forms.moment_row(lay.degree, test_vec, test_deg, nsub)
    return forms.lift_rows(row, forms.restrict_to_vertices(lay.degree, keep))


def _unit(d, nvars, exps):
    v = [0] * dim_poly(d, nvars)
    v[monomials(d, nvars).index(exps)] = 1
    return v


def _edge_tests(j):
    """s^j with s the coordinate of the higher-index vertex: exponents (0, j) on (low, high)."""
    return _unit(j, 2, (0, j))


def _vertex_dofs(ctx, lay, order, comps=None):
    out = []
    comps = range(lay.ncomp) if comps is None else comps
    betas = forms.all_betas(order)
    for v in sorted(range(4), key=lambda v: ctx.gverts[v]):
        for comp in comps:
            for beta in betas:
                row = forms.offset_row(forms.vertex_jet_row(lay.degree, v, beta, ctx.geom), comp * lay.nmono)
                out.append(DofFunctional("vertex_derivative", (0, (ctx.gverts[v],)), ("jet", comp, beta), row))
    return out


def _matrix_inner_rows(lay, p_vec, p_layout):
    """Functional sigma -> int sigma : p for a matrix field p (coefficient vector)."""
    pw = entry_weights(p_layout.space)
    out = {}
    for r in range(3):
        for c in range(3):
            prc = [0] * p_layout.nmono
            for comp, w in pw[(r, c)]:
                sl = p_vec[comp * p_layout.nmono:(comp + 1) * p_layout.nmono]
                for i, x in enumerate(sl):
                    if x:
                        prc[i] += x * w
            if not any(prc):
                continue
            scal = forms.moment_row(lay.degree, prc, p_layout.degree, 4)
            out = forms.add_rows(out, forms.entry_row(lay, r, c, scal))
    return out


def _dense(row, n):
    v = [0] * n
    for c, x in row.items():
        v[c] = x
    return v


def independent_rows(rows, p=PRIMES[0]):
    """Indices of a maximal linearly independent subset of rows (greedy, mod p).

    Rows independent mod p are independent over Q, so the selection is safe.
    """
    m = rows.to_nmod(p).transpose()
    rr, rank = m.rref()
    piv = []
    r = 0
    lst = rr.tolist()
    for row in lst[:rank]:
        for j, x in enumerate(row):
            if int(x):
                piv.append(j)
                break
    return piv


_BUBBLE_CACHE = {}


def _independent_bubbles(space, k, geom):
    b = bubble_space(space, k, geom)
    idx = independent_rows(b.vectors)
    return [_dense(b.vectors.rows[i], b.layout.size) for i in idx], b.layout


def local_dofs_ctx(space_id, k, ctx):
    """Ordered DOF functionals of one element."""
    check_range(space_id, k)
    lay = space_layout(space_id, k)
    geom = ctx.geom
    dofs = []
    if space_id == "Sigma":
        dofs += _vertex_dofs(ctx, lay, 2)
        for e, (la, lb) in ctx.edges():
            for comp in range(6):
                for j in range(k - 5):
                    scal = _moment_on(lay, (la, lb), _edge_tests(j), j)
                    dofs.append(DofFunctional("edge_moment", (1, e), ("mom", comp, j), forms.offset_row(scal, comp * lay.nmono)))
        q_deg = k - 3
        excl = forms.pure_powers(q_deg, 3)
        for f, loc in ctx.faces():
            fr = ctx.face_frames[f]
            pairs = ((fr.tau1, fr.tau1), (fr.tau1, fr.tau2), (fr.tau2, fr.tau2), (fr.tau1, fr.normal), (fr.tau2, fr.normal))
            for fam, (u, w) in enumerate(pairs):
                combo = {(r, c): u[r] * w[c] for r in range(3) for c in range(3)}
                for q in monomials(q_deg, 3):
                    if q in excl:
                        continue
                    scal = _moment_on(lay, loc, _unit(q_deg, 3, q), q_deg)
                    dofs.append(DofFunctional("face_moment", (2, f), ("frame", fam, q), forms.combo_row(lay, combo, scal)))
        vecs, blay = _independent_bubbles("sigma_star", k, geom)
        for i, p in enumerate(vecs):
            dofs.append(DofFunctional("interior_moment", (3, (ctx.index,)), ("bubble", i), _matrix_inner_rows(lay, p, blay)))
    elif space_id == "V":
        dofs += _vertex_dofs(ctx, lay, 1)
        excl = forms.near_pure_powers(k, 3)
        for f, loc in ctx.faces():
            nvec = ctx.face_frames[f].normal
            for r in range(3):
                combo = {(r, c): nvec[c] for c in range(3)}
                for q in monomials(k, 3):
                    if q in excl:
                        continue
                    scal = _moment_on(lay, loc, _unit(k, 3, q), k)
                    dofs.append(DofFunctional("face_moment", (2, f), ("vn", r, q), forms.combo_row(lay, combo, scal)))
        vecs, blay = _independent_bubbles("v_star", k, geom)
        for i, p in enumerate(vecs):
            dofs.append(DofFunctional("interior_moment", (3, (ctx.index,)), ("bubble", i), _matrix_inner_rows(lay, p, blay)))
    elif space_id == "U":
        d = lay.degree
        dofs += _vertex_dofs(ctx, lay, 4)
        for e, (la, lb) in ctx.edges():
            fr = ctx.edge_frames[e]
            wn = forms.cartesian_weights(geom, fr.n)
            wm = forms.cartesian_weights(geom, fr.m)
            for j in range(k - 7):  # moments of u, P_{k-8}
                dofs.append(DofFunctional("edge_moment", (1, e), ("u", j), _moment_on(lay, (la, lb), _edge_tests(j), j)))
            lay1 = Layout("R", d - 1)
            for name, w in (("un", wn), ("um", wm)):
                for j in range(k - 6):  # P_{k-7}
                    base = _moment_on(lay1, (la, lb), _edge_tests(j), j)
                    dofs.append(DofFunctional("edge_moment", (1, e), (name, j), forms.pullback_derivative(base, d, w)))
            lay2 = Layout("R", d - 2)
            for name, (w1, w2) in (("unn", (wn, wn)), ("unm", (wn, wm)), ("umm", (wm, wm))):
                for j in range(k - 5):  # P_{k-6}
                    base = _moment_on(lay2, (la, lb), _edge_tests(j), j)
                    row = forms.pullback_derivative(forms.pullback_derivative(base, d - 1, w2), d, w1)
                    dofs.append(DofFunctional("edge_moment", (1, e), (name, j), row))
        for f, loc in ctx.faces():
            wn = forms.cartesian_weights(geom, ctx.face_frames[f].normal)
            qd = k - 7
            for q in monomials(qd, 3) if qd >= 0 else ():
                dofs.append(DofFunctional("face_moment", (2, f), ("u", q), _moment_on(lay, loc, _unit(qd, 3, q), qd)))
            qd = k - 5
            lay1 = Layout("R", d - 1)
            for q in monomials(qd, 3):
                base = _moment_on(lay1, loc, _unit(qd, 3, q), qd)
                dofs.append(DofFunctional("face_moment", (2, f), ("un", q), forms.pullback_derivative(base, d, wn)))
        qd = k - 6
        for q in monomials(qd, 4):
            row = forms.moment_row(d, _unit(qd, 4, q), qd, 4)
            dofs.append(DofFunctional("interior_moment", (3, (ctx.index,)), ("u", q), row))
    elif space_id == "Q":
        d = lay.degree
        for v in sorted(range(4), key=lambda v: ctx.gverts[v]):
            for comp in range(3):
                row = forms.offset_row(forms.vertex_jet_row(d, v, (0, 0, 0), geom), comp * lay.nmono)
                dofs.append(DofFunctional("vertex_derivative", (0, (ctx.gverts[v],)), ("value", comp), row))
        excl = forms.pure_powers(d, 4)
        for comp in range(3):
            for q in monomials(d, 4):
                if q in excl:
                    continue
                row = forms.offset_row(forms.moment_row(d, _unit(d, 4, q), d, 4), comp * lay.nmono)
                dofs.append(DofFunctional("interior_moment", (3, (ctx.index,)), ("q", comp, q), row))
    elif space_id == "Vhat":
        for i in range(lay.size):
            dofs.append(DofFunctional("coefficient", (3, (ctx.index,)), ("c", i), {i: Fraction(1)}))
    else:
        raise ValueError(f"unknown space {space_id!r}")
    return dofs


def local_dofs(space_id, k, element=0, mesh=None, geom=None):
    """DOF functionals of element ``element`` of ``mesh`` (or of a standalone ``geom``).

    With neither ``mesh`` nor ``geom`` the reference tetrahedron is used.
    """
    if mesh is None and geom is None:
        geom = reference_geom()
    ctx = ElementContext.of(mesh, element) if mesh is not None else ElementContext.standalone(geom)
    return local_dofs_ctx(space_id, k, ctx)


def dof_matrix(dofs, lay):
    return SparseRows(lay.size, [d.row for d in dofs])


@dataclass(frozen=True)
class UnisolvenceReport:
    space_id: str
    k: int
    size: int
    ndofs: int
    determinant_nonzero: bool
    condition_estimate: float
    failing_row: int | None = None

    def as_dict(self):
        return dict(space=self.space_id, k=self.k, size=self.size, ndofs=self.ndofs,
                    determinant_nonzero=self.determinant_nonzero, condition_estimate=self.condition_estimate,
                    failing_row=self.failing_row)


def unisolvence_check(space_id, k, element=0, mesh=None, geom=None, condition=True):
    """Exact nonsingularity of the DOF-by-coefficient matrix.

    A nonzero determinant modulo a prime proves the rational determinant is
    nonzero.  If the reduction is singular the first dependent row is
    reported (a modular zero could in principle be a coincidence, in which
    case the second prime is tried before failing).
    """
    lay = space_layout(space_id, k)
    dofs = local_dofs(space_id, k, element, mesh, geom)
    mat = dof_matrix(dofs, lay)
    square = mat.nrows == lay.size
    ok = square and any(det_nonzero_certified(mat, p) for p in PRIMES[:2])
    fail = None if ok or not square else first_dependent_row(mat)
    cond = float("nan")
    if condition and square:
        dense = mat.to_dense()
        dense /= np.abs(dense).max(axis=1, keepdims=True)
        cond = float(np.linalg.cond(dense))
    return UnisolvenceReport(space_id, k, lay.size, mat.nrows, ok, cond, fail)


# ---------------------------------------------------------------------------
# shape functions


def scaled_float_inverse(mat):
    """Float inverse of a DOF matrix, solving the row-equilibrated system."""
    dense = mat.to_dense() if isinstance(mat, SparseRows) else np.asarray(mat, float)
    s = np.abs(dense).max(axis=1)
    inv = np.linalg.inv(dense / s[:, None])
    return inv / s[None, :]


def dual_basis(space_id, k, element=0, mesh=None, geom=None, mode="exact"):
    """Shape functions: column j holds the coefficients of the field dual to DOF j."""
    lay = space_layout(space_id, k)
    mat = dof_matrix(local_dofs(space_id, k, element, mesh, geom), lay)
    if mode == "exact":
        ident = flint.fmpq_mat(lay.size, lay.size, [int(i == j) for i in range(lay.size) for j in range(lay.size)])
        return solve_exact(mat, ident)
    if mode == "float":
        return scaled_float_inverse(mat)
    raise ValueError(mode)


# ---------------------------------------------------------------------------
# global spaces

# Exact inverses keyed by DOF-matrix content: translated copies of an element
# (as in the refined cube meshes) share identical DOF matrices.
_EXACT_INVERSES = {}
_FLOAT_INVERSES = {}


def rows_key(rows):
    return (rows.ncols, tuple(tuple(sorted(r.items())) for r in rows.rows))


@dataclass
class GlobalSpace:
    space_id: str
    k: int
    mesh: object
    layout: Layout
    keys: list
    elem_dofs: list  # per element: global index of each local DOF
    elem_rows: list  # per element: SparseRows of local functionals
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self):
        return len(self.keys)

    @property
    def degree(self):
        return self.layout.degree

    def shape_float(self, t):
        key = ("float", t)
        if key not in self._cache:
            self._cache[key] = scaled_float_inverse(self.elem_rows[t])
        return self._cache[key]

    def shape_mod(self, t, p=PRIMES[0]):
        key = ("mod", p, t)
        if key not in self._cache:
            m = self.elem_rows[t].to_nmod(p)
            if int(m.det()) == 0:
                raise SingularSystemError(f"{self.space_id} DOF matrix singular on element {t}", first_dependent_row(m, p))
            self._cache[key] = m.inv()
        return self._cache[key]

    def shape_exact(self, t):
        key = ("exact", t)
        if key not in self._cache:
            content = self.content_key(t)
            if content not in _EXACT_INVERSES:
                n = self.layout.size
                ident = flint.fmpq_mat(n, n, [int(i == j) for i in range(n) for j in range(n)])
                _EXACT_INVERSES[content] = solve_exact(self.elem_rows[t], ident)
            self._cache[key] = _EXACT_INVERSES[content]
        return self._cache[key]

    def content_key(self, t):
        key = ("content", t)
        if key not in self._cache:
            self._cache[key] = rows_key(self.elem_rows[t])
        return self._cache[key]

    def shape_exact_float(self, t):
        """Exact shape functions rounded once to double precision."""
        content = self.content_key(t)
        if content not in _FLOAT_INVERSES:
            _FLOAT_INVERSES[content] = fmpq_to_float(self.shape_exact(t))
        return _FLOAT_INVERSES[content]

    def release_exact(self):
        """Drop cached rational inverses (they dominate memory on larger meshes)."""
        for key in [key for key in self._cache if key[0] == "exact"]:
            _EXACT_INVERSES.pop(self.content_key(key[1]), None)
            del self._cache[key]

    def shape(self, t, mode):
        if mode == "float":
            return self.shape_float(t)
        if mode == "exact":
            return self.shape_exact(t)
        if mode.startswith("mod"):
            return self.shape_mod(t, int(mode[3:]) if len(mode) > 3 else PRIMES[0])
        raise ValueError(mode)

    def owners(self):
        """Global DOF -> list of (element, local index)."""
        out = [[] for _ in range(self.dim)]
        for t, gl in enumerate(self.elem_dofs):
            for i, g in enumerate(gl):
                out[g].append((t, i))
        return out

    def element_coefficients(self, coeffs, t):
        """Float coefficient vector (layout basis) of a global function on element t."""
        loc = np.asarray(coeffs, float)[self.elem_dofs[t]]
        return self.shape_float(t) @ loc

    def interpolate_exact(self, field_vecs):
        """DOF values from exact per-element coefficient vectors (lists of Fractions).

        Returns (global values, max residual) where the residual measures the
        disagreement of shared DOFs between elements (zero for members).
        """
        vals = [None] * self.dim
        resid = Fraction(0)
        for t, rows in enumerate(self.elem_rows):
            vec = field_vecs[t]
            for i, r in enumerate(rows.rows):
                v = sum((x * vec[c] for c, x in r.items()), Fraction(0))
                g = self.elem_dofs[t][i]
                if vals[g] is None:
                    vals[g] = v
                else:
                    resid = max(resid, abs(vals[g] - v))
        return vals, resid


def assemble_space(space_id, k, mesh):
    check_range(space_id, k)
    lay = space_layout(space_id, k)
    per_elem = []
    keys = set()
    for t in range(len(mesh.tets)):
        dofs = local_dofs_ctx(space_id, k, ElementContext.of(mesh, t))
        if len(dofs) != lay.size:
            raise DegreeError(f"{space_id}: {len(dofs)} DOFs for a {lay.size}-dimensional space")
        per_elem.append(dofs)
        keys.update(d.key for d in dofs)
    keys = sorted(keys, key=_sort_key)
    index = {key: i for i, key in enumerate(keys)}
    elem_dofs = [[index[d.key] for d in dofs] for dofs in per_elem]
    elem_rows = [dof_matrix(dofs, lay) for dofs in per_elem]
    return GlobalSpace(space_id, k, mesh, lay, keys, elem_dofs, elem_rows)


def _sort_key(key):
    return (key[0], key[1], repr(key[2:]))


def dimension_formula(space_id, k, counts):
    """Closed-form global dimensions in terms of vertex/edge/face/tet counts."""
    V, E, F, T = counts["V"], counts["E"], counts["F"], counts["T"]
    if space_id == "U":
        return 35 * V + (6 * k - 34) * E + (k * k - 9 * k + 21) * F + (k - 3) * (k - 4) * (k - 5) // 6 * T
    if space_id == "Sigma":
        return 60 * V + 6 * (k - 5) * E + 5 * (k * k - 3 * k - 4) // 2 * F + (k**3 - 4 * k**2 + 5 * k - 14) * T
    if space_id == "V":  # V_{k-1,h} expressed with the complex index k
        return 32 * V + 3 * (k * k + k - 18) // 2 * F + (4 * k**3 - 6 * k**2 - 10 * k - 60) // 3 * T
    if space_id == "Q":
        return 3 * V + (k**3 - k - 24) // 2 * T
    if space_id == "Vhat":
        return 8 * dim_poly(k - 1, 4) * T
    raise ValueError(space_id)
