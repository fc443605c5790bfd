"""Exact polynomials in barycentric coordinates on a tetrahedron.

A :class:`BaryPoly` stores a sparse map ``exponents -> Fraction`` over the
barycentric coordinates ``lambda_0..lambda_{n-1}`` (``n = 4`` on a
tetrahedron, 3 on a face, 2 on an edge).  The representation is not unique
because the coordinates sum to one; :meth:`BaryPoly.homogenized` gives the
canonical form used for every equality test.

The field operators (gradient, Hessian, row-wise curl and div) use the chain
rule ``d/dx_c = sum_i (d lambda_i/dx_c) d/d lambda_i`` with the exact
gradients cached on a :class:`GeomCache`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial

from .errors import DegenerateGeometryError, DegreeError, ShapeMismatchError

MAX_DEGREE = 16
MAX_INTEGRATION_DEGREE = 20
FACTORIALS = tuple(factorial(n) for n in range(24))


@lru_cache(maxsize=None)
def monomials(d, nvars=4):
    """Exponent tuples of total degree exactly ``d``, lexicographically descending."""
    if d < 0:
        return ()
    out = []
    for head in range(d, -1, -1):
        if nvars == 1:
            return ((d,),)
        for tail in monomials(d - head, nvars - 1):
            out.append((head,) + tail)
    return tuple(out)


@lru_cache(maxsize=None)
def monomial_index(d, nvars=4):
    return {m: i for i, m in enumerate(monomials(d, nvars))}


def dim_poly(d, nvars=4):
    """dim P_d on an (nvars-1)-simplex, equal to the number of degree-d forms."""
    return comb(d + nvars - 1, nvars - 1) if d >= 0 else 0


def _as_fraction(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if hasattr(x, "p") and hasattr(x, "q"):  # flint.fmpq
        return Fraction(int(x.p), int(x.q))
    return Fraction(x)


@lru_cache(maxsize=None)
def _sum_power(m, nvars):
    """(lambda_0 + ... + lambda_{n-1})**m as {exponents: multinomial}."""
    out = {}
    for e in monomials(m, nvars):
        c = FACTORIALS[m] if m < len(FACTORIALS) else factorial(m)
        for a in e:
            c //= factorial(a)
        out[e] = c
    return out


class BaryPoly:
    """Sparse polynomial in barycentric coordinates with Fraction coefficients."""

    __slots__ = ("terms", "degree_bound", "nvars")

    def __init__(self, terms=None, degree_bound=None, nvars=4):
        clean = {}
        if terms:
            for e, c in terms.items():
                e = tuple(int(a) for a in e)
                if len(e) != nvars:
                    raise ValueError(f"exponent {e} does not have {nvars} entries")
                if min(e) < 0:
                    raise ValueError(f"negative exponent in {e}")
                c = _as_fraction(c)
                if c:
                    clean[e] = clean.get(e, 0) + c
                    if not clean[e]:
                        del clean[e]
        actual = max((sum(e) for e in clean), default=0)
        if degree_bound is None:
            degree_bound = actual
        if actual > degree_bound:
            raise DegreeError(f"term of degree {actual} exceeds degree bound {degree_bound}")
        if degree_bound > MAX_INTEGRATION_DEGREE:
            raise DegreeError(f"degree bound {degree_bound} exceeds cap {MAX_INTEGRATION_DEGREE}")
        self.terms = clean
        self.degree_bound = degree_bound
        self.nvars = nvars

    # -- constructors -------------------------------------------------------
    @classmethod
    def const(cls, c, nvars=4):
        return cls({(0,) * nvars: c}, 0, nvars)

    @classmethod
    def zero(cls, nvars=4, degree_bound=0):
        return cls({}, degree_bound, nvars)

    @classmethod
    def lam(cls, i, nvars=4):
        e = [0] * nvars
        e[i] = 1
        return cls({tuple(e): 1}, 1, nvars)

    @classmethod
    def monomial(cls, exps, coeff=1):
        exps = tuple(exps)
        return cls({exps: coeff}, sum(exps), len(exps))

    @classmethod
    def from_vector(cls, vec, d, nvars=4):
        """Inverse of :meth:`coeff_vector` (homogeneous coefficients of degree d)."""
        return cls({m: c for m, c in zip(monomials(d, nvars), vec) if c}, d, nvars)

    # -- arithmetic -----------------------------------------------------------
    def _check(self, other):
        if other.nvars != self.nvars:
            raise ValueError("polynomials live on simplices of different dimension")

    def __add__(self, other):
        if not isinstance(other, BaryPoly):
            other = BaryPoly.const(other, self.nvars)
        self._check(other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, 0) + c
        return BaryPoly(terms, max(self.degree_bound, other.degree_bound), self.nvars)

    __radd__ = __add__

    def __neg__(self):
        return BaryPoly({e: -c for e, c in self.terms.items()}, self.degree_bound, self.nvars)

    def __sub__(self, other):
        if not isinstance(other, BaryPoly):
            other = BaryPoly.const(other, self.nvars)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, BaryPoly):
            return self.scale(other)
        self._check(other)
        deg = self.degree_bound + other.degree_bound
        if deg > MAX_INTEGRATION_DEGREE:
            raise DegreeError(f"product degree {deg} exceeds cap {MAX_INTEGRATION_DEGREE}")
        terms = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms[e] = terms.get(e, 0) + c1 * c2
        return BaryPoly(terms, deg, self.nvars)

    __rmul__ = __mul__

    def scale(self, s):
        s = _as_fraction(s)
        return BaryPoly({e: c * s for e, c in self.terms.items()}, self.degree_bound, self.nvars)

    def __pow__(self, n):
        out = BaryPoly.const(1, self.nvars)
        for _ in range(n):
            out = out * self
        return out

    # -- queries --------------------------------------------------------------
    def degree(self):
        return max((sum(e) for e in self.terms), default=0)

    def is_syntactically_zero(self):
        return not self.terms

    def homogenized(self, d=None):
        """Canonical form: coefficients of the degree-``d`` form equal to self."""
        if d is None:
            d = self.degree_bound
        out = {}
        for e, c in self.terms.items():
            m = d - sum(e)
            if m < 0:
                raise DegreeError(f"cannot homogenize degree {sum(e)} term to degree {d}")
            for s, mult in _sum_power(m, self.nvars).items():
                key = tuple(a + b for a, b in zip(e, s))
                out[key] = out.get(key, 0) + c * mult
        return {e: c for e, c in out.items() if c}

    def coeff_vector(self, d=None):
        if d is None:
            d = self.degree_bound
        h = self.homogenized(d)
        return [h.get(m, Fraction(0)) for m in monomials(d, self.nvars)]

    def is_zero(self):
        return not self.homogenized(self.degree())

    def equals(self, other):
        if not isinstance(other, BaryPoly):
            other = BaryPoly.const(other, self.nvars)
        return (self - other).is_zero()

    def __eq__(self, other):
        if isinstance(other, (BaryPoly, int, Fraction)):
            return self.equals(other)
        return NotImplemented

    __hash__ = None

    def evaluate(self, bary):
        """Value at a point given by barycentric coordinates (any length-n sequence)."""
        bary = [_as_fraction(b) for b in bary]
        total = Fraction(0)
        for e, c in self.terms.items():
            v = c
            for b, a in zip(bary, e):
                if a:
                    v *= b**a
            total += v
        return total

    def diff(self, i):
        """Partial derivative with respect to lambda_i (treating the lambdas as free)."""
        terms = {}
        for e, c in self.terms.items():
            if e[i]:
                f = list(e)
                f[i] -= 1
                terms[tuple(f)] = c * e[i]
        return BaryPoly(terms, max(self.degree_bound - 1, 0), self.nvars)

    def restrict(self, drop):
        """Restriction to the sub-simplex where lambda_drop = 0 (drops that variable)."""
        keep = [j for j in range(self.nvars) if j != drop]
        terms = {tuple(e[j] for j in keep): c for e, c in self.terms.items() if e[drop] == 0}
        return BaryPoly(terms, self.degree_bound, self.nvars - 1)

    def __repr__(self):
        if not self.terms:
            return "BaryPoly(0)"
        parts = []
        for e, c in sorted(self.terms.items(), reverse=True):
            mono = "*".join(f"l{i}^{a}" if a > 1 else f"l{i}" for i, a in enumerate(e) if a)
            parts.append(f"{c}*{mono}" if mono else f"{c}")
        return "BaryPoly(" + " + ".join(parts) + ")"


def poly_arith(p, q, op):
    """Exact add/sub/mul of two polynomials, or scale of ``p`` by the scalar ``q``."""
    if op == "add":
        return p + q
    if op == "sub":
        return p - q
    if op == "mul":
        return p * q
    if op == "scale":
        return p.scale(q)
    raise ValueError(f"unknown op {op!r}")


# ---------------------------------------------------------------------------
# geometry


def _vsub(a, b):
    return tuple(x - y for x, y in zip(a, b))


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def _det3(c0, c1, c2):
    return _dot(c0, cross(c1, c2))


@dataclass(frozen=True)
class GeomCache:
    """Exact per-tetrahedron geometry.

    ``normals[i] = -grad_lambda[i]`` is an outward normal of face ``i`` (the
    face opposite vertex ``i``), deliberately left unnormalised so everything
    stays rational.  ``tangents[(i, j)] = x_j - x_i``.
    """

    vertices: tuple
    grad_lambda: tuple
    normals: tuple
    normal_sq: tuple
    tangents: dict = field(compare=False)
    volume: Fraction

    @classmethod
    def from_vertices(cls, vertices):
        verts = tuple(tuple(_as_fraction(c) for c in v) for v in vertices)
        if len(verts) != 4 or any(len(v) != 3 for v in verts):
            raise ValueError("a tetrahedron needs four 3D vertices")
        e1, e2, e3 = (_vsub(verts[i], verts[0]) for i in (1, 2, 3))
        det = _det3(e1, e2, e3)
        if det == 0:
            raise DegenerateGeometryError("tetrahedron has zero volume")
        # rows of J^{-1} where J = [e1 e2 e3] are cross products / det
        g1 = tuple(c / det for c in cross(e2, e3))
        g2 = tuple(c / det for c in cross(e3, e1))
        g3 = tuple(c / det for c in cross(e1, e2))
        g0 = tuple(-(a + b + c) for a, b, c in zip(g1, g2, g3))
        grads = (g0, g1, g2, g3)
        normals = tuple(tuple(-c for c in g) for g in grads)
        tangents = {(i, j): _vsub(verts[j], verts[i]) for i in range(4) for j in range(4) if i != j}
        return cls(
            vertices=verts,
            grad_lambda=grads,
            normals=normals,
            normal_sq=tuple(_dot(n, n) for n in normals),
            tangents=tangents,
            volume=det / 6,
        )

    @property
    def abs_volume(self):
        return abs(self.volume)

    def bary(self, x):
        x = tuple(_as_fraction(c) for c in x)
        lam = [Fraction(0)] * 4
        for i in (1, 2, 3):
            lam[i] = _dot(self.grad_lambda[i], _vsub(x, self.vertices[0]))
        lam[0] = 1 - lam[1] - lam[2] - lam[3]
        return tuple(lam)

    def point(self, bary):
        return tuple(sum(_as_fraction(b) * v[c] for b, v in zip(bary, self.vertices)) for c in range(3))

    def face_vertices(self, i):
        return tuple(j for j in range(4) if j != i)


REFERENCE_VERTICES = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1))


def reference_geom():
    return GeomCache.from_vertices(REFERENCE_VERTICES)


# ---------------------------------------------------------------------------
# tensor fields

VALUE_SPACES = {"R": "scalar", "R3": "vec3", "M": "mat3", "S": "mat3", "T": "mat3"}
_SHAPE_LEN = {"scalar": 1, "vec3": 3, "mat3": 9}


@dataclass(frozen=True)
class TensorField:
    """Scalar, vector or 3x3 matrix field; matrix entries stored row-major."""

    shape: str
    value_space: str
    entries: tuple

    def __post_init__(self):
        if self.shape not in _SHAPE_LEN:
            raise ValueError(f"unknown shape {self.shape!r}")
        if VALUE_SPACES.get(self.value_space) != self.shape:
            raise ValueError(f"value space {self.value_space!r} incompatible with shape {self.shape!r}")
        if len(self.entries) != _SHAPE_LEN[self.shape]:
            raise ValueError("wrong number of entries")
        if self.value_space == "S":
            for i in range(3):
                for j in range(i + 1, 3):
                    if not self.entries[3 * i + j].equals(self.entries[3 * j + i]):
                        raise ValueError("field declared symmetric is not symmetric")
        if self.value_space == "T":
            if not (self.entries[0] + self.entries[4] + self.entries[8]).is_zero():
                raise ValueError("field declared traceless has nonzero trace")

    @property
    def nvars(self):
        return self.entries[0].nvars

    def __getitem__(self, idx):
        if isinstance(idx, tuple):
            i, j = idx
            return self.entries[3 * i + j]
        return self.entries[idx]

    def rows(self):
        if self.shape != "mat3":
            raise ShapeMismatchError("rows() needs a matrix field")
        return [self.entries[3 * i : 3 * i + 3] for i in range(3)]

    def is_zero(self):
        return all(e.is_zero() for e in self.entries)

    def equals(self, other):
        return self.shape == other.shape and all(a.equals(b) for a, b in zip(self.entries, other.entries))

    def map(self, fn, value_space=None):
        return TensorField(self.shape, value_space or self.value_space, tuple(fn(e) for e in self.entries))

    @classmethod
    def scalar(cls, p):
        return cls("scalar", "R", (p,))

    @classmethod
    def vector(cls, comps):
        return cls("vec3", "R3", tuple(comps))

    @classmethod
    def matrix(cls, rows, value_space="M"):
        return cls("mat3", value_space, tuple(p for row in rows for p in row))

    @classmethod
    def constant_matrix(cls, mat, value_space="M", nvars=4):
        return cls.matrix([[BaryPoly.const(mat[i][j], nvars) for j in range(3)] for i in range(3)], value_space)


def _require_nondegenerate(geom):
    if geom.volume == 0:
        raise DegenerateGeometryError("degenerate geometry")


def _partial(p, c, geom):
    out = BaryPoly.zero(p.nvars, max(p.degree_bound - 1, 0))
    for i in range(4):
        g = geom.grad_lambda[i][c]
        if g:
            out = out + p.diff(i).scale(g)
    return out


def cart_gradient(p, geom):
    """Cartesian gradient of a scalar polynomial as a vec3 field."""
    _require_nondegenerate(geom)
    if isinstance(p, TensorField):
        if p.shape != "scalar":
            raise ShapeMismatchError("gradient needs a scalar field")
        p = p.entries[0]
    return TensorField.vector([_partial(p, c, geom) for c in range(3)])


def gradgrad(u, geom):
    """Hessian of a scalar polynomial; symmetric by construction."""
    _require_nondegenerate(geom)
    if isinstance(u, TensorField):
        u = u.entries[0]
    first = [_partial(u, c, geom) for c in range(3)]
    ent = [[None] * 3 for _ in range(3)]
    for i in range(3):
        for j in range(i, 3):
            ent[i][j] = ent[j][i] = _partial(first[i], j, geom)
    return TensorField.matrix(ent, "S")


def _require_matrix(f):
    if not isinstance(f, TensorField) or f.shape != "mat3":
        raise ShapeMismatchError("operator needs a 3x3 matrix field")


def curl_rowwise(sigma, geom):
    """Row-wise curl of a matrix field."""
    _require_matrix(sigma)
    _require_nondegenerate(geom)
    out = []
    for w in sigma.rows():
        d = lambda comp, c: _partial(w[comp], c, geom)  # noqa: E731
        out.append([d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)])
    return TensorField.matrix(out, "M")


def div_rowwise(v, geom):
    """Row-wise divergence of a matrix field, as a vec3 field."""
    _require_matrix(v)
    _require_nondegenerate(geom)
    return TensorField.vector([sum((_partial(w[c], c, geom) for c in range(3)), BaryPoly.zero(v.nvars)) for w in v.rows()])


def deviatoric(m):
    """Traceless part ``M - tr(M)/3 I``."""
    _require_matrix(m)
    tr = (m[0, 0] + m[1, 1] + m[2, 2]).scale(Fraction(1, 3))
    rows = [[m[i, j] - tr if i == j else m[i, j] for j in range(3)] for i in range(3)]
    return TensorField.matrix(rows, "T")


def matrix_cross_normal(sigma, n):
    """Row-wise cross product ``[m_1 x n, m_2 x n, m_3 x n]^T``."""
    _require_matrix(sigma)
    n = tuple(_as_fraction(c) for c in n)
    rows = []
    for m in sigma.rows():
        rows.append([
            m[1].scale(n[2]) - m[2].scale(n[1]),
            m[2].scale(n[0]) - m[0].scale(n[2]),
            m[0].scale(n[1]) - m[1].scale(n[0]),
        ])
    return TensorField.matrix(rows, "M")


def matrix_dot_vector(sigma, n):
    _require_matrix(sigma)
    n = tuple(_as_fraction(c) for c in n)
    return TensorField.vector([sum((m[c].scale(n[c]) for c in range(3)), BaryPoly.zero(sigma.nvars)) for m in sigma.rows()])


def monomial_integral(e):
    """Integral of prod lambda^e over a simplex, divided by (n-1)! * measure."""
    num = 1
    for a in e:
        num *= FACTORIALS[a]
    return Fraction(num, FACTORIALS[sum(e) + len(e) - 1])


def integrate_tet(p, geom):
    """Exact integral over the tetrahedron: 6|K| a!b!c!d!/(a+b+c+d+3)! per term."""
    _require_nondegenerate(geom)
    if isinstance(p, TensorField):
        p = p.entries[0]
    if p.degree() > MAX_INTEGRATION_DEGREE:
        raise DegreeError("integrand degree exceeds integration cap")
    scale = 6 * geom.abs_volume
    return sum((c * monomial_integral(e) for e, c in p.terms.items()), Fraction(0)) * scale


def trace_on_face(field_, face_index, geom, kind="restrict"):
    """Restriction of a field to face ``face_index`` in that face's barycentric coordinates.

    ``kind`` is ``restrict`` (plain restriction), ``cross_normal`` (sigma x n)
    or ``dot_normal`` (sigma n), with ``n`` the face's outward normal.
    """
    if not 0 <= face_index <= 3:
        raise ValueError("face index must be in 0..3")
    if kind == "cross_normal":
        field_ = matrix_cross_normal(field_, geom.normals[face_index])
    elif kind == "dot_normal":
        field_ = matrix_dot_vector(field_, geom.normals[face_index])
    elif kind != "restrict":
        raise ValueError(f"unknown trace kind {kind!r}")
    vs = "M" if field_.value_space in ("S", "T") else field_.value_space
    return TensorField(field_.shape, vs, tuple(e.restrict(face_index) for e in field_.entries))


def random_rational_tet(rng, lo=-4, hi=4, den=3):
    """Random nondegenerate tetrahedron with small rational coordinates."""
    while True:
        verts = [tuple(Fraction(rng.randint(lo * den, hi * den), den) for _ in range(3)) for _ in range(4)]
        try:
            g = GeomCache.from_vertices(verts)
        except DegenerateGeometryError:
            continue
        if g.volume > 0:
            return g
        verts[1], verts[2] = verts[2], verts[1]
        return GeomCache.from_vertices(verts)


def all_multi_indices(order, dim=3):
    """Multi-indices beta with |beta| == order, ordered as in :func:`monomials`."""
    return monomials(order, dim)


def multi_indices_up_to(order, dim=3):
    return tuple(itertools.chain.from_iterable(monomials(m, dim) for m in range(order + 1)))
