"""Coefficient-vector layer for polynomial fields of fixed degree.

A field of degree ``d`` with values in ``X`` is stored as the concatenation,
over the independent components of ``X``, of its homogeneous barycentric
coefficients (:func:`ggfem.poly.monomials` order).  This module provides the
layouts and builds the exact linear maps (derivatives, traces, vertex jets,
moments) as :class:`~ggfem.exact.SparseRows`, so large spanning sets and
constraint systems never go through symbolic polynomial objects.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache

from .exact import SparseRows
from .poly import FACTORIALS, BaryPoly, TensorField, dim_poly, monomial_index, monomials

# independent components and how full (r, c) entries are expressed in them
COMPONENTS = {
    "R": ((0, 0),),
    "R3": ((0, 0), (1, 0), (2, 0)),
    "S": ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)),
    "T": ((0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1)),
    "M": tuple((r, c) for r in range(3) for c in range(3)),
}


@lru_cache(maxsize=None)
def entry_weights(space):
    """Map full entry (r, c) -> tuple of (component index, weight)."""
    comps = COMPONENTS[space]
    out = {}
    if space == "R":
        return {(0, 0): ((0, 1),)}
    if space == "R3":
        return {(r, 0): ((r, 1),) for r in range(3)}
    for r in range(3):
        for c in range(3):
            if space == "S":
                out[(r, c)] = ((comps.index((min(r, c), max(r, c))), 1),)
            elif space == "T" and (r, c) == (2, 2):
                out[(r, c)] = ((0, -1), (4, -1))
            else:
                out[(r, c)] = ((comps.index((r, c)), 1),)
    return out


@dataclass(frozen=True)
class Layout:
    space: str
    degree: int
    nvars: int = 4

    @property
    def ncomp(self):
        return len(COMPONENTS[self.space])

    @cached_property
    def nmono(self):
        return dim_poly(self.degree, self.nvars)

    @property
    def size(self):
        return self.ncomp * self.nmono

    def col(self, comp, exps):
        return comp * self.nmono + monomial_index(self.degree, self.nvars)[exps]

    def comp_slice(self, comp):
        return slice(comp * self.nmono, (comp + 1) * self.nmono)

    # conversions between vectors and TensorFields
    def vector_of(self, field):
        """Coefficient vector (list of Fractions) of a TensorField or BaryPoly."""
        if isinstance(field, BaryPoly):
            field = TensorField.scalar(field)
        comps = COMPONENTS[self.space]
        out = []
        for r, c in comps:
            if field.shape == "scalar":
                p = field.entries[0]
            elif field.shape == "vec3":
                p = field.entries[r]
            else:
                p = field[r, c]
            out.extend(p.coeff_vector(self.degree))
        return out

    def field_of(self, vec):
        polys = [BaryPoly.from_vector(vec[self.comp_slice(i)], self.degree, self.nvars) for i in range(self.ncomp)]
        if self.space == "R":
            return TensorField.scalar(polys[0])
        if self.space == "R3":
            return TensorField.vector(polys)
        w = entry_weights(self.space)
        zero = BaryPoly.zero(self.nvars, self.degree)
        rows = []
        for r in range(3):
            row = []
            for c in range(3):
                acc = zero
                for comp, wt in w[(r, c)]:
                    acc = acc + polys[comp].scale(wt)
                row.append(acc)
            rows.append(row)
        return TensorField.matrix(rows, self.space)


# ---------------------------------------------------------------------------
# elementary maps on scalar forms


@lru_cache(maxsize=None)
def _deriv_pattern(d, nvars):
    """(row, col, var, multiplicity) for d/dlambda_var from degree d to d-1."""
    idx = monomial_index(d - 1, nvars)
    out = []
    for col, a in enumerate(monomials(d, nvars)):
        for i in range(nvars):
            if a[i]:
                b = list(a)
                b[i] -= 1
                out.append((idx[tuple(b)], col, i, a[i]))
    return tuple(out)


def directional_derivative(d, weights, nvars=4):
    """Matrix of sum_i weights[i] d/dlambda_i, degree d -> d-1 (dense dict rows)."""
    rows = [dict() for _ in range(dim_poly(d - 1, nvars))]
    for r, c, i, m in _deriv_pattern(d, nvars):
        w = weights[i]
        if w:
            rows[r][c] = rows[r].get(c, 0) + m * w
    return SparseRows(dim_poly(d, nvars), rows)


def cartesian_weights(geom, direction):
    """Weights w_i = direction . grad(lambda_i) turning a Cartesian derivative barycentric."""
    return tuple(sum(Fraction(a) * b for a, b in zip(direction, g)) for g in geom.grad_lambda)


def pullback_derivative(row, d, weights, nvars=4):
    """Given a functional on degree d-1 forms, return it composed with a derivative.

    ``(row . D)[alpha] = sum_i alpha_i w_i row[alpha - e_i]`` over degree-d ``alpha``.
    """
    out = {}
    for r, c, i, m in _deriv_pattern(d, nvars):
        v = row.get(r)
        if v and weights[i]:
            out[c] = out.get(c, 0) + v * m * weights[i]
    return out


@lru_cache(maxsize=None)
def _jet_expansion(beta, grads):
    """Coefficients C_gamma with D^beta = sum_gamma C_gamma d^gamma/dlambda^gamma."""
    poly = {(0, 0, 0, 0): Fraction(1)}
    for c, times in enumerate(beta):
        for _ in range(times):
            new = {}
            for g, v in poly.items():
                for i in range(4):
                    w = grads[i][c]
                    if w:
                        h = list(g)
                        h[i] += 1
                        h = tuple(h)
                        new[h] = new.get(h, 0) + v * w
            poly = new
    return poly


def vertex_jet_row(d, v, beta, geom):
    """Functional p -> D^beta p (x_v) on degree-d scalar forms (dict over monomial index).

    D^beta(lambda^alpha)(x_v) is nonzero only for alpha = gamma + (d - m) e_v,
    where it equals C_gamma * alpha! / (d - m)!.
    """
    m = sum(beta)
    if m > d:
        return {}
    idx = monomial_index(d, 4)
    out = {}
    for g, coef in _jet_expansion(tuple(beta), geom.grad_lambda).items():
        a = list(g)
        a[v] += d - m
        a = tuple(a)
        num = 1
        for x in a:
            num *= FACTORIALS[x]
        out[idx[a]] = out.get(idx[a], 0) + coef * Fraction(num, FACTORIALS[d - m])
    return {k: x for k, x in out.items() if x}


def restriction_map(d, drop, nvars=4):
    """List of (sub-simplex monomial index, full index) pairs for restriction."""
    sub = monomial_index(d, nvars - 1)
    pairs = []
    for col, a in enumerate(monomials(d, nvars)):
        if a[drop] == 0:
            pairs.append((sub[a[:drop] + a[drop + 1 :]], col))
    return pairs


def restrict_to_vertices(d, keep, nvars=4):
    """(sub index, full index) pairs restricting to the sub-simplex spanned by ``keep``.

    ``keep`` lists local vertex indices in the order that defines the
    sub-simplex coordinates.
    """
    sub = monomial_index(d, len(keep))
    pairs = []
    for col, a in enumerate(monomials(d, nvars)):
        if all(a[j] == 0 for j in range(nvars) if j not in keep):
            pairs.append((sub[tuple(a[j] for j in keep)], col))
    return pairs


@lru_cache(maxsize=None)
def product_integral_table(d, e, nvars):
    """T[a, b] = alpha! beta!-weighted simplex integral of lambda^(alpha+beta), unscaled.

    Equals int lambda^(alpha+beta) divided by (nvars-1)! * measure.
    """
    ma, mb = monomials(d, nvars), monomials(e, nvars)
    denom = FACTORIALS[d + e + nvars - 1]
    table = []
    for a in ma:
        row = []
        for b in mb:
            num = 1
            for x, y in zip(a, b):
                num *= FACTORIALS[x + y]
            row.append(Fraction(num, denom))
        table.append(row)
    return table


def moment_row(d, test_vec, e, nvars):
    """Functional p -> int p q / ((nvars-1)! measure) for q a degree-e form given by coefficients."""
    table = product_integral_table(d, e, nvars)
    out = {}
    nz = [(j, q) for j, q in enumerate(test_vec) if q]
    for i, trow in enumerate(table):
        s = sum(trow[j] * q for j, q in nz)
        if s:
            out[i] = s
    return out


def lift_rows(row, pairs):
    """Compose a functional on sub-simplex forms with a restriction map."""
    out = {}
    for s, full in pairs:
        v = row.get(s)
        if v:
            out[full] = v
    return out


def offset_row(row, offset, weight=1):
    return {offset + k: v * weight for k, v in row.items() if v * weight}


def add_rows(*rows):
    out = {}
    for r in rows:
        for k, v in r.items():
            out[k] = out.get(k, 0) + v
    return {k: v for k, v in out.items() if v}


def entry_row(layout, r, c, scalar_row):
    """Functional acting on entry (r, c) of a field in ``layout``, given as a scalar-form functional."""
    return add_rows(*(offset_row(scalar_row, comp * layout.nmono, w) for comp, w in entry_weights(layout.space)[(r, c)]))


def combo_row(layout, combo, scalar_row):
    """Functional on sum_(r,c) weight * field[r, c]; ``combo`` maps (r, c) -> weight."""
    parts = []
    for (r, c), w in combo.items():
        if w:
            parts.append({k: v * w for k, v in entry_row(layout, r, c, scalar_row).items()})
    return add_rows(*parts)


def homogeneous_monomial_vectors(d, nvars, exclude=()):
    """Unit coefficient vectors of the degree-d monomials not in ``exclude``."""
    out = []
    n = dim_poly(d, nvars)
    for i, m in enumerate(monomials(d, nvars)):
        if m in exclude:
            continue
        v = [0] * n
        v[i] = 1
        out.append(v)
    return out


def pure_powers(d, nvars):
    return {tuple(d if j == i else 0 for j in range(nvars)) for i in range(nvars)}


def near_pure_powers(d, nvars):
    """Monomials with some exponent >= d-1 (those not vanishing to first order at every vertex)."""
    return {m for m in monomials(d, nvars) if max(m) >= d - 1}


def multiply_forms(p, d, q, e, nvars=4):
    """Product of two coefficient vectors (degree d and e)."""
    out = [0] * dim_poly(d + e, nvars)
    idx = monomial_index(d + e, nvars)
    md, me = monomials(d, nvars), monomials(e, nvars)
    for i, a in enumerate(p):
        if not a:
            continue
        for j, b in enumerate(q):
            if b:
                out[idx[tuple(x + y for x, y in zip(md[i], me[j]))]] += a * b
    return out


def raise_degree(p, d, m, nvars=4):
    """Multiply a degree-d form by (sum lambda)^m."""
    if m == 0:
        return list(p)
    ones = [1] * dim_poly(1, nvars)
    out = list(p)
    for k in range(m):
        out = multiply_forms(out, d + k, ones, 1, nvars)
    return out


# ---------------------------------------------------------------------------
# differential operators between layouts


def partial_matrix(d, c, geom):
    """Cartesian d/dx_c on scalar forms, degree d -> d-1."""
    return directional_derivative(d, tuple(g[c] for g in geom.grad_lambda))


def _block_operator(out_layout, in_layout, terms):
    """Assemble sum over (out comp, in comp, weight, scalar matrix) into one matrix."""
    rows = [dict() for _ in range(out_layout.size)]
    for oc, ic, w, mat in terms:
        if not w:
            continue
        ro, co = oc * out_layout.nmono, ic * in_layout.nmono
        for i, r in enumerate(mat.rows):
            tgt = rows[ro + i]
            for j, v in r.items():
                tgt[co + j] = tgt.get(co + j, 0) + v * w
    return SparseRows(in_layout.size, [{k: v for k, v in r.items() if v} for r in rows])


def hessian_operator(d, geom):
    """gradgrad: scalar forms of degree d -> symmetric fields of degree d-2."""
    first = [partial_matrix(d, c, geom) for c in range(3)]
    second = [[first[b].__class__(first[b].ncols) for b in range(3)] for _ in range(3)]
    for a in range(3):
        pa = partial_matrix(d - 1, a, geom)
        for b in range(3):
            second[a][b] = pa.matmul_rows(first[b])
    out, inp = Layout("S", d - 2), Layout("R", d)
    terms = [(k, 0, 1, second[r][c]) for k, (r, c) in enumerate(COMPONENTS["S"])]
    return _block_operator(out, inp, terms)


# (w x n)_s = sum sign * w_a n_b
_CURL_CROSS = {0: ((1, 2, 1), (2, 1, -1)), 1: ((2, 0, 1), (0, 2, -1)), 2: ((0, 1, 1), (1, 0, -1))}
# (curl w)_s = sum sign * d_b w_a
_CURL = {0: ((2, 1, 1), (1, 2, -1)), 1: ((0, 2, 1), (2, 0, -1)), 2: ((1, 0, 1), (0, 1, -1))}


def curl_operator(in_space, d, geom, out_space="T"):
    """Row-wise curl from ``in_space`` fields of degree d to ``out_space`` fields of degree d-1.

    out[r][s] = sum over (entry column a, derivative b, sign) of sign * d_b in[r][a].
    The caller is responsible for the output actually lying in ``out_space``
    (see :func:`trace_of_operator`).
    """
    parts = [partial_matrix(d, c, geom) for c in range(3)]
    inp, out = Layout(in_space, d), Layout(out_space, d - 1)
    ew = entry_weights(in_space)
    terms = []
    for oc, (r, s) in enumerate(COMPONENTS[out_space]):
        for a, b, sign in _CURL[s]:
            for ic, w in ew[(r, a)]:
                terms.append((oc, ic, sign * w, parts[b]))
    return _block_operator(out, inp, terms)


def curl_trace_operator(in_space, d, geom):
    """Trace of the row-wise curl as a scalar-valued map (zero for symmetric inputs)."""
    parts = [partial_matrix(d, c, geom) for c in range(3)]
    inp, out = Layout(in_space, d), Layout("R", d - 1)
    ew = entry_weights(in_space)
    terms = []
    for r in range(3):
        for a, b, sign in _CURL[r]:
            for ic, w in ew[(r, a)]:
                terms.append((0, ic, sign * w, parts[b]))
    return _block_operator(out, inp, terms)


def div_operator(in_space, d, geom):
    """Row-wise divergence, matrix fields of degree d -> vector fields of degree d-1."""
    parts = [partial_matrix(d, c, geom) for c in range(3)]
    inp, out = Layout(in_space, d), Layout("R3", d - 1)
    ew = entry_weights(in_space)
    terms = []
    for r in range(3):
        for c in range(3):
            for ic, w in ew[(r, c)]:
                terms.append((r, ic, w, parts[c]))
    return _block_operator(out, inp, terms)


def all_betas(order):
    return tuple(itertools.chain.from_iterable(monomials(m, 3) for m in range(order + 1)))
