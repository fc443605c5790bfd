"""Exact linear algebra over the rationals.

Dense rational elimination is far too slow at the sizes needed here, so the
heavy lifting is done modulo word-size primes with ``python-flint`` and
turned into proofs:

* ``rank_p(A) <= rank_Q(A)`` whenever no denominator of ``A`` is divisible by
  ``p`` (reduction is a ring map, minors can only vanish).
* an upper bound comes from an exactly verified kernel (``A @ K == 0`` in
  integer arithmetic) or from ``min(rows, cols)``.

A rank is reported as *proven* only when both bounds meet.  A small
pure-Python Bareiss elimination is kept as an independent reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import lcm

import flint
import numpy as np

from .errors import SingularSystemError

# Primes just below 2^61 and 2^62; nmod_mat works with any modulus < 2^64.
PRIMES = (2305843009213693951, 4611686018427387847, 2305843009213693921)


def _entries_as_fractions(row):
    return [x if isinstance(x, Fraction) else Fraction(x) for x in row]


class SparseRows:
    """Row-major sparse rational matrix built incrementally from dicts.

    Each row is a ``{column: Fraction}`` dict.  Conversions to flint and
    numpy types are provided; integer conversions scale every row by the
    lcm of its denominators, which preserves rank and row space.
    """

    def __init__(self, ncols, rows=None):
        self.ncols = ncols
        self.rows = list(rows) if rows else []

    @property
    def nrows(self):
        return len(self.rows)

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    def append(self, row):
        self.rows.append({c: v for c, v in row.items() if v})

    def extend(self, other):
        if other.ncols != self.ncols:
            raise ValueError("column counts differ")
        self.rows.extend(other.rows)

    def row_scales(self):
        return [lcm(1, *(v.denominator for v in r.values())) for r in self.rows]

    def to_fmpz(self, scaled=True):
        """Integer matrix whose rows are the rows of self times their denominators."""
        flat = [0] * (self.nrows * self.ncols)
        for i, r in enumerate(self.rows):
            s = lcm(1, *(v.denominator for v in r.values())) if scaled else 1
            base = i * self.ncols
            for c, v in r.items():
                q = v * s
                if q.denominator != 1:
                    raise ValueError("row not integral after scaling")
                flat[base + c] = q.numerator
        return flint.fmpz_mat(self.nrows, self.ncols, flat)

    def to_fmpq(self):
        flat = [0] * (self.nrows * self.ncols)
        for i, r in enumerate(self.rows):
            base = i * self.ncols
            for c, v in r.items():
                flat[base + c] = flint.fmpq(v.numerator, v.denominator)
        return flint.fmpq_mat(self.nrows, self.ncols, flat)

    def to_nmod(self, p):
        flat = [0] * (self.nrows * self.ncols)
        for i, r in enumerate(self.rows):
            base = i * self.ncols
            for c, v in r.items():
                if v.denominator % p == 0:
                    raise ZeroDivisionError("denominator divisible by the prime")
                flat[base + c] = v.numerator * pow(v.denominator, -1, p) % p
        return flint.nmod_mat(self.nrows, self.ncols, flat, p)

    def to_dense(self):
        out = np.zeros(self.shape)
        for i, r in enumerate(self.rows):
            for c, v in r.items():
                out[i, c] = float(v)
        return out

    def to_lists(self):
        out = [[Fraction(0)] * self.ncols for _ in range(self.nrows)]
        for i, r in enumerate(self.rows):
            for c, v in r.items():
                out[i][c] = v
        return out

    @classmethod
    def from_lists(cls, rows, ncols=None):
        if ncols is None:
            ncols = len(rows[0]) if rows else 0
        out = cls(ncols)
        for r in rows:
            out.append({c: Fraction(v) for c, v in enumerate(r) if v})
        return out

    def transpose(self):
        out = SparseRows(self.nrows, [dict() for _ in range(self.ncols)])
        for i, r in enumerate(self.rows):
            for c, v in r.items():
                out.rows[c][i] = v
        return out

    def matmul_rows(self, other):
        """self @ other for ``other`` a SparseRows with other.nrows == self.ncols."""
        if other.nrows != self.ncols:
            raise ValueError("shape mismatch")
        out = SparseRows(other.ncols)
        for r in self.rows:
            acc = {}
            for k, v in r.items():
                for c, w in other.rows[k].items():
                    acc[c] = acc.get(c, 0) + v * w
            out.append(acc)
        return out

    def is_zero(self):
        return all(not r for r in self.rows)


# ---------------------------------------------------------------------------
# modular reductions of flint matrices


def fmpz_to_nmod(m, p):
    return flint.nmod_mat(m, p)


def fmpq_to_nmod(m, p):
    """Reduce a rational matrix mod p (raises if a denominator is divisible by p)."""
    num, den = m.numer_denom()
    den = int(den)
    if den % p == 0:
        raise ZeroDivisionError("common denominator divisible by the prime")
    return flint.nmod_mat(num, p) * flint.nmod(pow(den, -1, p), p)


def to_nmod(m, p):
    if isinstance(m, flint.nmod_mat):
        return m
    if isinstance(m, SparseRows):
        return m.to_nmod(p)
    if isinstance(m, flint.fmpz_mat):
        return fmpz_to_nmod(m, p)
    if isinstance(m, flint.fmpq_mat):
        return fmpq_to_nmod(m, p)
    raise TypeError(f"cannot reduce {type(m).__name__}")


def rank_mod(m, p=PRIMES[0]):
    """Rank of the reduction mod p: a lower bound for the rank over Q."""
    m = to_nmod(m, p)
    if m.nrows() == 0 or m.ncols() == 0:
        return 0
    return m.rank()


def fmpq_to_float(m):
    vals = [int(x.p) / int(x.q) for x in m.entries()]
    return np.array(vals, dtype=float).reshape(m.nrows(), m.ncols())


def fmpz_is_zero(m):
    return m.nrows() == 0 or m.ncols() == 0 or m.is_zero()


# ---------------------------------------------------------------------------
# certified rank


@dataclass(frozen=True)
class RankCertificate:
    """Lower and upper bounds on a rank over Q; ``proven`` when they meet."""

    lower: int
    upper: int
    method: str = "modular"

    @property
    def proven(self):
        return self.lower == self.upper

    @property
    def value(self):
        if not self.proven:
            raise ValueError(f"rank not determined: {self.lower} <= r <= {self.upper}")
        return self.lower


def certified_rank(m, kernel=None, p=PRIMES[0]):
    """Rank of ``m`` (rows x cols) with bounds.

    ``kernel`` is an optional matrix whose columns are claimed to lie in the
    right kernel of ``m``; the claim is verified exactly before it is used to
    lower the upper bound.
    """
    rows, cols = _shape(m)
    lower = rank_mod(m, p)
    upper = min(rows, cols)
    if kernel is not None:
        if not product_is_zero(m, kernel):
            raise ValueError("claimed kernel vectors are not in the kernel")
        upper = min(upper, cols - rank_mod(kernel, p))
    return RankCertificate(lower, upper)


def _shape(m):
    if isinstance(m, SparseRows):
        return m.shape
    return (m.nrows(), m.ncols())


def as_fmpz(m):
    """Integer matrix with the same row space (rows scaled by denominators)."""
    if isinstance(m, flint.fmpz_mat):
        return m
    if isinstance(m, SparseRows):
        return m.to_fmpz()
    if isinstance(m, flint.fmpq_mat):
        rows = [[Fraction(int(x.p), int(x.q)) for x in r] for r in m.tolist()]
        return SparseRows.from_lists(rows, m.ncols()).to_fmpz()
    raise TypeError(type(m).__name__)


def as_fmpz_columns(m):
    """Integer matrix with the same column space."""
    if isinstance(m, flint.fmpz_mat):
        return m
    if isinstance(m, SparseRows):
        return m.transpose().to_fmpz().transpose()
    if isinstance(m, flint.fmpq_mat):
        return as_fmpz(m.transpose()).transpose()
    raise TypeError(type(m).__name__)


def product_is_zero(a, b):
    """Exact test of ``a @ b == 0`` (row scaling of a, column scaling of b are harmless)."""
    za = as_fmpz(a)
    zb = as_fmpz_columns(b)
    if za.ncols() != zb.nrows():
        raise ValueError("shape mismatch in product")
    if za.nrows() == 0 or zb.ncols() == 0:
        return True
    return (za * zb).is_zero()


def det_nonzero_certified(m, p=PRIMES[0]):
    """True when det(m) mod p != 0, which proves det(m) != 0 over Q."""
    mm = to_nmod(m, p)
    if mm.nrows() != mm.ncols():
        raise ValueError("determinant of a non-square matrix")
    return int(mm.det()) != 0


def first_dependent_row(m, p=PRIMES[0]):
    """Index of the first row lying in the span of the previous rows (mod p), or None."""
    mm = to_nmod(m, p)
    rows = mm.tolist()
    basis = []  # list of (pivot, row) in echelon form
    for idx, r in enumerate(rows):
        v = [int(x) for x in r]
        for piv, b in basis:
            if v[piv]:
                f = v[piv]
                v = [(x - f * y) % p for x, y in zip(v, b)]
        nz = next((j for j, x in enumerate(v) if x), None)
        if nz is None:
            return idx
        inv = pow(v[nz], -1, p)
        basis.append((nz, [x * inv % p for x in v]))
    return None


def inverse_mod(m, p=PRIMES[0]):
    mm = to_nmod(m, p)
    if int(mm.det()) == 0:
        raise SingularSystemError("matrix is singular modulo the prime", first_dependent_row(mm, p))
    return mm.inv()


def solve_exact(a, b):
    """Solve ``a x = b`` over Q with p-adic lifting; ``a`` square."""
    aq = a if isinstance(a, flint.fmpq_mat) else (a.to_fmpq() if isinstance(a, SparseRows) else flint.fmpq_mat(a))
    bq = b if isinstance(b, flint.fmpq_mat) else (b.to_fmpq() if isinstance(b, SparseRows) else flint.fmpq_mat(b))
    try:
        return aq.solve(bq, algorithm="dixon")
    except ZeroDivisionError as exc:
        raise SingularSystemError("singular system", first_dependent_row(aq)) from exc


# ---------------------------------------------------------------------------
# reference elimination (independent oracle for small cases)


def bareiss_rank(rows):
    """Rank over Q by fraction-free elimination on integer-scaled rows."""
    m = [_scale_to_int(r) for r in rows]
    return _bareiss(m)[0]


def bareiss_det(rows):
    """Exact determinant of a square rational matrix."""
    n = len(rows)
    if any(len(r) != n for r in rows):
        raise ValueError("determinant of a non-square matrix")
    fr = [_entries_as_fractions(r) for r in rows]
    den = 1
    for r in fr:
        den = lcm(den, *(x.denominator for x in r))
    m = [[int(x * den) for x in r] for r in fr]
    rank, det = _bareiss(m, want_det=True)
    return Fraction(det, den**n) if rank == n else Fraction(0)


def _scale_to_int(row):
    row = _entries_as_fractions(row)
    d = lcm(1, *(x.denominator for x in row))
    return [int(x * d) for x in row]


def _bareiss(m, want_det=False):
    m = [list(r) for r in m]
    nrows = len(m)
    ncols = len(m[0]) if m else 0
    prev = 1
    sign = 1
    r = 0
    for c in range(ncols):
        piv = next((i for i in range(r, nrows) if m[i][c] != 0), None)
        if piv is None:
            if want_det:
                return r, 0
            continue
        if piv != r:
            m[r], m[piv] = m[piv], m[r]
            sign = -sign
        for i in range(r + 1, nrows):
            for j in range(c + 1, ncols):
                m[i][j] = (m[i][j] * m[r][c] - m[i][c] * m[r][j]) // prev
            m[i][c] = 0
        prev = m[r][c]
        r += 1
        if r == nrows:
            break
    return r, sign * prev if want_det else None
