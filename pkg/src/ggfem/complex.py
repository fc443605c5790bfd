"""Operator matrices of the discrete complex and its exactness checks.

For each element the local operator in DOF bases is
``L_K = D_Y  Op  D_X^{-1}`` where ``D`` holds the DOF functionals and ``Op``
acts on coefficient vectors.  A global row of the codomain must come out
the same from every element sharing that DOF (with zero contributions from
domain basis functions not supported there); this is the membership test
``op(X_h) subset Y_h``.

Exact mode keeps everything rational (ranks certified as described in
:mod:`ggfem.exact`); float mode uses sparse assembly and SVD ranks with an
explicit singular-value gap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction

import flint
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import forms
from .dofs import assemble_space, dimension_formula, space_layout
from .errors import DegreeError, MembershipError, ShapeMismatchError
from .exact import PRIMES, SparseRows, product_is_zero, rank_mod
from .forms import Layout

OPERATORS = {"gradgrad": ("U", "Sigma"), "curl": ("Sigma", "V"), "div": ("V", "Q"), "curl_hat": ("Sigma", "Vhat")}
DEGREE_DROP = {"gradgrad": 2, "curl": 1, "div": 1, "curl_hat": 1}

FLOAT_RANK_EPS = 1e-9
FLOAT_MIN_GAP = 1e3


def local_operator(op, domain_layout, geom):
    """Coefficient-space matrix of ``op`` on one element (SparseRows)."""
    d = domain_layout.degree
    if op == "gradgrad":
        return forms.hessian_operator(d, geom)
    if op in ("curl", "curl_hat"):
        tr = forms.curl_trace_operator("S", d, geom)
        if not tr.is_zero():
            raise MembershipError("curl of a symmetric field has nonzero trace")
        return forms.curl_operator("S", d, geom, "T")
    if op == "div":
        return forms.div_operator("T", d, geom)
    raise ValueError(f"unknown operator {op!r}")


@dataclass
class OperatorMatrix:
    op: str
    domain: object
    codomain: object
    mode: str
    matrix: object  # SparseRows (exact) or scipy.sparse.csr_matrix (float)
    membership_residual: float
    membership_ok: bool
    worst: tuple | None = None  # (codomain DOF key, element) of the largest mismatch

    @property
    def shape(self):
        return (self.codomain.dim, self.domain.dim)

    def dense(self):
        if self.mode == "exact":
            return self.matrix.to_dense()
        return self.matrix.toarray()


def _exact_local(op, X, Y, t):
    geom = X.mesh.geoms[t]
    opm = local_operator(op, X.layout, geom).to_fmpq()
    dy = Y.elem_rows[t].to_fmpq()
    return dy * opm * X.shape_exact(t)


def _float_local(op, X, Y, t):
    geom = X.mesh.geoms[t]
    opm = local_operator(op, X.layout, geom).to_dense()
    dy = Y.elem_rows[t].to_dense()
    return dy @ (opm @ X.shape_float(t))


def _mod_local(op, X, Y, t, p):
    geom = X.mesh.geoms[t]
    opm = local_operator(op, X.layout, geom).to_nmod(p)
    dy = Y.elem_rows[t].to_nmod(p)
    return dy * opm * X.shape_mod(t, p)


def _assemble_rows(X, Y, local, convert):
    """Global rows as dicts plus the largest disagreement between elements."""
    rows = [None] * Y.dim
    resid = 0
    worst = None
    for t in range(len(X.mesh.tets)):
        L = local(t)
        gx = X.elem_dofs[t]
        ents = L.entries()
        nloc = L.ncols()
        for j, gy in enumerate(Y.elem_dofs[t]):
            base = j * nloc
            r = {}
            for i in range(nloc):
                v = ents[base + i]
                if v != 0:
                    r[gx[i]] = convert(v)
            if rows[gy] is None:
                rows[gy] = r
            elif rows[gy] != r:
                diff = max(abs(rows[gy].get(c, 0) - r.get(c, 0)) for c in set(rows[gy]) | set(r))
                if not worst or diff > resid:
                    resid, worst = diff, (Y.keys[gy], t)
    return rows, resid, worst


def membership_mod(op, domain, codomain, p=PRIMES[0]):
    """Membership check in exact arithmetic modulo p; returns (ok, worst)."""
    _, _, worst = _assemble_rows(domain, codomain, lambda t: _mod_local(op, domain, codomain, t, p), int)
    return worst is None, worst


def operator_matrix(op, domain, codomain, mode="exact", tol=1e-8, membership="modular"):
    """Global matrix of ``op`` with the membership check; see module docstring.

    In float mode the rounding residual is always reported, but the
    membership verdict comes from an exact check modulo a 61-bit prime
    (``membership="modular"``) since element inverses can be ill conditioned.
    ``membership="float"`` judges by the relative residual against ``tol``.
    """
    if (domain.space_id, codomain.space_id) != OPERATORS[op]:
        raise ValueError(f"{op} maps {OPERATORS[op][0]} to {OPERATORS[op][1]}")
    if domain.layout.degree - DEGREE_DROP[op] != codomain.layout.degree:
        raise ShapeMismatchError(f"{op} lowers the degree by {DEGREE_DROP[op]}: domain degree "
                                 f"{domain.layout.degree}, codomain degree {codomain.layout.degree}")
    X, Y = domain, codomain
    ntet = len(X.mesh.tets)
    if mode == "exact":
        rows, resid, worst = _assemble_rows(X, Y, lambda t: _exact_local(op, X, Y, t),
                                            lambda v: Fraction(int(v.p), int(v.q)))
        mat = SparseRows(X.dim, rows)
        return OperatorMatrix(op, X, Y, mode, mat, float(resid), resid == 0, worst)
    if mode == "float":
        scale = 0.0
        locals_ = []
        for t in range(ntet):
            L = _float_local(op, X, Y, t)
            locals_.append(L)
            scale = max(scale, np.abs(L).max())
        ri, ci, vals = [], [], []
        seen = np.full(Y.dim, -1)
        for t in range(ntet):
            gy = np.asarray(Y.elem_dofs[t])
            first = seen[gy] < 0
            seen[gy[first]] = t
            L = locals_[t]
            gx = np.asarray(X.elem_dofs[t])
            jj, ii = np.nonzero(L[first])
            ri.append(gy[first][jj])
            ci.append(gx[ii])
            vals.append(L[first][jj, ii])
        G = sp.csr_matrix((np.concatenate(vals), (np.concatenate(ri), np.concatenate(ci))), shape=(Y.dim, X.dim))
        resid = 0.0
        worst = None
        for t in range(ntet):
            gy = np.asarray(Y.elem_dofs[t])
            gx = np.asarray(X.elem_dofs[t])
            block = sp.coo_matrix(locals_[t])
            Lt = sp.csr_matrix((block.data, (gy[block.row], gx[block.col])), shape=(Y.dim, X.dim))
            diff = (G[gy] - Lt[gy])
            if diff.nnz:
                m = np.abs(diff.data).max()
                if m > resid:
                    resid = m
                    j = int(np.argmax(np.abs(diff).max(axis=1).toarray().ravel()))
                    worst = (Y.keys[gy[j]], t)
        rel = resid / scale if scale else 0.0
        ok = rel <= tol
        if membership == "modular":
            ok, worst_mod = membership_mod(op, X, Y)
            worst = worst_mod if not ok else worst
        return OperatorMatrix(op, X, Y, mode, G, rel, ok, worst)
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# ranks


@dataclass
class FloatRank:
    rank: int
    sigma_max: float
    smallest_kept: float
    largest_dropped: float

    @property
    def gap(self):
        if self.largest_dropped == 0:
            return float("inf")
        return self.smallest_kept / self.largest_dropped


def equilibrate(a):
    """Scale rows then columns to unit max-norm (rank preserving)."""
    a = np.array(a, dtype=float)
    r = np.abs(a).max(axis=1)
    r[r == 0] = 1
    a /= r[:, None]
    c = np.abs(a).max(axis=0)
    c[c == 0] = 1
    a /= c[None, :]
    return a


def float_rank(a, eps=FLOAT_RANK_EPS):
    a = equilibrate(a.toarray() if sp.issparse(a) else a)
    if a.size == 0:
        return FloatRank(0, 0.0, float("inf"), 0.0)
    s = np.linalg.svd(a, compute_uv=False)
    smax = s[0] if s.size else 0.0
    keep = s > eps * smax
    r = int(keep.sum())
    kept = float(s[r - 1]) if r else float("inf")
    dropped = float(s[r]) if r < s.size else 0.0
    return FloatRank(r, float(smax), kept, dropped)


def p1_interpolants(U):
    """Exact U_h DOF vectors of the global functions 1, x, y, z."""
    out = []
    d = U.layout.degree
    for which in range(4):
        vecs = []
        for t, tet in enumerate(U.mesh.tets):
            if which == 0:
                vals = [Fraction(1)] * 4
            else:
                vals = [U.mesh.vertices[v][which - 1] for v in tet]
            vecs.append(forms.raise_degree(vals, 1, d - 1))
        dofs, resid = U.interpolate_exact(vecs)
        if resid != 0:
            raise MembershipError("affine function is not reproduced by U_h")
        out.append(dofs)
    return out


# ---------------------------------------------------------------------------
# reports


@dataclass
class ComplexReport:
    mesh: str
    k: int
    mode: str
    dims: dict
    dims_formula: dict
    ranks: dict
    rank_bounds: dict = field(default_factory=dict)
    kernels: dict = field(default_factory=dict)
    compositions_zero: dict = field(default_factory=dict)
    membership: dict = field(default_factory=dict)
    junctions: dict = field(default_factory=dict)
    float_gaps: dict = field(default_factory=dict)
    alternating_sum: int = 0
    verdict: str = "not exact"
    message: str = ""
    timings: dict = field(default_factory=dict)

    @property
    def exact(self):
        return self.verdict == "exact"

    def as_dict(self):
        return {
            "kind": "complex",
            "mesh": self.mesh,
            "k": self.k,
            "mode": self.mode,
            "dims": self.dims,
            "dims_formula": self.dims_formula,
            "ranks": self.ranks,
            "rank_bounds": self.rank_bounds,
            "kernels": self.kernels,
            "compositions_zero": self.compositions_zero,
            "membership": self.membership,
            "junctions": self.junctions,
            "float_gaps": self.float_gaps,
            "alternating_sum": self.alternating_sum,
            "verdict": self.verdict,
            "message": self.message,
        }


def build_spaces(mesh, k):
    """(U_h, Sigma_h, V_h, Q_h) for the complex index k (V_h has degree k-1)."""
    return (assemble_space("U", k, mesh), assemble_space("Sigma", k, mesh),
            assemble_space("V", k - 1, mesh), assemble_space("Q", k, mesh))


def verify_exactness(mesh, k, mode="exact"):
    if k < 5:
        raise DegreeError("the complex needs k >= 5 (Sigma_h requires k >= 5)")
    partial = k < 7
    t0 = time.perf_counter()
    if partial:
        spaces = {"Sigma": assemble_space("Sigma", k, mesh), "V": assemble_space("V", k - 1, mesh),
                  "Q": assemble_space("Q", k, mesh) if k - 2 >= 1 else None}
    else:
        U, S, V, Q = build_spaces(mesh, k)
        spaces = {"U": U, "Sigma": S, "V": V, "Q": Q}
    dims = {n: s.dim for n, s in spaces.items() if s is not None}
    report = ComplexReport(mesh.name, k, mode, dims,
                           {n: dimension_formula(n, k, mesh.counts) for n in dims}, {})
    report.timings["assemble"] = time.perf_counter() - t0
    ops = [("curl", "Sigma", "V"), ("div", "V", "Q")]
    if not partial:
        ops.insert(0, ("gradgrad", "U", "Sigma"))
    mats = {}
    for op, a, b in ops:
        t1 = time.perf_counter()
        om = operator_matrix(op, spaces[a], spaces[b], mode)
        mats[op] = om
        report.membership[op] = {"ok": bool(om.membership_ok), "residual": om.membership_residual,
                                 "worst": None if om.worst is None else repr(om.worst)}
        report.timings[op] = time.perf_counter() - t1
    if mode == "exact":
        _exact_ranks(report, spaces, mats, partial)
    else:
        _float_ranks(report, spaces, mats, partial)
    report.timings["total"] = time.perf_counter() - t0
    return report


def _exact_ranks(report, spaces, mats, partial):
    dims = report.dims
    cz = report.compositions_zero
    if not partial:
        cz["curl_gradgrad"] = product_is_zero(mats["curl"].matrix, mats["gradgrad"].matrix)
    cz["div_curl"] = product_is_zero(mats["div"].matrix, mats["curl"].matrix)
    lo = {op: rank_mod(m.matrix) for op, m in mats.items()}
    up = {}
    if not partial:
        ker = p1_interpolants(spaces["U"])
        kmat = SparseRows.from_lists(ker, dims["U"]).transpose()
        kernel_ok = product_is_zero(mats["gradgrad"].matrix, kmat)
        k_rank = rank_mod(kmat) if kernel_ok else 0
        up["gradgrad"] = min(dims["Sigma"], dims["U"] - k_rank)
        up["curl"] = min(dims["V"], dims["Sigma"] - (lo["gradgrad"] if cz["curl_gradgrad"] else 0))
    else:
        up["curl"] = min(dims["V"], dims["Sigma"])
    up["div"] = min(dims["Q"], dims["V"] - (lo["curl"] if cz["div_curl"] else 0))
    report.rank_bounds = {op: {"lower": lo[op], "upper": up[op], "proven": lo[op] == up[op]} for op in lo}
    report.ranks = dict(lo)
    _finish(report, partial, all(b["proven"] for b in report.rank_bounds.values()))


def _float_ranks(report, spaces, mats, partial):
    fr = {op: float_rank(m.matrix) for op, m in mats.items()}
    report.ranks = {op: r.rank for op, r in fr.items()}
    report.float_gaps = {op: {"gap": r.gap, "smallest_kept": r.smallest_kept, "largest_dropped": r.largest_dropped,
                              "sigma_max": r.sigma_max} for op, r in fr.items()}
    cz = report.compositions_zero
    if not partial:
        p = mats["curl"].matrix @ mats["gradgrad"].matrix
        cz["curl_gradgrad"] = bool(abs(p).max() <= 1e-8 * _norm(mats["curl"].matrix) * _norm(mats["gradgrad"].matrix)) if p.nnz else True
    p = mats["div"].matrix @ mats["curl"].matrix
    cz["div_curl"] = bool(abs(p).max() <= 1e-8 * _norm(mats["div"].matrix) * _norm(mats["curl"].matrix)) if p.nnz else True
    gaps_ok = all(r.gap >= FLOAT_MIN_GAP for r in fr.values())
    _finish(report, partial, gaps_ok)


def _norm(m):
    return abs(m).max() if m.nnz else 1.0


def _finish(report, partial, ranks_sound):
    d, r = report.dims, report.ranks
    j = report.junctions
    if not partial:
        report.kernels["gradgrad"] = d["U"] - r["gradgrad"]
        j["ker_gradgrad_is_P1"] = report.kernels["gradgrad"] == 4
        j["Sigma"] = d["Sigma"] - r["curl"] == r["gradgrad"]
        report.alternating_sum = d["U"] - d["Sigma"] + d["V"] - d["Q"]
    report.kernels["curl"] = d["Sigma"] - r["curl"]
    report.kernels["div"] = d["V"] - r["div"]
    j["V"] = d["V"] - r["div"] == r["curl"]
    j["div_onto"] = r["div"] == d["Q"]
    membership = all(m["ok"] for m in report.membership.values())
    comps = all(report.compositions_zero.values())
    all_j = all(j.values())
    if partial:
        report.verdict = "withheld"
        report.message = "exactness proven for k ≥ 7; partial report only"
        return
    ok = membership and comps and all_j and ranks_sound and report.alternating_sum == 4
    report.verdict = "exact" if ok else "not exact"
    report.message = "all junctions exact" if ok else _failure_message(membership, comps, j, ranks_sound)


def _failure_message(membership, comps, j, ranks_sound):
    parts = []
    if not membership:
        parts.append("membership violated")
    if not comps:
        parts.append("composition not zero")
    parts += [f"junction {name} fails" for name, ok in j.items() if not ok]
    if not ranks_sound:
        parts.append("rank not certified (bounds differ or singular-value gap too small)")
    return "; ".join(parts)


@dataclass
class DivSurjectivityReport:
    mesh: str
    k: int
    rank_div: int
    dim_Q: int
    onto: bool
    stability_constant: float | None = None

    def as_dict(self):
        return dict(kind="div_surjectivity", mesh=self.mesh, k=self.k, rank_div=self.rank_div, dim_Q=self.dim_Q,
                    onto=self.onto, stability_constant=self.stability_constant)


def verify_div_surjectivity(mesh, k, mode="exact", stability=False):
    V = assemble_space("V", k - 1, mesh)
    Q = assemble_space("Q", k, mesh)
    om = operator_matrix("div", V, Q, mode)
    if mode == "exact":
        r = rank_mod(om.matrix)
    else:
        r = float_rank(om.matrix).rank
    const = div_stability_constant(V, Q, om if mode == "float" else None) if stability else None
    return DivSurjectivityReport(mesh.name, k, r, Q.dim, r == Q.dim, const)


def div_stability_constant(V, Q, om=None, method="auto", dense_limit=500):
    """inf_q sup_v (div v, q) / (|v|_{H(div)} |q|_0) from a generalized eigenproblem.

    beta^2 is the smallest eigenvalue of ``D G_V^{-1} D^T q = mu M_Q q`` with
    ``D_ij = (div v_j, q_i)`` and ``G_V`` the H(div) Gram matrix.  The dense
    route forms the Schur complement; the iterative route runs shift-free
    Lanczos for the smallest eigenvalue, applying ``G_V^{-1}`` through one
    sparse factorisation.
    """
    from .eb import mass_matrix  # local import to avoid a cycle

    if om is None:
        om = operator_matrix("div", V, Q, "float")
    MV = mass_matrix(V).tocsc()
    MQ = mass_matrix(Q).tocsc()
    Dq = (MQ @ om.matrix).tocsc()  # (div v_j, q_i) = Q-mass times coefficients of div v_j
    GV = (MV + om.matrix.T @ MQ @ om.matrix).tocsc()
    if method == "auto":
        method = "dense" if Q.dim <= dense_limit else "iterative"
    # equilibrate both sides; the generalized eigenvalues are unchanged
    dv = 1.0 / np.sqrt(GV.diagonal())
    dq = 1.0 / np.sqrt(MQ.diagonal())
    Dv, Dqd = sp.diags(dv), sp.diags(dq)
    GV = (Dv @ GV @ Dv).tocsc()
    Dq = (Dqd @ Dq @ Dv).tocsc()
    MQ = (Dqd @ MQ @ Dqd).tocsc()
    if method == "dense":
        lu = spla.splu(GV)
        dense = Dq.toarray()
        S = dense @ lu.solve(dense.T)
        mu = sla.eigh(0.5 * (S + S.T), MQ.toarray(), eigvals_only=True, subset_by_index=[0, 0])
        return float(np.sqrt(max(mu[0], 0.0)))
    if method != "iterative":
        raise ValueError(f"unknown method {method!r}")
    # with the H(div) Gram matrix the eigenvalues are s^2 / (1 + s^2) for the
    # singular values s of div, so they lie in [beta^2, 1) and Lanczos on the
    # low end converges quickly without any factorisation of S itself
    nq = Q.dim
    g_lu = spla.splu(GV, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    mq_lu = spla.splu(MQ)
    S_op = spla.LinearOperator((nq, nq), matvec=lambda q: Dq @ g_lu.solve(Dq.T @ q), dtype=float)
    Minv = spla.LinearOperator((nq, nq), matvec=mq_lu.solve, dtype=float)
    rng = np.random.default_rng(0)
    vals = spla.eigsh(S_op, k=1, M=MQ, Minv=Minv, which="SA", tol=1e-10, v0=rng.standard_normal(nq),
                      return_eigenvectors=False)
    return float(np.sqrt(max(vals[0], 0.0)))


@dataclass
class DualComplexReport:
    mesh: str
    k: int
    dim_Sigma: int
    dim_Vhat: int
    curl_rank: int
    membership_exact: bool
    composition_zero: bool
    closed_not_exact: bool

    def as_dict(self):
        return dict(kind="dual_complex", mesh=self.mesh, k=self.k, dim_Sigma=self.dim_Sigma, dim_Vhat=self.dim_Vhat,
                    curl_rank=self.curl_rank, membership_exact=self.membership_exact,
                    composition_zero=self.composition_zero, closed_not_exact=self.closed_not_exact)


def verify_dual_complex(mesh, k):
    """curl Sigma_h lies in the discontinuous space Vhat_h, and the complex is not exact there."""
    if k < 7:
        raise DegreeError("dual complex check needs k >= 7")
    U = assemble_space("U", k, mesh)
    S = assemble_space("Sigma", k, mesh)
    Vh = assemble_space("Vhat", k - 1, mesh)
    curl = operator_matrix("curl_hat", S, Vh, "exact")
    gg = operator_matrix("gradgrad", U, S, "exact")
    comp = product_is_zero(curl.matrix, gg.matrix)
    r = rank_mod(curl.matrix)
    # rank <= dim Sigma - rank(gradgrad) certifies the strict inequality when that bound is below dim Vhat
    upper = S.dim - rank_mod(gg.matrix) if comp else S.dim
    closed_not_exact = comp and r == upper and r < Vh.dim
    return DualComplexReport(mesh.name, k, S.dim, Vh.dim, r, curl.membership_ok, comp, closed_not_exact)
