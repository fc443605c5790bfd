"""Mixed semidiscretisation of the linearised Einstein-Bianchi system.

Unknowns ``(sigma, E, B)`` live in ``U_h x Sigma_h x Vhat_h`` with coefficient
vectors ``x = (alpha, beta, gamma)``.  With the mass matrix
``L = blockdiag(A, B, C)`` and the skew coupling

    S = [[0, M, 0], [-M^T, 0, -N^T], [0, N, 0]],

the semidiscrete system reads ``L x' = S x``.  Crank-Nicolson steps solve
``(L - dt/2 S) x_new = (L + dt/2 S) x_old``, which conserves ``x^T L x``.

Every linear system met here has the form ``(L + c J) x = b`` with
``J = -S`` (``c = dt/2`` for time steps, ``c = 1`` for the bilinear form of
the elliptic projection and ``c = -1`` for its transpose).  The
discontinuous block is eliminated element by element, which leaves a sparse
system in ``(alpha, beta)`` whose Sigma block is ``B + c^2 K_curl``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import roots_jacobi

from . import forms
from .dofs import assemble_space
from .errors import DegreeError, SingularSystemError
from .forms import COMPONENTS, Layout, entry_weights
from .poly import FACTORIALS, monomials

DENSE_LIMIT = 4000


# ---------------------------------------------------------------------------
# element integration


def component_patterns(space):
    """Array (ncomp, 3, 3) giving the full matrix contributed by each layout component."""
    if space == "R":
        return np.ones((1, 1, 1))
    if space == "R3":
        return np.eye(3)[:, :, None]
    pats = np.zeros((len(COMPONENTS[space]), 3, 3))
    for (r, c), ws in entry_weights(space).items():
        for comp, w in ws:
            pats[comp, r, c] += w
    return pats


@lru_cache(maxsize=None)
def component_gram(space):
    """Frobenius inner products of the component patterns."""
    p = component_patterns(space).reshape(len(COMPONENTS[space]), -1)
    return p @ p.T


@lru_cache(maxsize=None)
def product_table(d, e):
    """int lambda^a lambda^b over a tetrahedron divided by 6|K| (float)."""
    ma, mb = monomials(d, 4), monomials(e, 4)
    ea, eb = np.array(ma), np.array(mb)
    tot = ea[:, None, :] + eb[None, :, :]
    fact = np.array([float(f) for f in FACTORIALS])
    num = np.prod(fact[tot], axis=2)
    return num / float(FACTORIALS[d + e + 3])


def gram(space, d, e, geom):
    """Gram matrix of the layout bases (space, d) x (space, e) on one element."""
    return np.kron(component_gram(space), product_table(d, e)) * (6 * float(geom.abs_volume))


def _dense(rows):
    return rows.to_dense()


# Derivative matrices depend only on the barycentric gradients, so translated
# elements share them.
_DERIV_CACHE = {}


def _cached(kind, d, geom, build):
    key = (kind, d, geom.grad_lambda)
    if key not in _DERIV_CACHE:
        _DERIV_CACHE[key] = _dense(build())
    return _DERIV_CACHE[key]


def _hessian(d, geom):
    return _cached("hess", d, geom, lambda: forms.hessian_operator(d, geom))


def _gradient(d, geom):
    def build():
        parts = [forms.partial_matrix(d, c, geom) for c in range(3)]
        return forms._block_operator(Layout("R3", d - 1), Layout("R", d), [(c, 0, 1, parts[c]) for c in range(3)])

    return _cached("grad", d, geom, build)


def _curl(d, geom):
    return _cached("curl", d, geom, lambda: forms.curl_operator("S", d, geom, "T"))


# ---------------------------------------------------------------------------
# assembly


def _scatter(blocks, shape):
    """Sum of dense element blocks placed at (row indices, col indices)."""
    ri, ci, vals = [], [], []
    for rows, cols, blk in blocks:
        rows, cols = np.asarray(rows), np.asarray(cols)
        ri.append(np.repeat(rows, len(cols)))
        ci.append(np.tile(cols, len(rows)))
        vals.append(np.asarray(blk).ravel())
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(ri), np.concatenate(ci))), shape=shape)
    return m.tocsr()


def mass_matrix(space):
    """Global L2 Gram matrix of a GlobalSpace (sparse)."""
    lay = space.layout
    blocks = []
    for t, geom in enumerate(space.mesh.geoms):
        s = space.shape_exact_float(t)
        blocks.append((space.elem_dofs[t], space.elem_dofs[t], s.T @ gram(lay.space, lay.degree, lay.degree, geom) @ s))
    return _scatter(blocks, (space.dim, space.dim))


@dataclass
class EBSystemMatrices:
    """Mass, coupling and norm matrices of the semidiscrete system.

    ``M[i, j] = (phi_j, gradgrad psi_i)`` and ``N[i, j] = (curl phi_j, chi_i)``.
    ``Gc`` holds the coefficients of ``curl phi_j`` in the Vhat basis, so
    ``N = C Gc``.  ``H1`` and ``H2`` are the gradient and Hessian Gram
    matrices of U_h, ``K_curl = Gc^T C Gc`` the curl Gram matrix of Sigma_h.
    """

    mesh: object
    k: int
    U: object
    Sigma: object
    Vhat: object
    A: sp.csr_matrix
    B: sp.csr_matrix
    M: sp.csr_matrix
    Gc: sp.csr_matrix
    H1: sp.csr_matrix
    H2: sp.csr_matrix
    K_curl: sp.csr_matrix
    C_blocks: list = field(repr=False, default_factory=list)
    _cache: dict = field(repr=False, default_factory=dict)

    @property
    def C(self):
        """Block-diagonal Vhat mass matrix, built on demand from the element blocks."""
        if "C" not in self._cache:
            n = self.Vhat.dim
            c = _scatter([(idx, idx, 0.5 * (blk + blk.T)) for idx, blk in self.C_blocks], (n, n))
            self._cache["C"] = c
        return self._cache["C"]

    @property
    def N(self):
        if "N" not in self._cache:
            self._cache["N"] = (self.C @ self.Gc).tocsr()
        return self._cache["N"]

    @property
    def dims(self):
        return (self.U.dim, self.Sigma.dim, self.Vhat.dim)

    @property
    def size(self):
        return sum(self.dims)

    def split(self, x):
        a, b, _ = self.dims
        return x[:a], x[a:a + b], x[a + b:]

    def mass(self):
        return sp.block_diag([self.A, self.B, self.C], format="csr")

    def coupling(self):
        """The skew matrix S of the module docstring."""
        return sp.bmat([[None, self.M, None], [-self.M.T, None, -self.N.T], [None, self.N, None]], format="csr")

    def energy(self, x):
        return float(x @ (self.mass() @ x))

    def c_apply(self, x):
        out = np.empty_like(x)
        for idx, blk in self.C_blocks:
            out[idx] = blk @ x[idx]
        return out

    def norm_matrices(self):
        """Gram matrices of the H^2 x H(curl) x L^2 norm."""
        return self.A + self.H1 + self.H2, self.B + self.K_curl, self.C

    def scaling(self):
        """Diagonal equilibration 1/sqrt(diag L); DOF scales differ by many orders."""
        if "scale" not in self._cache:
            self._cache["scale"] = 1.0 / np.sqrt(self.mass().diagonal())
        return self._cache["scale"]

    def solver(self, c):
        if c not in self._cache:
            self._cache[c] = BlockSolver(self, c)
        return self._cache[c]


class _Accumulator:
    """Sums dense element blocks into a CSR matrix, compressing every few elements."""

    def __init__(self, shape, chunk=4):
        self.shape = shape
        self.chunk = chunk
        self.pending = []
        self.total = sp.csr_matrix(shape)

    def add(self, rows, cols, blk):
        self.pending.append((rows, cols, blk))
        if len(self.pending) >= self.chunk:
            self.flush()

    def flush(self):
        if self.pending:
            self.total = self.total + _scatter(self.pending, self.shape)
            self.pending = []

    def result(self, symmetric=False):
        self.flush()
        m = self.total
        return ((m + m.T) * 0.5).tocsr() if symmetric else m


def assemble_eb(mesh, k=7, check_spd=True):
    """Assemble all matrices from exact shape functions and exact integration tables."""
    if k < 7:
        raise DegreeError("the Einstein-Bianchi discretisation needs k >= 7")
    U = assemble_space("U", k, mesh)
    S = assemble_space("Sigma", k, mesh)
    W = assemble_space("Vhat", k - 1, mesh)
    nu, ns, nw = U.dim, S.dim, W.dim
    shapes = {"A": (nu, nu), "B": (ns, ns), "M": (nu, ns), "Gc": (nw, ns), "H1": (nu, nu), "H2": (nu, nu),
              "K": (ns, ns)}
    acc = {name: _Accumulator(shape) for name, shape in shapes.items()}
    c_blocks = []
    for t, geom in enumerate(mesh.geoms):
        su, ss, sw = U.shape_exact_float(t), S.shape_exact_float(t), W.shape_exact_float(t)
        gu, gs, gw = U.elem_dofs[t], S.elem_dofs[t], W.elem_dofs[t]
        g_s = gram("S", k, k, geom)
        g_t = gram("T", k - 1, k - 1, geom)
        hu = _hessian(k + 2, geom) @ su
        cs = _curl(k, geom) @ ss
        du = _gradient(k + 2, geom) @ su
        c_blocks.append((np.asarray(gw), sw.T @ g_t @ sw))
        acc["A"].add(gu, gu, su.T @ gram("R", k + 2, k + 2, geom) @ su)
        acc["B"].add(gs, gs, ss.T @ g_s @ ss)
        acc["M"].add(gu, gs, hu.T @ g_s @ ss)
        acc["Gc"].add(gw, gs, np.linalg.solve(sw, cs))
        acc["H1"].add(gu, gu, du.T @ gram("R3", k + 1, k + 1, geom) @ du)
        acc["H2"].add(gu, gu, hu.T @ g_s @ hu)
        acc["K"].add(gs, gs, cs.T @ g_t @ cs)
    for space in (U, S, W):
        space.release_exact()
    sym = {"A", "B", "H1", "H2", "K"}
    mats = {name: a.result(name in sym) for name, a in acc.items()}
    sys_ = EBSystemMatrices(mesh, k, U, S, W, mats["A"], mats["B"], mats["M"], mats["Gc"],
                            mats["H1"], mats["H2"], mats["K"], c_blocks)
    if check_spd:
        for name in ("A", "B"):
            if not is_spd(getattr(sys_, name)):
                raise SingularSystemError(f"mass matrix {name} is not positive definite (assembly bug)")
        for _, blk in c_blocks:
            try:
                np.linalg.cholesky(blk)
            except np.linalg.LinAlgError:
                raise SingularSystemError("mass matrix C is not positive definite (assembly bug)") from None
    return sys_


def spd_factor(m):
    """Sparse factorisation of a symmetric positive definite matrix; returns a solve function."""
    d = 1.0 / np.sqrt(m.diagonal())
    scaled = (sp.diags(d) @ m @ sp.diags(d)).tocsc()
    del m
    lu = spla.splu(scaled, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    return lambda b: d * lu.solve(d * b)


def is_spd(m):
    """Cholesky test; sparse matrices use an unpivoted LU on a symmetric ordering."""
    if m.shape[0] <= DENSE_LIMIT:
        try:
            np.linalg.cholesky(m.toarray())
            return True
        except np.linalg.LinAlgError:
            return False
    d = 1.0 / np.sqrt(np.abs(m.diagonal()))
    if np.any(m.diagonal() <= 0):
        return False
    scaled = (sp.diags(d) @ m @ sp.diags(d)).tocsc()
    try:
        lu = spla.splu(scaled, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError:
        return False
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return False
    return bool(np.all(lu.U.diagonal() > 0))


# ---------------------------------------------------------------------------
# linear solves with (L + c J)


class BlockSolver:
    """Solver for ``(L + c J) x = b``; see the module docstring.

    The discontinuous unknowns are eliminated with the element blocks of C,
    which gives ``Q = [[A, -c M], [c M^T, B + c^2 K_curl]]``.
    """

    def __init__(self, sys_, c):
        self.sys = sys_
        self.c = c
        self.nu = sys_.A.shape[0]
        k0 = (sys_.B + (c * c) * sys_.K_curl).tocsr()
        du = 1.0 / np.sqrt(sys_.A.diagonal())
        ds = 1.0 / np.sqrt(k0.diagonal())
        Du, Ds = sp.diags(du), sp.diags(ds)
        m = (Du @ sys_.M @ Ds).tocsr()
        k0 = Ds @ k0 @ Ds
        q = sp.bmat([[Du @ sys_.A @ Du, -c * m], [c * m.T, k0]], format="csc")
        del m, k0
        self.d = np.concatenate([du, ds])
        # the symmetric part blockdiag(A, B + c^2 K) is positive definite, so
        # diagonal pivots are safe and a symmetric ordering keeps fill low
        self.lu = spla.splu(q, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                            options={"SymmetricMode": True})
        del q
        self._cinv = [(idx, sla.cho_factor(blk)) for idx, blk in sys_.C_blocks]

    def c_solve(self, h):
        out = np.empty_like(h)
        for idx, fac in self._cinv:
            out[idx] = sla.cho_solve(fac, h[idx])
        return out

    def solve(self, b, transpose=False):
        """Solve ``(L + c J) x = b``, or ``(L + c J)^T x = b`` which equals ``(L - c J) x = b``."""
        f, g, h = self.sys.split(np.asarray(b, float))
        c = -self.c if transpose else self.c
        sign = -1.0 if transpose else 1.0
        g2 = g - c * (self.sys.Gc.T @ h)
        rhs = np.concatenate([f, sign * g2])
        y = self.d * self.lu.solve(self.d * rhs)
        alpha, beta = y[: self.nu], sign * y[self.nu:]
        gamma = self.c_solve(h) + c * (self.sys.Gc @ beta)
        return np.concatenate([alpha, beta, gamma])


def system_matrix(sys_, c):
    """Sparse ``L + c J`` (J = -S)."""
    return (sys_.mass() - c * sys_.coupling()).tocsr()


# ---------------------------------------------------------------------------
# Crank-Nicolson


@dataclass
class CNConfig:
    dt: float
    steps: int
    k: int = 7
    solver: str = "auto"  # dense | sparse | auto

    def __post_init__(self):
        if self.dt == 0 or not math.isfinite(self.dt):
            raise ValueError("dt must be finite and nonzero (negative steps run backwards)")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.solver not in ("auto", "dense", "sparse"):
            raise ValueError(f"unknown solver {self.solver!r}")


@dataclass
class EBState:
    t: float
    x: np.ndarray

    def parts(self, sys_):
        return sys_.split(self.x)


class CNStepper:
    """Factorises the step matrix once and advances states."""

    def __init__(self, sys_, cfg):
        self.sys = sys_
        self.cfg = cfg
        c = cfg.dt / 2
        use_dense = cfg.solver == "dense" or (cfg.solver == "auto" and sys_.size <= DENSE_LIMIT)
        self.rhs_matrix = system_matrix(sys_, -c)
        if use_dense:
            d = sys_.scaling()
            lhs = d[:, None] * system_matrix(sys_, c).toarray() * d[None, :]
            self._lu = sla.lu_factor(lhs)
            if np.any(np.diag(self._lu[0]) == 0):
                raise SingularSystemError("Crank-Nicolson step matrix is singular")
            self._solve = lambda b: d * sla.lu_solve(self._lu, d * b)
        else:
            bs = sys_.solver(c)
            self._solve = bs.solve

    def step(self, state):
        x = self._solve(self.rhs_matrix @ state.x)
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("non-finite state after a Crank-Nicolson step")
        return EBState(state.t + self.cfg.dt, x)


_STEPPERS = {}


def cn_step(state, sys_, cfg):
    key = (id(sys_), cfg.dt, cfg.solver)
    if key not in _STEPPERS:
        _STEPPERS.clear()
        _STEPPERS[key] = CNStepper(sys_, cfg)
    return _STEPPERS[key].step(state)


@dataclass
class SimulationResult:
    times: list
    energies: list
    norms: list  # (norm_sigma, norm_E, norm_B)
    final: EBState
    richardson_ratio: float | None = None

    @property
    def energy_drift(self):
        e0 = self.energies[0]
        scale = e0 if e0 else 1.0
        return max(abs(e - e0) for e in self.energies) / scale

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "t", "energy", "norm_sigma", "norm_E", "norm_B"])
            for i, (t, e, (a, b, c)) in enumerate(zip(self.times, self.energies, self.norms)):
                w.writerow([i, repr(float(t)), repr(e), repr(a), repr(b), repr(c)])


def _norms(sys_, x):
    a, b, g = sys_.split(x)
    return (math.sqrt(max(a @ (sys_.A @ a), 0)), math.sqrt(max(b @ (sys_.B @ b), 0)),
            math.sqrt(max(g @ (sys_.C @ g), 0)))


def run_simulation(sys_, x0, cfg, richardson=False):
    """Advance ``x0`` for ``cfg.steps`` steps, recording energy and component norms."""
    stepper = CNStepper(sys_, cfg)
    state = EBState(0.0, np.array(x0, float))
    times, energies, norms = [0.0], [sys_.energy(state.x)], [_norms(sys_, state.x)]
    for _ in range(cfg.steps):
        state = stepper.step(state)
        times.append(state.t)
        energies.append(sys_.energy(state.x))
        norms.append(_norms(sys_, state.x))
    res = SimulationResult(times, energies, norms, state)
    if richardson:
        res.richardson_ratio = richardson_ratio(sys_, x0, cfg, coarse=state.x)
    return res


def _advance(sys_, x0, dt, steps, solver):
    stepper = CNStepper(sys_, CNConfig(dt, steps, solver=solver))
    state = EBState(0.0, np.array(x0, float))
    for _ in range(steps):
        state = stepper.step(state)
    return state.x


def richardson_ratio(sys_, x0, cfg, coarse=None):
    """||x(dt) - x(dt/2)|| / ||x(dt/2) - x(dt/4)|| at the final time, in the energy norm."""
    x1 = coarse if coarse is not None else _advance(sys_, x0, cfg.dt, cfg.steps, cfg.solver)
    x2 = _advance(sys_, x0, cfg.dt / 2, 2 * cfg.steps, cfg.solver)
    x4 = _advance(sys_, x0, cfg.dt / 4, 4 * cfg.steps, cfg.solver)
    L = sys_.mass()
    d1, d2 = x1 - x2, x2 - x4
    return math.sqrt(d1 @ (L @ d1)) / math.sqrt(d2 @ (L @ d2))


def prepare_initial_data(sys_, x0, eps=0.1, passes=4, method="auto"):
    """Damp the high-frequency content of ``x0``.

    Each pass applies ``(L + eps J)^{-1} L (L - eps J)^{-1} L``, whose symbol
    ``1 / (1 + eps^2 omega^2)`` leaves slow modes almost untouched and kills
    modes with ``omega >> 1 / eps``.  A temporal convergence rate is only
    visible on data whose spectrum is resolved by the time step.
    """
    L = sys_.mass()
    x = np.array(x0, float)
    dense = method == "dense" or (method == "auto" and sys_.size <= DENSE_LIMIT)
    if dense:
        d = sys_.scaling()
        facs = {c: sla.lu_factor(d[:, None] * system_matrix(sys_, c).toarray() * d[None, :]) for c in (eps, -eps)}

        def solve(c, b):
            return d * sla.lu_solve(facs[c], d * b)
    else:
        def solve(c, b):
            return sys_.solver(eps).solve(b, transpose=c < 0)
    for _ in range(passes):
        x = solve(eps, L @ solve(-eps, L @ x))
    return x


def cn_eigenvalue_check(sys_, dt):
    """max | |lambda| - 1 | over the step operator, in energy-normalised coordinates.

    Everything is first equilibrated with the diagonal of L (a similarity
    transform, so eigenvalues are unchanged) to tame the conditioning.
    """
    d = sys_.scaling()
    L = d[:, None] * sys_.mass().toarray() * d[None, :]
    R = np.linalg.cholesky(L).T  # L = R^T R
    c = dt / 2
    lhs = d[:, None] * system_matrix(sys_, c).toarray() * d[None, :]
    rhs = d[:, None] * system_matrix(sys_, -c).toarray() * d[None, :]
    T = np.linalg.solve(lhs, rhs)
    Tn = R @ T @ np.linalg.inv(R)
    lam = np.linalg.eigvals(Tn)
    return float(np.max(np.abs(np.abs(lam) - 1)))


def skew_residual(sys_):
    """max |S + S^T| relative to max |S| (zero by construction up to rounding)."""
    s = sys_.coupling()
    d = s + s.T
    return (abs(d).max() if d.nnz else 0.0) / abs(s).max()


# ---------------------------------------------------------------------------
# quadrature and smooth targets


@lru_cache(maxsize=None)
def tet_quadrature(n):
    """Collapsed Gauss-Jacobi rule with n^3 points, exact to degree 2n - 1.

    Returns barycentric points (nq, 4) and weights summing to 1 (multiply by |K|).
    """
    xa, wa = roots_jacobi(n, 2, 0)
    xb, wb = roots_jacobi(n, 1, 0)
    xc, wc = roots_jacobi(n, 0, 0)
    a, b, c = (xa + 1) / 2, (xb + 1) / 2, (xc + 1) / 2
    wa, wb, wc = wa / 8, wb / 4, wc / 2
    A, Bm, Cm = np.meshgrid(a, b, c, indexing="ij")
    W = (wa[:, None, None] * wb[None, :, None] * wc[None, None, :]).ravel() * 6
    xi = A.ravel()
    eta = (Bm * (1 - A)).ravel()
    zeta = (Cm * (1 - A) * (1 - Bm)).ravel()
    bary = np.stack([1 - xi - eta - zeta, xi, eta, zeta], axis=1)
    return bary, W


@lru_cache(maxsize=None)
def _exponents(d):
    return np.array(monomials(d, 4))


def monomial_values(bary, d):
    """Values of all degree-d barycentric monomials at the given points (nq, nmono)."""
    e = _exponents(d)
    return np.prod(bary[:, None, :] ** e[None, :, :], axis=2)


def field_values(layout, coeffs, bary):
    """Full (nq, 3, 3) matrix values (or (nq,) scalars, (nq, 3) vectors) of a layout vector."""
    vals = monomial_values(bary, layout.degree)
    comp = np.stack([vals @ coeffs[layout.comp_slice(i)] for i in range(layout.ncomp)], axis=1)
    if layout.space == "R":
        return comp[:, 0]
    if layout.space == "R3":
        return comp
    return np.einsum("qc,crs->qrs", comp, component_patterns(layout.space))


def layout_moments(layout, values, bary, weights):
    """Integrals of the field ``values`` against every layout basis function (weights include |K|)."""
    mono = monomial_values(bary, layout.degree)
    if layout.space == "R":
        contracted = values[:, None]
    elif layout.space == "R3":
        contracted = values
    else:
        contracted = np.einsum("qrs,crs->qc", values, component_patterns(layout.space))
    out = (mono * weights[:, None]).T @ contracted  # (nmono, ncomp)
    return out.T.ravel()


@dataclass
class SmoothTriple:
    """Analytic target ``(sigma, E, B)`` with the derivatives needed for errors.

    ``sigma = sin(w.x)``, ``E = E0 cos(w.x)``, ``B = B0 sin(v.x)`` with a
    symmetric ``E0`` and a traceless ``B0``.
    """

    w: tuple = (1.0, 0.7, 0.4)
    v: tuple = (0.5, -0.8, 0.6)
    E0: tuple = ((1.0, 0.3, -0.2), (0.3, 0.5, 0.1), (-0.2, 0.1, -0.4))
    B0: tuple = ((0.2, -0.5, 0.4), (0.3, 0.6, -0.1), (0.7, 0.2, -0.8))

    def _arrays(self):
        return np.array(self.w), np.array(self.v), np.array(self.E0), np.array(self.B0)

    def sigma(self, x):
        w = np.array(self.w)
        return np.sin(x @ w)

    def grad_sigma(self, x):
        w = np.array(self.w)
        return np.cos(x @ w)[:, None] * w[None, :]

    def hess_sigma(self, x):
        w = np.array(self.w)
        return -np.sin(x @ w)[:, None, None] * np.outer(w, w)[None]

    def E(self, x):
        w, _, E0, _ = self._arrays()
        return np.cos(x @ w)[:, None, None] * E0[None]

    def curl_E(self, x):
        """Row-wise curl: row r is grad(cos(w.x)) x E0[r]."""
        w, _, E0, _ = self._arrays()
        g = -np.sin(x @ w)
        rows = np.cross(w[None, :], E0)  # (3, 3): w x E0[r]
        return g[:, None, None] * rows[None]

    def B(self, x):
        _, v, _, B0 = self._arrays()
        return np.sin(x @ v)[:, None, None] * B0[None]


def _physical(geom, bary):
    verts = np.array([[float(c) for c in v] for v in geom.vertices])
    return bary @ verts


# ---------------------------------------------------------------------------
# elliptic projection


def bilinear_matrix(sys_):
    """Matrix of A(trial; test) with rows indexed by test functions: L + J."""
    return system_matrix(sys_, 1.0)


def projection_rhs_smooth(sys_, target, quad_n=12):
    """Right-hand side A(target; test) for every discrete test triple, by quadrature."""
    k = sys_.k
    bary, wq = tet_quadrature(quad_n)
    nu, ns, nw = sys_.dims
    r_u, r_s, r_w = np.zeros(nu), np.zeros(ns), np.zeros(nw)
    lr, ls, lt = Layout("R", k + 2), Layout("S", k), Layout("T", k - 1)
    for t, geom in enumerate(sys_.mesh.geoms):
        x = _physical(geom, bary)
        w = wq * float(geom.abs_volume)
        sig, E, B = target.sigma(x), target.E(x), target.B(x)
        hs, cE = target.hess_sigma(x), target.curl_E(x)
        su = sys_.U.shape_exact_float(t)
        ss = sys_.Sigma.shape_exact_float(t)
        sw = sys_.Vhat.shape_exact_float(t)
        hu = _hessian(k + 2, geom) @ su
        cs = _curl(k, geom) @ ss
        m_sig = layout_moments(lr, sig, bary, w)
        m_E = layout_moments(ls, E, bary, w)
        m_hs = layout_moments(ls, hs, bary, w)
        m_BT = layout_moments(lt, B, bary, w)
        m_cE = layout_moments(lt, cE, bary, w)
        np.add.at(r_u, sys_.U.elem_dofs[t], su.T @ m_sig - hu.T @ m_E)
        np.add.at(r_s, sys_.Sigma.elem_dofs[t], ss.T @ (m_E + m_hs) + cs.T @ m_BT)
        np.add.at(r_w, sys_.Vhat.elem_dofs[t], sw.T @ (m_BT - m_cE))
    return np.concatenate([r_u, r_s, r_w])


def elliptic_projection(sys_, target, method="auto", quad_n=12):
    """Discrete triple matching the bilinear form against all discrete test triples.

    ``target`` is either a coefficient vector of a discrete triple or an
    object with the fields of :class:`SmoothTriple` (integrated by quadrature).
    """
    if hasattr(target, "sigma"):
        rhs = projection_rhs_smooth(sys_, target, quad_n)
    else:
        rhs = bilinear_matrix(sys_) @ np.asarray(target, float)
    return solve_bilinear(sys_, rhs, method)


def solve_bilinear(sys_, rhs, method="auto", transpose=False):
    if method == "dense" or (method == "auto" and sys_.size <= DENSE_LIMIT):
        d = sys_.scaling()
        m = d[:, None] * bilinear_matrix(sys_).toarray() * d[None, :]
        return d * np.linalg.solve(m.T if transpose else m, d * rhs)
    return sys_.solver(1.0).solve(rhs, transpose=transpose)


@dataclass
class ProjectionError:
    sigma_h2: float
    E_hcurl: float
    B_l2: float

    @property
    def total(self):
        return self.sigma_h2 + self.E_hcurl + self.B_l2

    def as_dict(self):
        return {"sigma_H2": self.sigma_h2, "E_Hcurl": self.E_hcurl, "B_L2": self.B_l2, "total": self.total}


def projection_error(sys_, x, target, quad_n=12):
    """Errors in the H^2, H(curl) and L^2 norms between a discrete triple and ``target``."""
    k = sys_.k
    bary, wq = tet_quadrature(quad_n)
    a, b, g = sys_.split(np.asarray(x, float))
    acc = np.zeros(3)
    for t, geom in enumerate(sys_.mesh.geoms):
        xq = _physical(geom, bary)
        w = wq * float(geom.abs_volume)
        cu = sys_.U.shape_exact_float(t) @ a[sys_.U.elem_dofs[t]]
        cs = sys_.Sigma.shape_exact_float(t) @ b[sys_.Sigma.elem_dofs[t]]
        cw = sys_.Vhat.shape_exact_float(t) @ g[sys_.Vhat.elem_dofs[t]]
        s_val = field_values(Layout("R", k + 2), cu, bary)
        s_grad = field_values(Layout("R3", k + 1), _gradient(k + 2, geom) @ cu, bary)
        s_hess = field_values(Layout("S", k), _hessian(k + 2, geom) @ cu, bary)
        e_val = field_values(Layout("S", k), cs, bary)
        e_curl = field_values(Layout("T", k - 1), _curl(k, geom) @ cs, bary)
        b_val = field_values(Layout("T", k - 1), cw, bary)
        acc[0] += w @ ((s_val - target.sigma(xq)) ** 2 + np.sum((s_grad - target.grad_sigma(xq)) ** 2, axis=1)
                       + np.sum((s_hess - target.hess_sigma(xq)) ** 2, axis=(1, 2)))
        acc[1] += w @ (np.sum((e_val - target.E(xq)) ** 2, axis=(1, 2))
                       + np.sum((e_curl - target.curl_E(xq)) ** 2, axis=(1, 2)))
        acc[2] += w @ np.sum((b_val - target.B(xq)) ** 2, axis=(1, 2))
    return ProjectionError(*(math.sqrt(v) for v in acc))


# ---------------------------------------------------------------------------
# inf-sup constant


@dataclass
class InfSupReport:
    mesh: str
    k: int
    gamma_h: float
    method: str
    dims: tuple
    control: bool = False

    def as_dict(self):
        return {"kind": "infsup", "mesh": self.mesh, "k": self.k, "gamma_h": self.gamma_h, "method": self.method,
                "dims": list(self.dims), "negative_control": self.control}


def _bilinear_dense(sys_, drop_b_block=False):
    m = bilinear_matrix(sys_).toarray()
    if drop_b_block:
        nu, ns, _ = sys_.dims
        o = nu + ns
        m[o:, o:] = 0.0
    return m


def infsup_estimate(sys_, method="auto", drop_b_block=False, tol=1e-8):
    """Smallest singular value of the bilinear form in the H^2 x H(curl) x L^2 norm.

    ``dense`` forms G^{-1/2} A G^{-1/2} blockwise; ``iterative`` finds the
    largest eigenvalue of A^{-1} G A^{-T} G, which is 1/gamma^2.
    ``drop_b_block`` removes the (B, v) mass term (a negative control).
    """
    if method == "auto":
        method = "dense" if sys_.size <= DENSE_LIMIT or drop_b_block else "iterative"
    if method == "dense":
        gu, gs, gw = sys_.norm_matrices()
        d = np.concatenate([1.0 / np.sqrt(g.diagonal()) for g in (gu, gs, gw)])
        R = sla.block_diag(*(np.linalg.cholesky(g.toarray() * np.outer(dd, dd)).T
                             for g, dd in zip((gu, gs, gw), np.split(d, np.cumsum(sys_.dims)[:2]))))
        m = d[:, None] * _bilinear_dense(sys_, drop_b_block) * d[None, :]
        Rinv = sla.solve_triangular(R, np.eye(R.shape[0]))
        ahat = Rinv.T @ m @ Rinv
        s = sla.svdvals(ahat)
        gamma = float(s.min())
    elif method == "iterative":
        if drop_b_block:
            raise ValueError("the negative control needs the dense method")
        gu = sys_.A + sys_.H1 + sys_.H2
        gs = sys_.B + sys_.K_curl
        gamma = _infsup_iterative(sys_, (gu, gs), tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    return InfSupReport(sys_.mesh.name, sys_.k, gamma, method, sys_.dims, drop_b_block)


def _infsup_iterative(sys_, grams, tol):
    nu, ns, _ = sys_.dims
    gu, gs = grams

    def g_apply(x):
        return np.concatenate([gu @ x[:nu], gs @ x[nu:nu + ns], sys_.c_apply(x[nu + ns:])])
    gu_solve = spd_factor(grams[0])
    gs_solve = spd_factor(grams[1])
    cinv = sys_.solver(1.0).c_solve

    def g_solve(x):
        return np.concatenate([gu_solve(x[:nu]), gs_solve(x[nu:nu + ns]), cinv(x[nu + ns:])])

    bs = sys_.solver(1.0)

    def op(x):
        # G A^{-1} G A^{-T} G x: symmetric, paired with M = G its eigenvalues are 1/sigma^2
        y = bs.solve(g_apply(x), transpose=True)
        y = bs.solve(g_apply(y))
        return g_apply(y)

    n = sys_.size
    A_op = spla.LinearOperator((n, n), matvec=op, dtype=float)
    Minv = spla.LinearOperator((n, n), matvec=g_solve, dtype=float)
    rng = np.random.default_rng(0)
    M_op = spla.LinearOperator((n, n), matvec=g_apply, dtype=float)
    vals = spla.eigsh(A_op, k=1, M=M_op, Minv=Minv, which="LA", tol=tol, v0=rng.standard_normal(n),
                      return_eigenvectors=False)
    return float(1.0 / math.sqrt(vals[0]))
