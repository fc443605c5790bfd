import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ggfem.complex import operator_matrix
from ggfem.eb import (
    CNConfig,
    CNStepper,
    EBState,
    SmoothTriple,
    assemble_eb,
    cn_eigenvalue_check,
    elliptic_projection,
    infsup_estimate,
    is_spd,
    prepare_initial_data,
    projection_error,
    run_simulation,
    skew_residual,
    solve_bilinear,
    system_matrix,
    tet_quadrature,
)
from ggfem.mesh import generate_mesh


@pytest.fixture(scope="module")
def sys1():
    return assemble_eb(generate_mesh("single_tet"), 7)


@pytest.fixture(scope="module")
def smooth_x0(sys1):
    x = elliptic_projection(sys1, SmoothTriple())
    return prepare_initial_data(sys1, x)


def enorm(sys_, x):
    return math.sqrt(sys_.energy(x))


class PolyTriple:
    """A triple inside the discrete spaces: quadratic sigma, linear E, constant traceless B."""

    a = np.array([0.3, -1.0, 0.5])
    E0 = np.array([[1.0, 0.2, 0.0], [0.2, -0.5, 0.4], [0.0, 0.4, 2.0]])
    B0 = np.array([[0.2, -0.5, 0.4], [0.3, 0.6, -0.1], [0.7, 0.2, -0.8]])
    Q = np.array([[1.0, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, -2.0]])  # sigma = x.Qx

    def sigma(self, x):
        return np.einsum("ni,ij,nj->n", x, self.Q, x)

    def grad_sigma(self, x):
        return 2 * x @ self.Q

    def hess_sigma(self, x):
        return np.broadcast_to(2 * self.Q, (len(x), 3, 3))

    def E(self, x):
        return (x @ self.a)[:, None, None] * self.E0[None]

    def curl_E(self, x):
        return np.broadcast_to(np.cross(self.a[None, :], self.E0), (len(x), 3, 3))

    def B(self, x):
        return np.broadcast_to(self.B0, (len(x), 3, 3))


# ---------------------------------------------------------------------------
# structure of the system


def test_dims(sys1):
    assert sys1.dims == (220, 720, 672)


def test_mass_blocks_spd(sys1):
    assert is_spd(sys1.A) and is_spd(sys1.B) and is_spd(sys1.C)


def test_coupling_is_skew(sys1):
    assert skew_residual(sys1) <= 1e-14


def test_affine_functions_have_no_coupling(sys1):
    from ggfem.complex import p1_interpolants

    ker = np.array([[float(c) for c in v] for v in p1_interpolants(sys1.U)]).T
    assert np.abs(sys1.M.T @ ker).max() <= 1e-10 * np.abs(sys1.M).max() * np.abs(ker).max()


def test_curl_annihilates_hessians(sys1):
    gg = operator_matrix("gradgrad", sys1.U, sys1.Sigma, "float").matrix
    prod = sys1.N @ gg
    assert abs(prod).max() <= 1e-9 * abs(sys1.N).max() * abs(gg).max()


@pytest.mark.parametrize("c", [0.005, 0.3, 1.0, -1.0])
def test_block_solver_matches_dense(sys1, smooth_x0, c):
    m = system_matrix(sys1, c).toarray()
    d = sys1.scaling()
    for transpose in (False, True):
        b = (m.T if transpose else m) @ smooth_x0
        ref = d * np.linalg.solve(((m.T if transpose else m) * d[None, :]) * d[:, None], d * b)
        got = sys1.solver(c).solve(b, transpose=transpose)
        # the scaled system has condition number ~1e10, so agreement to ~1e-6 is all rounding allows
        assert enorm(sys1, got - ref) <= 1e-6 * enorm(sys1, ref)
        assert enorm(sys1, got - smooth_x0) <= 1e-6 * enorm(sys1, smooth_x0)


# ---------------------------------------------------------------------------
# Crank-Nicolson


def test_energy_conserved_per_step(sys1, smooth_x0):
    res = run_simulation(sys1, smooth_x0, CNConfig(0.01, 100))
    e = np.array(res.energies)
    assert np.max(np.abs(np.diff(e))) <= 1e-10 * e[0]
    assert res.energy_drift <= 1e-10


def test_zero_data_stays_zero(sys1):
    res = run_simulation(sys1, np.zeros(sys1.size), CNConfig(0.01, 5))
    assert not np.any(res.final.x) and res.energy_drift == 0


def test_zero_steps_echo_initial_state(sys1, smooth_x0):
    res = run_simulation(sys1, smooth_x0, CNConfig(0.01, 0))
    assert np.array_equal(res.final.x, smooth_x0) and len(res.energies) == 1


def test_time_reversal(sys1, smooth_x0):
    fwd = run_simulation(sys1, smooth_x0, CNConfig(0.01, 50)).final.x
    back = run_simulation(sys1, fwd, CNConfig(-0.01, 50)).final.x
    assert enorm(sys1, back - smooth_x0) <= 1e-9 * enorm(sys1, smooth_x0)


def test_dense_and_sparse_steppers_agree(sys1, smooth_x0):
    x = {s: run_simulation(sys1, smooth_x0, CNConfig(0.02, 10, solver=s)).final.x for s in ("dense", "sparse")}
    assert enorm(sys1, x["dense"] - x["sparse"]) <= 1e-8 * enorm(sys1, x["dense"])


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=10, deadline=None)
def test_step_is_linear(sys1, seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, sys1.size))
    st_ = CNStepper(sys1, CNConfig(0.01, 1))
    lhs = st_.step(EBState(0.0, a * x + b * y)).x
    rhs = a * st_.step(EBState(0.0, x)).x + b * st_.step(EBState(0.0, y)).x
    assert enorm(sys1, lhs - rhs) <= 1e-8 * (enorm(sys1, a * x) + enorm(sys1, b * y) + 1e-300)


def test_step_operator_on_unit_circle(sys1):
    assert cn_eigenvalue_check(sys1, 0.01) <= 1e-8


def test_smoothing_does_not_add_energy(sys1):
    rng = np.random.default_rng(7)
    x = rng.standard_normal(sys1.size) * sys1.scaling()
    y = prepare_initial_data(sys1, x, passes=1)
    assert sys1.energy(y) <= sys1.energy(x) * (1 + 1e-10)


def test_smoothing_routes_agree(sys1):
    x = elliptic_projection(sys1, SmoothTriple())
    d = prepare_initial_data(sys1, x, method="dense")
    s = prepare_initial_data(sys1, x, method="sparse")
    assert enorm(sys1, d - s) <= 1e-7 * enorm(sys1, d)


def test_csv_output(sys1, smooth_x0, tmp_path):
    path = tmp_path / "run.csv"
    run_simulation(sys1, smooth_x0, CNConfig(0.01, 3)).write_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["step", "t", "energy", "norm_sigma", "norm_E", "norm_B"]
    assert len(rows) == 5 and float(rows[-1][1]) == pytest.approx(0.03)


@pytest.mark.parametrize("kw", [dict(dt=0.0, steps=1), dict(dt=float("nan"), steps=1), dict(dt=0.1, steps=-1),
                                dict(dt=0.1, steps=1, solver="magic")])
def test_cn_config_validation(kw):
    with pytest.raises(ValueError):
        CNConfig(**kw)


# ---------------------------------------------------------------------------
# elliptic projection


def test_projection_is_idempotent(sys1, smooth_x0):
    again = elliptic_projection(sys1, smooth_x0)
    assert enorm(sys1, again - smooth_x0) <= 1e-10 * enorm(sys1, smooth_x0)


def test_projection_reproduces_discrete_triples(sys1):
    target = PolyTriple()
    x = elliptic_projection(sys1, target)
    err = projection_error(sys1, x, target)
    assert err.total <= 1e-8


def test_projection_of_smooth_target_is_accurate(sys1):
    x = elliptic_projection(sys1, SmoothTriple())
    assert projection_error(sys1, x, SmoothTriple()).total <= 1e-6


def test_bilinear_transpose_solve(sys1):
    rng = np.random.default_rng(3)
    b = rng.standard_normal(sys1.size)
    y = solve_bilinear(sys1, b, transpose=True)
    d = sys1.scaling()
    r = d * (system_matrix(sys1, 1.0).T @ y - b)  # residual in equilibrated coordinates
    assert np.abs(r).max() <= 1e-8 * np.abs(d * b).max()


@pytest.mark.parametrize("n", [2, 5, 12])
def test_quadrature_exact_on_monomials(n):
    from math import factorial

    bary, w = tet_quadrature(n)
    assert w.sum() == pytest.approx(1.0)
    rng = np.random.default_rng(n)
    for _ in range(10):
        e = rng.multinomial(2 * n - 1, [0.25] * 4)
        exact = 6 * np.prod([factorial(int(a)) for a in e]) / factorial(int(e.sum()) + 3)
        assert w @ np.prod(bary ** e, axis=1) == pytest.approx(exact, rel=1e-12)


# ---------------------------------------------------------------------------
# inf-sup


def test_infsup_positive_and_routes_agree(sys1):
    dense = infsup_estimate(sys1, "dense").gamma_h
    it = infsup_estimate(sys1, "iterative").gamma_h
    assert dense > 1e-3
    assert dense == pytest.approx(it, rel=1e-6)


def test_infsup_negative_control(sys1):
    rep = infsup_estimate(sys1, "dense", drop_b_block=True)
    assert rep.control and rep.gamma_h < 1e-8
