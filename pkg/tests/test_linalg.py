import numpy as np
import pytest
import scipy.sparse as sp

from surfnse.assembly import SolverParams, assemble_continuity_rhs, assemble_convection, assemble_system
from surfnse.cases import CaseOnPoints, get_case
from surfnse.linalg import SaddlePointSolver, SolverError, as_csr, solve_step, spmv


def test_spmv_examples():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(spmv(sp.identity(3, format="csr"), x), x)
    np.testing.assert_array_equal(spmv(sp.csr_matrix((3, 3)), x), 0)
    np.testing.assert_array_equal(spmv(sp.csr_matrix([[2, 1], [0, 3]]), np.ones(2)), [3, 3])
    with pytest.raises(ValueError, match="dimension mismatch"):
        spmv(sp.identity(2, format="csr"), x)


def test_as_csr_canonical():
    A = sp.coo_matrix(([1.0, 2.0, 3.0], ([0, 0, 1], [1, 1, 0])), shape=(2, 2))
    C = as_csr(A)
    assert C.has_canonical_format
    assert C[0, 1] == 3.0
    with pytest.raises(ValueError, match="non-finite"):
        as_csr(sp.csr_matrix([[np.nan, 0], [0, 1]]))


@pytest.fixture(scope="module")
def system2(space2):
    prm = SolverParams.for_level(2, space2.h, nu=1.0, dt=0.05, case="sol2b")
    return assemble_system(space2, prm)


def test_recovers_manufactured_solution(system2, rng):
    solver = SaddlePointSolver(system2)
    sigma = 1.5 / system2.params.dt
    K = solver.operator(sigma)
    x = rng.standard_normal(K.shape[0])
    b = K @ x
    nu, npr = system2.n_u, system2.n_p
    sol = solver.solve(sigma, b[:nu], b[nu : nu + npr], rhs_lam=b[-1])
    got = np.concatenate([sol.u, sol.p, [sol.lam]])
    assert np.linalg.norm(got - x) <= 1e-9 * np.linalg.norm(x)
    assert sol.residual <= 1e-10


def test_mean_zero_pressure(system2, rng):
    sol = SaddlePointSolver(system2).solve(
        20.0, rng.standard_normal(system2.n_u), rng.standard_normal(system2.n_p)
    )
    area = system2.m.sum()
    assert abs(system2.m @ sol.p) <= 1e-9 * area * np.abs(sol.p).max()


def test_constant_shift_changes_multiplier_only(system2, rng):
    solver = SaddlePointSolver(system2)
    fu = rng.standard_normal(system2.n_u)
    fp = rng.standard_normal(system2.n_p)
    a = solver.solve(20.0, fu, fp)
    b = solver.solve(20.0, fu, fp + 0.7 * system2.m)
    np.testing.assert_allclose(b.p, a.p, atol=1e-9 * np.abs(a.p).max())
    np.testing.assert_allclose(b.u, a.u, atol=1e-9 * np.abs(a.u).max())
    # continuity row reads B u - S p + m lam = G
    assert b.lam - a.lam == pytest.approx(0.7, rel=1e-8)


def test_stokes_limit_residual(system2, space2):
    data = CaseOnPoints(get_case("sol2b"), space2.surface.qp)
    G = assemble_continuity_rhs(space2, data, 1.0)
    F = system2.M @ np.ones(system2.n_u)
    solver = SaddlePointSolver(system2)
    sol = solver.solve(1e-12, F, G)
    assert sol.residual <= 1e-10


@pytest.mark.parametrize("with_convection", [False, True])
def test_direct_and_gmres_agree(system2, space2, rng, with_convection):
    C = None
    if with_convection:
        C = assemble_convection(space2, rng.standard_normal(system2.n_u), "convective")
    fu = rng.standard_normal(system2.n_u)
    fp = rng.standard_normal(system2.n_p)
    a = SaddlePointSolver(system2, "direct").solve(30.0, fu, fp, C=C)
    b = SaddlePointSolver(system2, "gmres").solve(30.0, fu, fp, C=C)
    xa = np.concatenate([a.u, a.p])
    xb = np.concatenate([b.u, b.p])
    assert np.linalg.norm(xa - xb) <= 1e-8 * np.linalg.norm(xa)
    assert b.iterations > 0


def test_stale_factorisation_reuse(system2, space2, rng):
    solver = SaddlePointSolver(system2, "direct")
    w = rng.standard_normal(system2.n_u)
    fu = rng.standard_normal(system2.n_u)
    fp = np.zeros(system2.n_p)
    C1 = assemble_convection(space2, w, "convective")
    C2 = assemble_convection(space2, 1.01 * w, "convective")
    solver.solve(30.0, fu, fp, C=C1)
    assert solver._stale is not None
    reused = solver.solve(30.0, fu, fp, C=C2)
    fresh = SaddlePointSolver(system2, "direct").solve(30.0, fu, fp, C=C2)
    assert reused.residual <= 1e-10
    np.testing.assert_allclose(reused.u, fresh.u, atol=1e-9 * np.abs(fresh.u).max())


def test_deterministic(system2, rng):
    fu = rng.standard_normal(system2.n_u)
    fp = rng.standard_normal(system2.n_p)
    a = SaddlePointSolver(system2).solve(20.0, fu, fp)
    b = SaddlePointSolver(system2).solve(20.0, fu, fp)
    np.testing.assert_array_equal(a.u, b.u)
    np.testing.assert_array_equal(a.p, b.p)


def test_zero_rhs_and_shape_errors(system2):
    solver = SaddlePointSolver(system2)
    sol = solver.solve(10.0, np.zeros(system2.n_u), np.zeros(system2.n_p))
    assert not sol.u.any() and not sol.p.any()
    with pytest.raises(ValueError, match="right-hand side"):
        solver.solve(10.0, np.zeros(3), np.zeros(system2.n_p))
    with pytest.raises(ValueError, match="unknown solver backend"):
        SaddlePointSolver(system2, "cg")


def test_auto_backend(system2):
    assert SaddlePointSolver(system2, "auto").backend == "direct"


def test_singular_operator_raises(system2):
    # with no mass and zero viscous blocks the velocity block is all zeros
    bad = sp.csr_matrix(system2.M.shape)
    broken = type(system2)(
        space=system2.space,
        params=system2.params,
        M=bad,
        parts=type(system2.parts)(bad, bad, bad),
        B=system2.B,
        K_p=system2.K_p,
        m=system2.m,
    )
    for backend in ("direct", "gmres"):
        with pytest.raises(SolverError, match="structural rank"):
            SaddlePointSolver(broken, backend).solve(0.0, np.ones(system2.n_u), np.zeros(system2.n_p))


def test_solve_step_wrapper(system2, rng):
    fu = rng.standard_normal(system2.n_u)
    u, p = solve_step(system2, 25.0, fu, np.zeros(system2.n_p))
    sol = SaddlePointSolver(system2).solve(25.0, fu, np.zeros(system2.n_p))
    np.testing.assert_array_equal(u, sol.u)
    np.testing.assert_array_equal(p, sol.p)
