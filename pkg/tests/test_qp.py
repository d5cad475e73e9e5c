import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from agingmpc.errors import DimensionError, InvalidInputError
from agingmpc.qp import (
    MAX_ITERATIONS, PRIMAL_INFEASIBLE, SOLVED, QpProblem, Solver, SolverSettings,
    kkt_residuals, solve,
)
from oracles import qp_enumerate, random_qp

TOL = 1e-6


def assert_kkt(problem, sol, tol=TOL):
    assert sol.status == SOLVED
    prim, dual = kkt_residuals(problem, sol.x, sol.y)
    assert prim <= tol and dual <= tol


class TestSpecExamples:
    def test_interior_optimum(self):
        pr = QpProblem(np.eye(1), [-1.0], np.eye(1), [0.0], [10.0])
        s = solve(pr)
        assert s.x[0] == pytest.approx(1.0, abs=1e-8)
        assert_kkt(pr, s)

    def test_active_lower_bound_lp(self):
        pr = QpProblem(np.zeros((1, 1)), [1.0], np.eye(1), [3.0], [10.0])
        s = solve(pr)
        assert s.x[0] == pytest.approx(3.0, abs=1e-8)
        assert s.y[0] == pytest.approx(-1.0, abs=1e-8)
        assert_kkt(pr, s)

    def test_infinite_bounds(self):
        pr = QpProblem(2 * np.eye(2), [-2.0, 4.0], np.eye(2), [-np.inf, -1e30], [np.inf, 1e30])
        s = solve(pr)
        np.testing.assert_allclose(s.x, [1.0, -2.0], atol=1e-8)


class TestKktResiduals:
    def test_exact_point(self):
        pr = QpProblem(np.eye(1), [-1.0], np.eye(1), [0.0], [10.0])
        assert kkt_residuals(pr, [1.0], [0.0]) == (0.0, 0.0)

    def test_perturbed_unconstrained(self):
        rng = np.random.default_rng(3)
        M = rng.normal(size=(4, 4))
        Pm = M @ M.T + np.eye(4)
        q = rng.normal(size=4)
        xs = np.linalg.solve(Pm, -q)
        d = 1e-3 * rng.normal(size=4)
        pr = QpProblem(Pm, q, np.zeros((0, 4)), [], [])
        prim, dual = kkt_residuals(pr, xs + d, np.zeros(0))
        assert prim == 0.0
        assert dual == pytest.approx(np.abs(Pm @ d).max(), rel=1e-9)

    def test_feasible_zero_cost(self):
        pr = QpProblem(np.zeros((2, 2)), [0.0, 0.0], np.eye(2), [-1.0, 0.0], [1.0, 2.0])
        assert kkt_residuals(pr, [0.5, 1.0], [0.0, 0.0]) == (0.0, 0.0)

    def test_dimension_mismatch(self):
        pr = QpProblem(np.eye(2), [0.0, 0.0], np.eye(2), [0, 0], [1, 1])
        with pytest.raises(DimensionError):
            kkt_residuals(pr, [1.0], [0.0, 0.0])
        with pytest.raises(DimensionError):
            kkt_residuals(pr, [1.0, 1.0], [0.0])


class TestValidation:
    def test_lower_above_upper(self):
        with pytest.raises(InvalidInputError):
            QpProblem(np.eye(1), [0.0], np.eye(1), [1.0], [0.0])

    def test_not_psd(self):
        with pytest.raises(InvalidInputError):
            QpProblem(np.array([[1.0, 0.0], [0.0, -1.0]]), [0, 0], np.eye(2), [0, 0], [1, 1])

    def test_not_symmetric(self):
        with pytest.raises(InvalidInputError):
            QpProblem(np.array([[1.0, 1.0], [0.0, 1.0]]), [0, 0], np.eye(2), [0, 0], [1, 1])

    def test_dimensions(self):
        with pytest.raises(DimensionError):
            QpProblem(np.eye(2), [0.0], np.eye(2), [0, 0], [1, 1])
        with pytest.raises(DimensionError):
            QpProblem(np.eye(2), [0, 0], np.eye(3), [0, 0, 0], [1, 1, 1])

    @pytest.mark.parametrize("kw", [dict(eps_abs=0.0), dict(max_iterations=0), dict(alpha=2.0),
                                    dict(rho=-1.0), dict(adaptive_rho_interval=0),
                                    dict(adaptive_rho_free_updates=-1)])
    def test_settings(self, kw):
        with pytest.raises(InvalidInputError):
            SolverSettings(**kw)


class TestStatuses:
    def test_primal_infeasible(self):
        A = np.array([[1.0, 1.0], [1.0, 1.0]])
        pr = QpProblem(np.eye(2), [0.0, 0.0], A, [2.0, -np.inf], [np.inf, 1.0])
        s = solve(pr)
        assert s.status == PRIMAL_INFEASIBLE
        # certificate: A'y = 0 and u'y+ + l'y- < 0
        assert np.abs(A.T @ s.y).max() <= 1e-6 * np.abs(s.y).max()

    def test_max_iterations(self):
        rng = np.random.default_rng(0)
        P, q, A, lo, hi = random_qp(rng, 6, 10)
        s = solve(QpProblem(P, q, A, lo, hi), SolverSettings(max_iterations=1, polish=False))
        assert s.status == MAX_ITERATIONS and s.iterations == 1


class TestRandomAgainstOracle:
    def test_suite(self):
        rng = np.random.default_rng(11)
        for _ in range(60):
            P, q, A, lo, hi = random_qp(rng)
            pr = QpProblem(P, q, A, lo, hi)
            s = solve(pr)
            assert_kkt(pr, s)
            x, _ = qp_enumerate(P, q, A, lo, hi)
            assert np.abs(s.x - x).max() <= 1e-4

    @given(st.integers(0, 2**32 - 1))
    def test_objective_not_worse_than_oracle(self, seed):
        P, q, A, lo, hi = random_qp(np.random.default_rng(seed))
        pr = QpProblem(P, q, A, lo, hi)
        s = solve(pr)
        x, _ = qp_enumerate(P, q, A, lo, hi)
        f_oracle = pr.objective(x)
        assert pr.objective(s.x) <= f_oracle + 1e-6 * (1 + abs(f_oracle))
        assert_kkt(pr, s)


class TestWarmStartAndDeterminism:
    def problem(self, seed=5):
        return QpProblem(*random_qp(np.random.default_rng(seed)))

    def test_warm_resolve_is_fast(self):
        pr = self.problem()
        solver = Solver(pr)
        first = solver.solve()
        again = solver.solve(first)
        assert again.iterations <= 10
        np.testing.assert_allclose(again.x, first.x, atol=1e-8)

    def test_bit_identical(self):
        a = solve(self.problem(9))
        b = solve(self.problem(9))
        assert a.x.tobytes() == b.x.tobytes() and a.y.tobytes() == b.y.tobytes()
        assert a.iterations == b.iterations

    def test_update_data(self):
        pr = QpProblem(sp.eye(2), [0.0, 0.0], sp.eye(2), [1.0, 1.0], [5.0, 5.0])
        solver = Solver(pr)
        np.testing.assert_allclose(solver.solve().x, [1.0, 1.0], atol=1e-8)
        solver.update(q=[-3.0, -10.0], upper=[5.0, 4.0])
        np.testing.assert_allclose(solver.solve().x, [3.0, 4.0], atol=1e-8)
        with pytest.raises(DimensionError):
            solver.update(q=[1.0])
        with pytest.raises(InvalidInputError):
            solver.update(lower=[6.0, 0.0])


class TestBandedStructure:
    """A chain problem like the planners': many rows, one factorization."""

    def test_chain(self):
        n = 60
        D = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n))
        Pm = (D.T @ D + 1e-3 * sp.eye(n)).tocsc()
        rng = np.random.default_rng(2)
        q = rng.normal(size=n)
        A = sp.vstack([sp.eye(n), D]).tocsc()
        lo = np.concatenate([-np.ones(n), -0.2 * np.ones(n - 1)])
        hi = -lo
        pr = QpProblem(Pm, q, A, lo, hi)
        s = solve(pr)
        assert_kkt(pr, s)
        cp = pytest.importorskip("cvxpy")
        x = cp.Variable(n)
        cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, Pm.toarray()) + q @ x),
                   [A @ x >= lo, A @ x <= hi]).solve(solver="CLARABEL")
        np.testing.assert_allclose(s.x, x.value, atol=1e-5)
