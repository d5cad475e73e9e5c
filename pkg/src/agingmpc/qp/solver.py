"""Operator-splitting (ADMM) solver for sparse convex QPs.

The iteration alternates a linear solve with the quasi-definite KKT matrix
[[P + sigma I, A'], [A, -diag(1/rho)]] and a projection onto [l, u]. The
KKT matrix is ordered once per sparsity pattern (reverse Cuthill-McKee),
analysed once, and refactored numerically only when the step parameter rho
changes. Problems are Ruiz-equilibrated before iterating; termination is
tested on unscaled residuals. Once the active set stabilizes, an
equality-constrained polishing solve returns a high-accuracy point.

A :class:`Solver` keeps its workspace across calls so that a sequence of
problems sharing P and A (receding-horizon planning) can update only q, l
and u and warm start from the previous solution.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from agingmpc.errors import DimensionError, InvalidInputError
from agingmpc.qp import _kernels as K
from agingmpc.qp._ldl import etree
from agingmpc.qp.problem import (
    MAX_ITERATIONS, PRIMAL_INFEASIBLE, SOLVED, QpProblem, QpSolution,
    SolverSettings, kkt_residuals,
)

_MIN_SCALING = 1e-4
_MAX_SCALING = 1e4

_STATUS = {K.ST_SOLVED: SOLVED, K.ST_MAX_ITER: MAX_ITERATIONS,
           K.ST_PRIMAL_INF: PRIMAL_INFEASIBLE}


def _limit(v):
    v = np.asarray(v, dtype=float)
    v = np.where(v < _MIN_SCALING, 1.0, v)
    return np.minimum(v, _MAX_SCALING)


def _col_inf_norm(M: sp.csc_matrix) -> np.ndarray:
    if M.shape[0] == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).todense()).reshape(-1)


def _row_inf_norm(M: sp.csc_matrix) -> np.ndarray:
    if M.shape[1] == 0:
        return np.zeros(M.shape[0])
    return np.asarray(abs(M).max(axis=1).todense()).reshape(-1)


def _upper_with_diagonal(P: sp.csc_matrix) -> sp.csc_matrix:
    n = P.shape[0]
    U = sp.triu(P, format="coo")
    # explicit zeros on the diagonal keep the KKT pattern complete
    rows = np.concatenate([U.row, np.arange(n)])
    cols = np.concatenate([U.col, np.arange(n)])
    vals = np.concatenate([U.data, np.zeros(n)])
    out = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    out.sort_indices()
    return out


class Solver:
    """Reusable solver workspace for QPs sharing one (P, A) pair."""

    def __init__(self, problem: QpProblem, settings: SolverSettings | None = None):
        self.settings = settings or SolverSettings()
        self.n = problem.n
        self.m = problem.m
        self._setup_scaling(problem)
        self._setup_kkt()
        self.rho = self.settings.rho
        self.update(q=problem.q_vector, lower=problem.lower, upper=problem.upper)
        self._last: QpSolution | None = None

    # -- setup -------------------------------------------------------------

    def _setup_scaling(self, problem: QpProblem) -> None:
        n, m = self.n, self.m
        P = sp.csc_matrix(problem.p_matrix)
        A = sp.csc_matrix(problem.a_matrix)
        q = problem.q_vector.copy()
        D = np.ones(n)
        E = np.ones(m)
        c = 1.0
        for _ in range(self.settings.scaling_iterations):
            norm_x = _col_inf_norm(P)
            if m:
                norm_x = np.maximum(norm_x, _col_inf_norm(A))
            d = 1.0 / np.sqrt(_limit(norm_x))
            e = 1.0 / np.sqrt(_limit(_row_inf_norm(A))) if m else np.ones(0)
            Dm = sp.diags(d)
            P = (Dm @ P @ Dm).tocsc()
            A = (sp.diags(e) @ A @ Dm).tocsc()
            q = q * d
            D *= d
            E *= e
            mean_p = float(np.mean(_col_inf_norm(P))) if n else 0.0
            gamma = 1.0 / float(_limit(max(mean_p, np.max(np.abs(q), initial=0.0))))
            P = P * gamma
            q = q * gamma
            c *= gamma
        self.D = D
        self.E = E
        self.c = c
        self._P_orig = problem.p_matrix
        self._A_orig = problem.a_matrix
        Pu = _upper_with_diagonal(sp.diags(D) @ problem.p_matrix @ sp.diags(D) * c)
        As = (sp.diags(E) @ problem.a_matrix @ sp.diags(D)).tocsc()
        As.sort_indices()
        self._Pp = Pu.indptr.astype(np.int64)
        self._Pi = Pu.indices.astype(np.int64)
        self._Px = Pu.data.astype(float)
        self._Ap = As.indptr.astype(np.int64)
        self._Ai = As.indices.astype(np.int64)
        self._Ax = As.data.astype(float)

    def _setup_kkt(self) -> None:
        n, m = self.n, self.m
        nk = n + m
        Pp, Pi = self._Pp, self._Pi
        Ap, Ai = self._Ap, self._Ai
        p_cols = np.repeat(np.arange(n), np.diff(Pp))
        a_cols = np.repeat(np.arange(n), np.diff(Ap))
        rows = np.concatenate([Pi, a_cols, n + np.arange(m)])
        cols = np.concatenate([p_cols, n + Ai, n + np.arange(m)])
        kinds = np.concatenate([
            np.where(Pi == p_cols, K.K_PDIAG, K.K_P),
            np.full(Ai.shape[0], K.K_A),
            np.full(m, K.K_CDIAG),
        ]).astype(np.int64)
        srcs = np.concatenate([np.arange(Pi.shape[0]), np.arange(Ai.shape[0]),
                               np.arange(m)]).astype(np.int64)
        pattern = sp.csr_matrix((np.ones(rows.shape[0]), (rows, cols)), shape=(nk, nk))
        pattern = pattern + pattern.T
        perm = np.asarray(reverse_cuthill_mckee(pattern.tocsr(), symmetric_mode=True),
                          dtype=np.int64)
        iperm = np.empty(nk, dtype=np.int64)
        iperm[perm] = np.arange(nk)
        r = iperm[rows]
        cc = iperm[cols]
        lo = np.minimum(r, cc)
        hi = np.maximum(r, cc)
        order = np.lexsort((lo, hi))
        self._Ki = lo[order].astype(np.int64)
        col_of = hi[order]
        self._Kp = np.zeros(nk + 1, dtype=np.int64)
        np.add.at(self._Kp, col_of + 1, 1)
        self._Kp = np.cumsum(self._Kp).astype(np.int64)
        self._kind = kinds[order]
        self._src = srcs[order]
        self._perm = perm
        work = np.empty(nk, dtype=np.int64)
        self._Lnz = np.empty(nk, dtype=np.int64)
        self._parent = np.empty(nk, dtype=np.int64)
        if etree(nk, self._Kp, self._Ki, work, self._Lnz, self._parent) < 0:
            raise RuntimeError("KKT pattern is not upper triangular")

    # -- data updates --------------------------------------------------------

    def update(self, q=None, lower=None, upper=None) -> None:
        """Replace q and/or bounds; P and A are fixed for the workspace."""
        if q is not None:
            q = np.asarray(q, dtype=float).reshape(-1)
            if q.shape[0] != self.n:
                raise DimensionError(f"q has length {q.shape[0]}, expected {self.n}")
            self._q_orig = q.copy()
            self._q = self.c * self.D * q
        if lower is not None or upper is not None:
            lo = self._l_orig if lower is None else np.asarray(lower, dtype=float).reshape(-1)
            hi = self._u_orig if upper is None else np.asarray(upper, dtype=float).reshape(-1)
            if lo.shape[0] != self.m or hi.shape[0] != self.m:
                raise DimensionError("bounds have the wrong length")
            lo = np.where(lo <= -1e20, -np.inf, lo)
            hi = np.where(hi >= 1e20, np.inf, hi)
            if np.any(lo > hi):
                raise InvalidInputError("lower bound exceeds upper bound")
            self._l_orig = lo.copy()
            self._u_orig = hi.copy()
            self._l = self.E * lo
            self._u = self.E * hi
            ckind = np.full(self.m, K.C_INEQ, dtype=np.int64)
            ckind[np.isinf(lo) & np.isinf(hi)] = K.C_FREE
            ckind[(lo == hi)] = K.C_EQ
            self._ckind = ckind

    def problem(self) -> QpProblem:
        return QpProblem(self._P_orig, self._q_orig, self._A_orig,
                         self._l_orig, self._u_orig, check_psd=False)

    # -- solve ---------------------------------------------------------------

    def solve(self, warm_start: QpSolution | None = None) -> QpSolution:
        s = self.settings
        return self._run(warm_start, s.max_iterations, s.adaptive_rho, s.polish_interval)

    def repolish(self, x, y) -> QpSolution | None:
        """Polish a given primal/dual point without iterating.

        Useful when the caller can move a degenerate solution (for example
        one with a free direction) to a vertex whose active set the polish can
        identify. Returns None unless the polish succeeds.
        """
        warm = QpSolution(x=x, y=y, status="solved", primal_residual=0.0,
                          dual_residual=0.0, iterations=0)
        rho = self.rho
        sol = self._run(warm, 0, False, 0, force_warm=True)
        self.rho = rho
        return sol if sol.polished else None

    def _run(self, warm_start, max_iter, adaptive, polish_interval, force_warm=False):
        s = self.settings
        n, m = self.n, self.m
        if warm_start is not None and (s.warm_start or force_warm):
            x0 = np.asarray(warm_start.x, dtype=float).reshape(-1)
            y0 = np.asarray(warm_start.y, dtype=float).reshape(-1)
            if x0.shape[0] != n or y0.shape[0] != m:
                raise DimensionError("warm start has the wrong dimensions")
            x = x0 / self.D
            y = self.c * y0 / self.E
            ax = self._A_orig @ x0
            z = self.E * np.clip(ax, self._l_orig, self._u_orig)
        else:
            x = np.zeros(n)
            y = np.zeros(m)
            z = np.clip(np.zeros(m), self._l, self._u)
        settings_f = np.array([s.sigma, s.alpha, s.eps_abs, s.eps_rel, s.eps_prim_inf,
                               s.adaptive_rho_tolerance, s.polish_delta])
        settings_i = np.array([max_iter, int(adaptive), s.adaptive_rho_interval,
                               int(s.polish), polish_interval, s.polish_refine_iterations,
                               s.adaptive_rho_free_updates],
                              dtype=np.int64)
        info = np.zeros(6)
        K.admm(n, m, self._Pp, self._Pi, self._Px, self._q, self._Ap, self._Ai, self._Ax,
               self._l, self._u, self.D, self.E, self.c, self._ckind,
               self._Kp, self._Ki, self._kind, self._src, self._perm, self._Lnz,
               self._parent, x, z, y, float(self.rho), settings_f, settings_i, info)
        code = int(info[0])
        if code == K.ST_FACTOR_FAIL:
            raise RuntimeError("KKT factorization failed; is P positive semidefinite?")
        self.rho = float(info[4])
        x_out = self.D * x
        y_out = self.E * y / self.c
        sol = QpSolution(x=x_out, y=y_out, status=_STATUS[code],
                         primal_residual=float(info[2]), dual_residual=float(info[3]),
                         iterations=int(info[1]), polished=bool(info[5]), rho=self.rho)
        self._last = sol
        return sol


def solve(problem: QpProblem, settings: SolverSettings | None = None,
          warm_start: QpSolution | None = None) -> QpSolution:
    """Solve a single QP; see :class:`Solver` for repeated solves."""
    return Solver(problem, settings).solve(warm_start)


__all__ = ["Solver", "solve", "kkt_residuals"]
