"""QP data types: minimize 1/2 x'Px + q'x subject to l <= Ax <= u."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from agingmpc.errors import DimensionError, InvalidInputError

# bounds at or beyond this magnitude are treated as infinite
INFINITY = 1e20

SOLVED = "solved"
MAX_ITERATIONS = "max-iterations"
PRIMAL_INFEASIBLE = "primal-infeasible-certificate"
STATUSES = (SOLVED, MAX_ITERATIONS, PRIMAL_INFEASIBLE)


def _as_vector(v, length, name):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape[0] != length:
        raise DimensionError(f"{name} has length {arr.shape[0]}, expected {length}")
    return arr


@dataclass(frozen=True, eq=False)
class QpProblem:
    """Convex QP with two-sided linear constraints.

    ``p_matrix`` must be symmetric positive semidefinite; only its upper
    triangle is used by the solver. Bounds may be infinite.
    """

    p_matrix: sp.csc_matrix
    q_vector: np.ndarray
    a_matrix: sp.csc_matrix
    lower: np.ndarray
    upper: np.ndarray
    check_psd: bool = field(default=True, repr=False)

    def __post_init__(self):
        P = sp.csc_matrix(self.p_matrix, dtype=float)
        A = sp.csc_matrix(self.a_matrix, dtype=float)
        n = P.shape[0]
        if P.shape != (n, n):
            raise DimensionError(f"P must be square, got {P.shape}")
        if A.shape[1] != n:
            raise DimensionError(f"A has {A.shape[1]} columns, expected {n}")
        m = A.shape[0]
        q = _as_vector(self.q_vector, n, "q")
        lo = _as_vector(self.lower, m, "lower")
        hi = _as_vector(self.upper, m, "upper")
        lo = np.where(lo <= -INFINITY, -np.inf, lo)
        hi = np.where(hi >= INFINITY, np.inf, hi)
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or not np.all(np.isfinite(q)):
            raise InvalidInputError("q and bounds must not contain NaN")
        if np.any(lo > hi):
            i = int(np.argmax(lo > hi))
            raise InvalidInputError(f"lower[{i}] = {lo[i]} exceeds upper[{i}] = {hi[i]}")
        if self.check_psd:
            _check_psd(P)
        object.__setattr__(self, "p_matrix", P)
        object.__setattr__(self, "a_matrix", A)
        object.__setattr__(self, "q_vector", q)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n(self) -> int:
        return self.p_matrix.shape[0]

    @property
    def m(self) -> int:
        return self.a_matrix.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.p_matrix @ x) + self.q_vector @ x)


def _check_psd(P: sp.csc_matrix, n_directions: int = 16) -> None:
    if P.nnz == 0:
        return
    scale = abs(P).max()
    asym = abs(P - P.T).max() if P.nnz else 0.0
    if asym > 1e-10 * scale:
        raise InvalidInputError(f"P is not symmetric (max asymmetry {asym:g})")
    if np.any(P.diagonal() < -1e-12 * scale):
        raise InvalidInputError("P has a negative diagonal entry")
    rng = np.random.default_rng(0)
    for _ in range(n_directions):
        d = rng.standard_normal(P.shape[0])
        if d @ (P @ d) < -1e-10 * scale * (d @ d):
            raise InvalidInputError("P has negative curvature")


@dataclass(frozen=True, eq=False)
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    iterations: int
    polished: bool = False
    rho: float = float("nan")

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


@dataclass(frozen=True)
class SolverSettings:
    """Operator-splitting solver settings.

    ``rho`` is the initial step parameter; it is rebalanced every
    ``adaptive_rho_interval`` iterations when the residual ratio drifts by
    more than ``adaptive_rho_tolerance``. After ``adaptive_rho_free_updates``
    changes the interval doubles with every further change, so rho
    eventually settles (endless rebalancing can cycle). Periodic polish
    attempts back off the same way after each failure.
    """

    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_prim_inf: float = 1e-6
    max_iterations: int = 20000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 25
    adaptive_rho_tolerance: float = 5.0
    adaptive_rho_free_updates: int = 10
    scaling_iterations: int = 10
    polish: bool = True
    polish_interval: int = 25
    polish_delta: float = 1e-7
    polish_refine_iterations: int = 3
    warm_start: bool = True

    def __post_init__(self):
        if not (self.eps_abs > 0 and self.eps_rel > 0 and self.eps_prim_inf > 0):
            raise InvalidInputError("tolerances must be positive")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be at least 1")
        if not self.rho > 0 or not self.sigma > 0:
            raise InvalidInputError("rho and sigma must be positive")
        if not 0 < self.alpha < 2:
            raise InvalidInputError("alpha must lie in (0, 2)")
        if self.adaptive_rho_interval < 1 or self.polish_interval < 1:
            raise InvalidInputError("intervals must be at least 1")
        if self.adaptive_rho_free_updates < 0:
            raise InvalidInputError("adaptive_rho_free_updates must be nonnegative")


def kkt_residuals(problem: QpProblem, x, y) -> tuple[float, float]:
    """Infinity-norm primal and dual residuals of (x, y).

    primal: ||Ax - proj_[l,u](Ax)||, dual: ||Px + q + A'y||.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape[0] != problem.n:
        raise DimensionError(f"x has length {x.shape[0]}, expected {problem.n}")
    if y.shape[0] != problem.m:
        raise DimensionError(f"y has length {y.shape[0]}, expected {problem.m}")
    ax = problem.a_matrix @ x
    prim = np.abs(ax - np.clip(ax, problem.lower, problem.upper))
    dual = np.abs(problem.p_matrix @ x + problem.q_vector + problem.a_matrix.T @ y)
    return (float(prim.max()) if prim.size else 0.0,
            float(dual.max()) if dual.size else 0.0)
