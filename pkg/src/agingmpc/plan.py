"""Pieces shared by the arbitrage and smoothing planners."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from agingmpc.aging import BatterySpec, CellParams, long_term_coeffs
from agingmpc.errors import InvalidInputError, SolverError
from agingmpc.qp import QpSolution, Solver, SolverSettings

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Plan:
    """Planned battery power (W, positive = discharge) and charge (Wh).

    ``charge[k]`` is the charge after ``power[k]`` has been applied for one
    interval. Smoothing plans carry one more power entry than charges (the
    last action does not move any planned charge). ``objective_value`` is in
    the planner's internal units and includes the constant part of the
    terminal penalty.
    """

    power: np.ndarray
    charge: np.ndarray
    objective_value: float
    discharge: np.ndarray
    charging: np.ndarray
    status: str = "solved"
    iterations: int = 0

    @property
    def throughput(self) -> float:
        """Sum of |power| over the plan (W)."""
        return float(np.sum(np.abs(self.power)))


def aging_weight(params: CellParams, spec: BatterySpec, throughput_prior: float,
                 cell_capacity: float) -> float:
    """Battery-level aging cost weight per W of |power|.

    Equal to the linearized cell aging-rate slope divided by 3.3 N, so that
    weight * |battery power| is the predicted normalized loss rate (1/h).
    """
    coeffs = long_term_coeffs(params, throughput_prior, cell_capacity)
    return coeffs.approx_coefficient(cell_capacity) / spec.scale


def cancel_overlap(bp: np.ndarray, bm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Remove simultaneous charge/discharge: (b+ - m, b- - m) with m = min(b+, b-)."""
    bp = np.maximum(bp, 0.0)
    bm = np.maximum(bm, 0.0)
    common = np.minimum(bp, bm)
    return bp - common, bm - common


def check_common(charge_now, capacity_now, aging_coeff, gamma, eta_term, dt,
                 c_rate_max, horizon):
    if not capacity_now > 0:
        raise InvalidInputError(f"capacity_now must be positive, got {capacity_now}")
    tol = 1e-9 * capacity_now
    if not (-tol <= charge_now <= capacity_now + tol):
        raise InvalidInputError(
            f"charge_now {charge_now} outside [0, capacity_now={capacity_now}]")
    if not (np.isfinite(aging_coeff) and aging_coeff >= 0):
        raise InvalidInputError(f"aging_coeff must be nonnegative, got {aging_coeff}")
    if not gamma >= 0:
        raise InvalidInputError(f"gamma must be nonnegative, got {gamma}")
    if not eta_term >= 0:
        raise InvalidInputError(f"eta_term must be nonnegative, got {eta_term}")
    if not dt > 0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    if not c_rate_max > 0:
        raise InvalidInputError(f"c_rate_max must be positive, got {c_rate_max}")
    if int(horizon) != horizon or horizon < 1:
        raise InvalidInputError(f"horizon must be a positive integer, got {horizon}")


class RecedingSolver:
    """Keeps one QP workspace per problem structure and warm starts successive solves.

    ``shift`` maps the previous solution's (x, y) to a warm start for the
    next horizon, normally by advancing the trajectories one step.
    """

    def __init__(self, settings: SolverSettings | None = None):
        self.settings = settings or SolverSettings()
        self._key = None
        self._solver: Solver | None = None
        self._prev: QpSolution | None = None

    def solve(self, key, build, q, lower, upper, shift=None, tidy=None) -> QpSolution:
        """Solve with data (q, lower, upper); ``build()`` returns the full problem
        and is only called when ``key`` (the P/A structure) changes.

        ``tidy(x)`` may map an unpolished solution to an equivalent point
        (same objective) from which the polish is retried, e.g. by removing
        simultaneous charge and discharge."""
        if key != self._key or self._solver is None:
            self._solver = Solver(build(), self.settings)
            self._key = key
            self._prev = None
        else:
            self._solver.update(q=q, lower=lower, upper=upper)
        warm = None
        if self._prev is not None:
            x, y = (self._prev.x, self._prev.y) if shift is None else shift(self._prev.x, self._prev.y)
            warm = QpSolution(x=x, y=y, status=self._prev.status, primal_residual=0.0,
                              dual_residual=0.0, iterations=0)
        sol = self._solver.solve(warm)
        if not sol.solved and warm is not None:
            sol = self._solver.solve(None)
        if not sol.solved:
            raise SolverError(sol.status)
        if tidy is not None and not sol.polished and self.settings.polish:
            better = self._solver.repolish(tidy(sol.x), sol.y)
            if better is not None:
                sol = better
        self._prev = sol
        return sol

    def reset(self) -> None:
        self._prev = None


def shift_blocks(v: np.ndarray, head: int, block: int) -> np.ndarray:
    """Drop the first block after a ``head`` prefix and repeat the last block."""
    if v.shape[0] < head + 2 * block:
        return v
    return np.concatenate([v[:head], v[head + block:], v[-block:]])
