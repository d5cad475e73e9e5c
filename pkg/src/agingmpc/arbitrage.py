"""Aging-aware price-arbitrage planner.

Decision variables per step k = 1..H are (b+_k, b-_k, q_k), interleaved in
that order; b_k = b+_k - b-_k is the discharge power (W) applied during
interval k and q_k the charge (Wh) after it, with q_0 the current charge.

    minimize  (1/H) sum_k [ -p_k dt b_k + gamma kappa (b+_k + b-_k) ]
              + eta (q_H - Q/2)^2
    s.t.      q_k = q_{k-1} - dt b_k,   0 <= b+_k, b-_k <= C Q,   0 <= q_k <= Q

Inputs and plans are in W and Wh. Inside the QP, power and energy are in
MW and MWh so that p dt b is a payment in USD; eta is then in USD/MWh^2 and
gamma in USD per unit of normalized loss rate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from agingmpc.errors import InvalidInputError
from agingmpc.plan import Plan, RecedingSolver, cancel_overlap, check_common, shift_blocks
from agingmpc.qp import QpProblem, SolverSettings

log = logging.getLogger(__name__)

DEFAULT_HORIZON = 24
DEFAULT_ETA = 1.0

_NVAR = 3
_NROW = 4
# W -> MW
_UNIT = 1e-6


@dataclass(frozen=True, eq=False)
class ArbitragePlanInput:
    charge_now: float
    capacity_now: float
    aging_coeff: float
    prices: np.ndarray
    gamma: float
    eta_term: float = DEFAULT_ETA
    dt: float = 1.0
    c_rate_max: float = 1.0 / 3.0

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float).reshape(-1)
        object.__setattr__(self, "prices", prices)
        check_common(self.charge_now, self.capacity_now, self.aging_coeff, self.gamma,
                     self.eta_term, self.dt, self.c_rate_max, max(prices.shape[0], 1))
        if prices.shape[0] < 1:
            raise InvalidInputError("prices must be nonempty")
        if not np.all(np.isfinite(prices)):
            raise InvalidInputError("prices must be finite")
        if np.any(prices < 0):
            log.info("negative prices in planning horizon (%d entries)", int(np.sum(prices < 0)))

    @property
    def horizon(self) -> int:
        return int(self.prices.shape[0])


def _structure(horizon: int, dt: float, eta: float):
    n = _NVAR * horizon
    m = _NROW * horizon
    P = sp.csc_matrix(([2.0 * eta], ([n - 1], [n - 1])), shape=(n, n))
    rows, cols, vals = [], [], []
    for k in range(horizon):
        bp, bm, q = _NVAR * k, _NVAR * k + 1, _NVAR * k + 2
        r = _NROW * k
        # dynamics: q_k - q_{k-1} + dt (b+_k - b-_k) = 0
        rows += [r, r, r]
        cols += [q, bp, bm]
        vals += [1.0, dt, -dt]
        if k > 0:
            rows.append(r)
            cols.append(q - _NVAR)
            vals.append(-1.0)
        rows += [r + 1, r + 2, r + 3]
        cols += [bp, bm, q]
        vals += [1.0, 1.0, 1.0]
    A = sp.csc_matrix((vals, (rows, cols)), shape=(m, n))
    return P, A


def _vectors(inp: ArbitragePlanInput):
    H = inp.horizon
    Q = inp.capacity_now * _UNIT
    q0 = min(max(inp.charge_now * _UNIT, 0.0), Q)
    bmax = inp.c_rate_max * Q
    aging = inp.gamma * inp.aging_coeff / _UNIT
    q = np.zeros(_NVAR * H)
    q[0::_NVAR] = (-inp.prices * inp.dt + aging) / H
    q[1::_NVAR] = (inp.prices * inp.dt + aging) / H
    q[-1] = -inp.eta_term * Q
    lo = np.zeros(_NROW * H)
    hi = np.empty(_NROW * H)
    hi[0::_NROW] = 0.0
    lo[0] = hi[0] = q0
    hi[1::_NROW] = bmax
    hi[2::_NROW] = bmax
    hi[3::_NROW] = Q
    return q, lo, hi


def _constant(inp: ArbitragePlanInput) -> float:
    return inp.eta_term * (inp.capacity_now * _UNIT) ** 2 / 4.0


def build_problem(inp: ArbitragePlanInput) -> QpProblem:
    """QP for one planning step in MW/MWh units (the constant eta Q^2 / 4 is omitted)."""
    P, A = _structure(inp.horizon, inp.dt, inp.eta_term)
    q, lo, hi = _vectors(inp)
    return QpProblem(P, q, A, lo, hi)


def _tidy(x):
    x = x.copy()
    x[0::_NVAR], x[1::_NVAR] = cancel_overlap(x[0::_NVAR], x[1::_NVAR])
    return x


def _shift(x, y):
    return shift_blocks(x, 0, _NVAR), shift_blocks(y, 0, _NROW)


class ArbitragePlanner:
    """Receding-horizon arbitrage planner with a persistent solver workspace."""

    def __init__(self, settings: SolverSettings | None = None):
        self._rs = RecedingSolver(settings)

    def plan(self, inp: ArbitragePlanInput) -> Plan:
        key = (inp.horizon, inp.dt, inp.eta_term)
        q, lo, hi = _vectors(inp)

        def build():
            P, A = _structure(inp.horizon, inp.dt, inp.eta_term)
            return QpProblem(P, q, A, lo, hi)

        sol = self._rs.solve(key, build, q, lo, hi, shift=_shift, tidy=_tidy)
        x = sol.x
        bp, bm = cancel_overlap(x[0::_NVAR], x[1::_NVAR])
        charge = x[2::_NVAR]
        obj = float(q[0::_NVAR] @ bp + q[1::_NVAR] @ bm
                    + inp.eta_term * charge[-1] ** 2 + q[-1] * charge[-1]
                    + _constant(inp))
        return Plan(power=(bp - bm) / _UNIT, charge=charge / _UNIT, objective_value=obj,
                    discharge=bp / _UNIT, charging=bm / _UNIT, status=sol.status,
                    iterations=sol.iterations)

    def policy_action(self, inp: ArbitragePlanInput) -> float:
        return float(self.plan(inp).power[0])

    def reset(self) -> None:
        self._rs.reset()


def plan(inp: ArbitragePlanInput, settings: SolverSettings | None = None) -> Plan:
    return ArbitragePlanner(settings).plan(inp)


def policy_action(inp: ArbitragePlanInput, settings: SolverSettings | None = None) -> float:
    """First planned power b_{t+1}, applied during the coming interval."""
    return float(plan(inp, settings).power[0])
