"""Aging-aware load-smoothing planner.

The battery runs in parallel with a load w, so the net power drawn is
z = w + b (b > 0 discharges the battery). At time t the planner chooses
b_t, ..., b_{t+H}:

    minimize  (1/H) sum_{k=1..H} (z_k - z_{k-1})^2
              + (gamma kappa / H) sum_{k=0..H} (b+_k + b-_k)
              + eta (q_H - Q/2)^2
    s.t.      z_0 = w_t + b_0,  z_k = w_hat_k + b_k,  z_k >= 0
              q_k = q_{k-1} - dt b_{k-1}  (k = 1..H, q_0 = charge now)
              0 <= b+_k, b-_k <= C Q,  0 <= q_k <= Q

Variable layout: block 0 is (b+_0, b-_0, z_0); block k >= 1 is
(b+_k, b-_k, z_k, q_k). Inputs and plans are in W and Wh; the QP itself is
posed in kW and kWh.

With ``anchor_previous`` set and ``prev_total`` known, the term
(z_0 - z_prev)^2 / H is added so the first move is also smoothed against the
realized net power of the previous interval. It is off by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from agingmpc.errors import InvalidInputError
from agingmpc.plan import Plan, RecedingSolver, cancel_overlap, check_common
from agingmpc.qp import QpProblem, SolverSettings

DEFAULT_DT = 1.0 / 3.0
DEFAULT_HORIZON = 18
DEFAULT_ETA = 0.5
DEFAULT_C_RATE = 0.3

# W -> kW
_UNIT = 1e-3
_HEAD_VARS = 3
_HEAD_ROWS = 4
_NVAR = 4
_NROW = 6


@dataclass(frozen=True, eq=False)
class SmoothingPlanInput:
    charge_now: float
    capacity_now: float
    aging_coeff: float
    load_now: float
    forecasts: np.ndarray
    gamma: float
    eta_term: float = DEFAULT_ETA
    dt: float = DEFAULT_DT
    c_rate_max: float = DEFAULT_C_RATE
    prev_total: float | None = None
    anchor_previous: bool = False

    def __post_init__(self):
        fc = np.asarray(self.forecasts, dtype=float).reshape(-1)
        object.__setattr__(self, "forecasts", fc)
        check_common(self.charge_now, self.capacity_now, self.aging_coeff, self.gamma,
                     self.eta_term, self.dt, self.c_rate_max, max(fc.shape[0], 1))
        if fc.shape[0] < 1:
            raise InvalidInputError("forecasts must be nonempty")
        if not np.all(np.isfinite(fc)) or np.any(fc < 0):
            raise InvalidInputError("forecasts must be finite and nonnegative")
        if not (np.isfinite(self.load_now) and self.load_now >= 0):
            raise InvalidInputError(f"load_now must be nonnegative, got {self.load_now}")

    @property
    def horizon(self) -> int:
        return int(self.forecasts.shape[0])

    @property
    def anchored(self) -> bool:
        return self.anchor_previous and self.prev_total is not None


def _offset(k: int) -> int:
    return 0 if k == 0 else _HEAD_VARS + _NVAR * (k - 1)


def _row(k: int) -> int:
    return 0 if k == 0 else _HEAD_ROWS + _NROW * (k - 1)


def _sizes(horizon: int) -> tuple[int, int]:
    return _HEAD_VARS + _NVAR * horizon, _HEAD_ROWS + _NROW * horizon


def _structure(horizon: int, dt: float, eta: float, anchored: bool = False):
    n, m = _sizes(horizon)
    z_idx = np.array([_offset(k) + 2 for k in range(horizon + 1)])
    diff = sp.diags([-np.ones(horizon), np.ones(horizon)], [0, 1],
                    shape=(horizon, horizon + 1))
    pz = (2.0 / horizon) * (diff.T @ diff).tocoo()
    rows = list(z_idx[pz.row])
    cols = list(z_idx[pz.col])
    vals = list(pz.data)
    if anchored:
        rows.append(2)
        cols.append(2)
        vals.append(2.0 / horizon)
    q_last = _offset(horizon) + 3
    rows.append(q_last)
    cols.append(q_last)
    vals.append(2.0 * eta)
    P = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))

    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for k in range(horizon + 1):
        o, r = _offset(k), _row(k)
        bp, bm, z = o, o + 1, o + 2
        # z_k - b+_k + b-_k = load
        put(r, z, 1.0)
        put(r, bp, -1.0)
        put(r, bm, 1.0)
        put(r + 1, bp, 1.0)
        put(r + 2, bm, 1.0)
        put(r + 3, z, 1.0)
        if k > 0:
            q = o + 3
            po = _offset(k - 1)
            # q_k - q_{k-1} + dt (b+_{k-1} - b-_{k-1}) = 0
            put(r + 4, q, 1.0)
            put(r + 4, po, dt)
            put(r + 4, po + 1, -dt)
            if k > 1:
                put(r + 4, po + 3, -1.0)
            put(r + 5, q, 1.0)
    A = sp.csc_matrix((vals, (rows, cols)), shape=(m, n))
    return P, A


def _vectors(inp: SmoothingPlanInput):
    H = inp.horizon
    n, m = _sizes(H)
    Q = inp.capacity_now * _UNIT
    q0 = min(max(inp.charge_now * _UNIT, 0.0), Q)
    bmax = inp.c_rate_max * Q
    aging = inp.gamma * inp.aging_coeff / _UNIT / H
    loads = np.concatenate([[inp.load_now], inp.forecasts]) * _UNIT
    q = np.zeros(n)
    lo = np.zeros(m)
    hi = np.zeros(m)
    o = np.array([_offset(k) for k in range(H + 1)])
    r = np.array([_row(k) for k in range(H + 1)])
    q[o] = q[o + 1] = aging
    lo[r] = hi[r] = loads
    hi[r + 1] = hi[r + 2] = bmax
    hi[r + 3] = np.inf
    lo[r[1] + 4] = hi[r[1] + 4] = q0
    hi[r[1:] + 5] = Q
    q[_offset(H) + 3] = -inp.eta_term * Q
    if inp.anchored:
        q[2] = -2.0 * inp.prev_total * _UNIT / H
    return q, lo, hi


def _constant(inp: SmoothingPlanInput) -> float:
    c = inp.eta_term * (inp.capacity_now * _UNIT) ** 2 / 4.0
    if inp.anchored:
        c += (inp.prev_total * _UNIT) ** 2 / inp.horizon
    return c


def build_problem(inp: SmoothingPlanInput) -> QpProblem:
    """QP for one planning step in kW/kWh units (the constant eta Q^2 / 4 is omitted)."""
    P, A = _structure(inp.horizon, inp.dt, inp.eta_term, inp.anchored)
    q, lo, hi = _vectors(inp)
    return QpProblem(P, q, A, lo, hi)


def _tidy(x):
    x = x.copy()
    idx = np.array([_offset(k) for k in range((x.shape[0] - _HEAD_VARS) // _NVAR + 1)])
    x[idx], x[idx + 1] = cancel_overlap(x[idx], x[idx + 1])
    return x


def _shift(x, y):
    """Advance a solution one step: block k+1 becomes block k, the last is repeated."""
    if x.shape[0] < _HEAD_VARS + 2 * _NVAR:
        return x, y
    xs = np.concatenate([x[_HEAD_VARS:_HEAD_VARS + _HEAD_VARS],
                         x[_HEAD_VARS + _NVAR:], x[-_NVAR:]])
    ys = np.concatenate([y[_HEAD_ROWS:_HEAD_ROWS + _HEAD_ROWS],
                         y[_HEAD_ROWS + _NROW:], y[-_NROW:]])
    return xs, ys


class SmoothingPlanner:
    """Receding-horizon smoothing planner with a persistent solver workspace."""

    def __init__(self, settings: SolverSettings | None = None):
        self._rs = RecedingSolver(settings)

    def plan(self, inp: SmoothingPlanInput) -> Plan:
        H = inp.horizon
        key = (H, inp.dt, inp.eta_term, inp.anchored)
        q, lo, hi = _vectors(inp)

        def build():
            P, A = _structure(H, inp.dt, inp.eta_term, inp.anchored)
            return QpProblem(P, q, A, lo, hi)

        sol = self._rs.solve(key, build, q, lo, hi, shift=_shift, tidy=_tidy)
        x = sol.x
        idx = np.array([_offset(k) for k in range(H + 1)])
        bp, bm = cancel_overlap(x[idx], x[idx + 1])
        z = x[idx + 2]
        charge = x[idx[1:] + 3]
        obj = float(np.sum(np.diff(z) ** 2) / H
                    + (z[0] ** 2 / H if inp.anchored else 0.0) + q[2] * z[0]
                    + q[idx] @ bp + q[idx + 1] @ bm
                    + inp.eta_term * charge[-1] ** 2 + q[idx[-1] + 3] * charge[-1]
                    + _constant(inp))
        return Plan(power=(bp - bm) / _UNIT, charge=charge / _UNIT, objective_value=obj,
                    discharge=bp / _UNIT, charging=bm / _UNIT, status=sol.status,
                    iterations=sol.iterations)

    def policy_action(self, inp: SmoothingPlanInput) -> float:
        return float(self.plan(inp).power[0])

    def reset(self) -> None:
        self._rs.reset()


def plan(inp: SmoothingPlanInput, settings: SolverSettings | None = None) -> Plan:
    return SmoothingPlanner(settings).plan(inp)


def policy_action(inp: SmoothingPlanInput, settings: SolverSettings | None = None) -> float:
    """Planned b_t, applied during the current interval."""
    return float(plan(inp, settings).power[0])
