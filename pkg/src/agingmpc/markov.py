"""Three-state Markov load model: generation, stationary statistics, forecasts.

The transition matrix is column-stochastic: ``transition[i, j]`` is the
probability of moving from state j to state i, so a state distribution s
evolves as s <- P s.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from agingmpc.errors import DegenerateChainError, InvalidInputError, ParseError

STATE_NAMES = ("low", "medium", "high")
DEFAULT_LEVELS = (5000.0, 20000.0, 35000.0)
DEFAULT_TRANSITION = (
    (0.79, 0.22, 0.00),
    (0.05, 0.72, 0.40),
    (0.16, 0.06, 0.60),
)
DEFAULT_START = datetime(2018, 1, 1)
_STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class MarkovLoadModel:
    """Load levels in W and a column-stochastic transition matrix."""

    levels: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_LEVELS))
    transition: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_TRANSITION))
    seed: int = 0

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float).reshape(-1)
        P = np.asarray(self.transition, dtype=float)
        k = levels.shape[0]
        if k < 1 or P.shape != (k, k):
            raise InvalidInputError(f"transition must be {k}x{k}, got {P.shape}")
        if not np.all(np.isfinite(levels)) or np.any(np.diff(levels) <= 0):
            raise InvalidInputError("levels must be finite and strictly increasing")
        if np.any(P < 0) or np.any(P > 1):
            raise InvalidInputError("transition entries must lie in [0, 1]")
        sums = P.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > _STOCHASTIC_TOL * k):
            raise InvalidInputError(f"transition columns must sum to 1, got {sums}")
        levels.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "_powers", [np.eye(k)])

    @property
    def n_states(self) -> int:
        return self.levels.shape[0]

    def power(self, h: int) -> np.ndarray:
        """P^h, memoized by repeated multiplication."""
        powers = self._powers
        while len(powers) <= h:
            powers.append(self.transition @ powers[-1])
        return powers[h]


@dataclass(frozen=True, eq=False)
class LoadSeries:
    """Regularly spaced load trace with its Markov states."""

    start: datetime
    dt: float
    states: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64).reshape(-1)
        power = np.asarray(self.power, dtype=float).reshape(-1)
        if states.shape != power.shape:
            raise InvalidInputError("states and power must have equal length")
        if not self.dt > 0:
            raise InvalidInputError("dt must be positive")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "power", power)

    def __len__(self) -> int:
        return self.power.shape[0]

    def timestamps(self) -> list[datetime]:
        step = timedelta(hours=self.dt)
        return [self.start + i * step for i in range(len(self))]


def stationary(model: MarkovLoadModel) -> np.ndarray:
    """Stationary distribution pi with P pi = pi, sum(pi) = 1.

    Solved from (P - I) pi = 0 with one equation replaced by the
    normalization; a singular system means the chain has no unique
    stationary distribution.
    """
    k = model.n_states
    M = model.transition - np.eye(k)
    M = np.vstack([M[:-1], np.ones(k)])
    rhs = np.zeros(k)
    rhs[-1] = 1.0
    if np.linalg.cond(M) > 1e12:
        raise DegenerateChainError("transition matrix has no unique stationary distribution")
    pi = np.linalg.solve(M, rhs)
    if np.any(pi < -1e-12):
        raise DegenerateChainError("stationary solution has negative entries")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def stationary_mean(model: MarkovLoadModel) -> float:
    return float(model.levels @ stationary(model))


def expected_rmsd(model: MarkovLoadModel) -> float:
    """Stationary RMS of the one-step load difference (W).

    A chain without off-diagonal transitions never changes level, so the
    result is 0 for any initial law even though the stationary law is not
    unique.
    """
    L = model.levels
    if not np.any(model.transition - np.diag(np.diag(model.transition))):
        return 0.0
    pi = stationary(model)
    sq = (L[:, None] - L[None, :]) ** 2
    return float(np.sqrt(np.sum(pi[None, :] * model.transition * sq)))


def forecast(model: MarkovLoadModel, current_state: int, steps_ahead: int) -> float:
    """Conditional mean load ``steps_ahead`` steps after ``current_state``."""
    if int(steps_ahead) != steps_ahead or steps_ahead < 0:
        raise InvalidInputError(f"steps_ahead must be a nonnegative integer, got {steps_ahead}")
    if not 0 <= current_state < model.n_states:
        raise InvalidInputError(f"state {current_state} out of range")
    return float(model.levels @ model.power(int(steps_ahead))[:, current_state])


def forecast_path(model: MarkovLoadModel, current_state: int, horizon: int) -> np.ndarray:
    """Forecasts for steps 1..horizon ahead."""
    return np.array([forecast(model, current_state, h) for h in range(1, horizon + 1)])


def generate(model: MarkovLoadModel, n_steps: int, seed: int | None = None,
             dt: float = 1.0 / 3.0, start: datetime = DEFAULT_START) -> LoadSeries:
    """Sample a load trace; the initial state is drawn from the stationary law."""
    if int(n_steps) != n_steps or n_steps < 1:
        raise InvalidInputError(f"n_steps must be a positive integer, got {n_steps}")
    rng = np.random.default_rng(model.seed if seed is None else seed)
    cdf = np.cumsum(model.transition, axis=0)
    cdf[-1, :] = 1.0
    u = rng.random(int(n_steps))
    states = np.empty(int(n_steps), dtype=np.int64)
    s = int(np.searchsorted(np.cumsum(stationary(model)), u[0], side="right"))
    s = min(s, model.n_states - 1)
    states[0] = s
    for t in range(1, int(n_steps)):
        s = int(np.searchsorted(cdf[:, s], u[t], side="right"))
        states[t] = s
    return LoadSeries(start=start, dt=dt, states=states, power=model.levels[states])


def _state_name(s: int) -> str:
    return STATE_NAMES[s] if s < len(STATE_NAMES) else str(s)


def write_csv(series: LoadSeries, dest) -> None:
    """Write ``timestamp,state,power_kW`` rows to a path or text stream."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            write_csv(series, fh)
        return
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(["timestamp", "state", "power_kW"])
    for ts, s, p in zip(series.timestamps(), series.states, series.power):
        w.writerow([ts.isoformat(), _state_name(int(s)), repr(float(p) / 1000.0)])


def read_csv(src) -> LoadSeries:
    """Inverse of :func:`write_csv`; the step is inferred from the timestamps."""
    if isinstance(src, (str, Path)):
        with open(src, encoding="utf-8", newline="") as fh:
            return read_csv(fh)
    if isinstance(src, bytes):
        src = io.StringIO(src.decode("utf-8"))
    reader = csv.reader(src)
    header = next(reader, None)
    if header != ["timestamp", "state", "power_kW"]:
        raise ParseError(f"unexpected header {header}", 1)
    times, states, power = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", lineno)
        try:
            times.append(datetime.fromisoformat(row[0]))
            name = row[1]
            states.append(STATE_NAMES.index(name) if name in STATE_NAMES else int(name))
            power.append(float(row[2]) * 1000.0)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    if not times:
        raise ParseError("no data rows", 2)
    dt = (times[1] - times[0]).total_seconds() / 3600.0 if len(times) > 1 else 1.0 / 3.0
    return LoadSeries(start=times[0], dt=dt, states=np.array(states), power=np.array(power))
