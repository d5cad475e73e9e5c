"""Closed-loop battery simulations to end of life.

Three applications share one stepping loop: an open-loop square-wave cycling
profile, aging-aware price arbitrage, and aging-aware load smoothing. All
cells of the battery are assumed balanced, so one cell is simulated and
battery quantities are obtained by scaling with 3.3 N.

Loss accrues under a configurable ground-truth aging model ("exact" or
"approximate"); planners always use the linearized rate as their cost.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from agingmpc import markov
from agingmpc.aging import (
    BatterySpec, CellParams, CellState, is_end_of_life, step_cell,
)
from agingmpc.arbitrage import ArbitragePlanInput, ArbitragePlanner
from agingmpc.errors import InfeasibleProfileError, InvalidInputError, SolverError
from agingmpc.market import PriceSeries, repeat_years
from agingmpc.plan import aging_weight
from agingmpc.qp import SolverSettings
from agingmpc.smoothing import SmoothingPlanInput, SmoothingPlanner

log = logging.getLogger(__name__)

HOURS_PER_YEAR = 8760.0


@dataclass(frozen=True)
class CyclingApp:
    """Square wave: charge then discharge at constant current, each for 12/cpd hours."""

    cycles_per_day: float


@dataclass(frozen=True, eq=False)
class ArbitrageApp:
    prices: PriceSeries
    gamma: float
    eta: float = 1.0
    horizon: int = 24

    def __post_init__(self):
        _check_app(self.gamma, self.eta, self.horizon)


@dataclass(frozen=True, eq=False)
class SmoothingApp:
    """Smoothing against a Markov load model (generated with the run seed) or a fixed trace."""

    gamma: float
    model: markov.MarkovLoadModel | None = None
    loads: markov.LoadSeries | None = None
    eta: float = 0.5
    horizon: int = 18
    anchor_previous: bool = False

    def __post_init__(self):
        _check_app(self.gamma, self.eta, self.horizon)


def _check_app(gamma, eta, horizon):
    if not gamma >= 0:
        raise InvalidInputError(f"gamma must be nonnegative, got {gamma}")
    if not eta >= 0:
        raise InvalidInputError(f"eta must be nonnegative, got {eta}")
    if int(horizon) != horizon or horizon < 1:
        raise InvalidInputError(f"horizon must be a positive integer, got {horizon}")


Application = Union[CyclingApp, ArbitrageApp, SmoothingApp]


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Battery, application and run controls.

    ``interest_rates`` are annual; they are converted to per-step rates for
    the NPV. ``desk_years`` limits the run to that many simulated years and
    extrapolates the loss to end of life (see :func:`extrapolate_lifetime`).
    ``trace_every`` sets the step stride of the recorded traces and
    ``full_window`` = (first, last) is a step range recorded at every step.
    """

    params: CellParams
    battery: BatterySpec
    application: Application
    dt: float = 1.0
    truth_model: str = "exact"
    max_sim_years: float = 30.0
    interest_rates: tuple = (0.0, 0.1, 0.2)
    seed: int = 0
    initial_soc: float = 0.5
    desk_years: float | None = None
    trace_every: int = 24
    full_window: tuple | None = None
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        if not self.max_sim_years > 0:
            raise InvalidInputError("max_sim_years must be positive")
        if self.truth_model not in ("exact", "approximate"):
            raise InvalidInputError(f"unknown truth model {self.truth_model!r}")
        if not 0 <= self.initial_soc <= 1:
            raise InvalidInputError("initial_soc must lie in [0, 1]")
        if self.desk_years is not None and not self.desk_years > 0:
            raise InvalidInputError("desk_years must be positive")
        if int(self.trace_every) != self.trace_every or self.trace_every < 1:
            raise InvalidInputError("trace_every must be a positive integer")
        if self.full_window is not None:
            a, b = self.full_window
            if not 0 <= a <= b:
                raise InvalidInputError("full_window must be (first, last) with 0 <= first <= last")
        if any(r < 0 for r in self.interest_rates):
            raise InvalidInputError("interest rates must be nonnegative")

    def with_app(self, **changes) -> "SimConfig":
        return replace(self, application=replace(self.application, **changes))


@dataclass(frozen=True, eq=False)
class SimResult:
    """Record of one closed-loop run.

    Traces are sampled every ``trace_every`` steps; ``trace_time`` is in
    hours. Battery quantities are in W and Wh, ``throughput_total`` is the
    cell-level Ah throughput. ``reached_eol`` is False when the run stopped
    at ``max_sim_years`` (the lifetime is then a lower bound).
    """

    lifetime_years: float
    reached_eol: bool
    extrapolated: bool
    steps: int
    total_revenue: float
    average_hourly_revenue: float
    npv_by_rate: dict
    rmsd_smoothed: float
    rmsd_unsmoothed: float
    throughput_total: float
    final_loss: float
    trace_time: np.ndarray
    capacity_trace: np.ndarray
    action_trace: np.ndarray
    charge_trace: np.ndarray
    seed: int
    config: SimConfig = field(repr=False)

    def summary(self) -> dict:
        out = {
            "lifetime_years": self.lifetime_years,
            "reached_eol": self.reached_eol,
            "extrapolated": self.extrapolated,
            "steps": self.steps,
            "total_revenue": self.total_revenue,
            "average_hourly_revenue": self.average_hourly_revenue,
            "rmsd_smoothed": self.rmsd_smoothed,
            "rmsd_unsmoothed": self.rmsd_unsmoothed,
            "throughput_total": self.throughput_total,
            "final_loss": self.final_loss,
        }
        for rate, value in sorted(self.npv_by_rate.items()):
            out[f"npv_{rate:g}"] = value
        return out


def npv(revenues, rate_per_period: float) -> float:
    """sum_tau r_tau / (1 + i)^tau with tau starting at 1."""
    if not rate_per_period >= 0:
        raise InvalidInputError(f"rate must be nonnegative, got {rate_per_period}")
    r = np.asarray(revenues, dtype=float).reshape(-1)
    if rate_per_period == 0:
        return float(np.sum(r))
    tau = np.arange(1, r.shape[0] + 1)
    return float(np.sum(r * np.exp(-tau * math.log1p(rate_per_period))))


def per_period_rate(annual_rate: float, dt: float) -> float:
    """Per-step rate equivalent to ``annual_rate`` compounded over a 8760 h year."""
    return math.expm1(math.log1p(annual_rate) * dt / HOURS_PER_YEAR)


def extrapolate_lifetime(loss: float, years: float, eol_fraction: float,
                         z: float) -> float:
    """Years until the loss reaches ``1 - eol_fraction`` if usage keeps its pace.

    With steady throughput the accumulated loss grows like (throughput)^z,
    hence like t^z; zero loss gives an infinite lifetime.
    """
    if loss <= 0:
        return math.inf
    return years * ((1.0 - eol_fraction) / loss) ** (1.0 / z)


class _Recorder:
    def __init__(self, every: int, window=None):
        self.every = every
        self.first, self.last = window if window is not None else (-1, -2)
        self.t, self.cap, self.act, self.chg = [], [], [], []

    def add(self, k, t, cap, act, chg):
        if k % self.every == 0 or self.first <= k <= self.last:
            self.t.append(t)
            self.cap.append(cap)
            self.act.append(act)
            self.chg.append(chg)

    def arrays(self):
        return (np.array(self.t), np.array(self.cap), np.array(self.act), np.array(self.chg))


def _max_steps(config: SimConfig) -> int:
    years = config.max_sim_years if config.desk_years is None else min(
        config.desk_years, config.max_sim_years)
    return int(round(years * HOURS_PER_YEAR / config.dt))


def _run(config: SimConfig, policy, revenue_per_step=None, loads=None) -> SimResult:
    """Shared stepping loop. ``policy(k, state)`` returns the requested battery power (W)."""
    p, spec, dt = config.params, config.battery, config.dt
    state = policy.initial_state
    n_max = _max_steps(config)
    rec = _Recorder(config.trace_every, config.full_window)
    revenues = [] if revenue_per_step is not None else None
    totals = [] if loads is not None else None
    observe = getattr(policy, "observe", None)
    k = 0
    reached = False
    while k < n_max:
        request = policy(k, state)
        new, applied = step_cell(p, state, request / spec.scale, dt, config.truth_model)
        b = applied * spec.scale
        if observe is not None:
            observe(k, b)
        rec.add(k, k * dt, state.capacity * spec.scale, b, state.charge * spec.scale)
        if revenues is not None:
            revenues.append(revenue_per_step(k, b))
        if totals is not None:
            totals.append(loads[k] + b)
        state = new
        k += 1
        if is_end_of_life(p, state):
            reached = True
            break
    t_arr, cap, act, chg = rec.arrays()
    hours = k * dt
    years = hours / HOURS_PER_YEAR
    extrapolated = False
    if reached:
        lifetime = years
    elif config.desk_years is not None and k == n_max:
        lifetime = min(extrapolate_lifetime(state.loss, years, p.eol_fraction, p.z),
                       config.max_sim_years)
        extrapolated = True
    else:
        lifetime = years
    total = float(np.sum(revenues)) if revenues else 0.0
    avg = total / hours if hours > 0 else 0.0
    npvs = {}
    if revenues is not None:
        r = np.array(revenues)
        if extrapolated:
            # repeat the simulated revenue pattern over the extrapolated life
            n_life = int(round(lifetime * HOURS_PER_YEAR / dt))
            reps = -(-n_life // max(len(r), 1))
            r = np.tile(r, reps)[:n_life]
            total = float(np.sum(r))
        for rate in config.interest_rates:
            npvs[float(rate)] = npv(r, per_period_rate(rate, dt))
    rmsd_s = rmsd_u = math.nan
    if totals is not None and len(totals) > 1:
        rmsd_s = rmsd(np.array(totals))
        rmsd_u = rmsd(np.asarray(loads[:len(totals)]))
    return SimResult(
        lifetime_years=lifetime, reached_eol=reached, extrapolated=extrapolated, steps=k,
        total_revenue=total, average_hourly_revenue=avg, npv_by_rate=npvs,
        rmsd_smoothed=rmsd_s, rmsd_unsmoothed=rmsd_u, throughput_total=state.throughput,
        final_loss=state.loss, trace_time=t_arr, capacity_trace=cap, action_trace=act,
        charge_trace=chg, seed=config.seed, config=config)


def rmsd(series) -> float:
    """Root-mean-square of successive differences."""
    s = np.asarray(series, dtype=float)
    if s.shape[0] < 2:
        return 0.0
    return float(np.sqrt(np.mean(np.diff(s) ** 2)))


# -- cycling -----------------------------------------------------------------

class _CyclingPolicy:
    def __init__(self, config: SimConfig, cycles_per_day: float):
        p = config.params
        self.half_steps = None
        self.current = 0.0
        if cycles_per_day > 0:
            half_hours = 12.0 / cycles_per_day
            self.half_steps = max(int(round(half_hours / config.dt)), 1)
            self.current = p.q_init / half_hours
            if self.current > p.max_current * (1 + 1e-9):
                raise InfeasibleProfileError(
                    f"{cycles_per_day:g} cycles/day needs C-rate {self.current / p.q_init:.4g}/h, "
                    f"above the limit {p.c_rate_max:.4g}/h")
        self.scale = config.battery.scale
        self.initial_state = CellState.initial(p, charge=0.0)

    def __call__(self, k, state):
        if self.half_steps is None:
            return 0.0
        charging = (k // self.half_steps) % 2 == 0
        return (-self.current if charging else self.current) * self.scale


def run_cycling(config: SimConfig, cycles_per_day: float | None = None) -> SimResult:
    """Square-wave full charge/discharge cycling from an empty cell until end of life."""
    if cycles_per_day is None:
        if not isinstance(config.application, CyclingApp):
            raise InvalidInputError("cycles_per_day not given and application is not cycling")
        cycles_per_day = config.application.cycles_per_day
    if not cycles_per_day >= 0:
        raise InvalidInputError("cycles_per_day must be nonnegative")
    return _run(config, _CyclingPolicy(config, cycles_per_day))


# -- arbitrage ---------------------------------------------------------------

class _ArbitragePolicy:
    def __init__(self, config: SimConfig, app: ArbitrageApp, prices: np.ndarray):
        self.config = config
        self.app = app
        self.prices = prices
        self.planner = ArbitragePlanner(config.solver)
        p = config.params
        self.initial_state = CellState.initial(p, charge=config.initial_soc * p.q_init)

    def __call__(self, k, state):
        cfg, app = self.config, self.app
        p, spec = cfg.params, cfg.battery
        window = self.prices[k:k + app.horizon]
        kappa = aging_weight(p, spec, state.throughput, state.capacity)
        inp = ArbitragePlanInput(
            charge_now=state.charge * spec.scale, capacity_now=state.capacity * spec.scale,
            aging_coeff=kappa, prices=window, gamma=app.gamma, eta_term=app.eta,
            dt=cfg.dt, c_rate_max=p.c_rate_max)
        try:
            return self.planner.policy_action(inp)
        except SolverError as exc:
            raise SolverError(exc.status, step=k) from None


def price_array(config: SimConfig, app: ArbitrageApp) -> np.ndarray:
    """Hourly prices covering the run plus one horizon, repeating the base year."""
    series = app.prices
    years = config.max_sim_years if config.desk_years is None else config.desk_years
    needed = int(round(years * HOURS_PER_YEAR / config.dt)) + app.horizon
    if config.dt != series.dt:
        raise InvalidInputError(f"price step {series.dt} h differs from simulation step {config.dt} h")
    if len(series) >= needed:
        return series.prices
    try:
        n_years = int(math.ceil(needed * config.dt / HOURS_PER_YEAR)) + 1
        return repeat_years(series, n_years).prices
    except InvalidInputError:
        reps = -(-needed // len(series))
        return np.tile(series.prices, reps)


def run_arbitrage(config: SimConfig) -> SimResult:
    """Receding-horizon arbitrage until end of life; revenue is credited on applied power."""
    app = config.application
    if not isinstance(app, ArbitrageApp):
        raise InvalidInputError("application is not arbitrage")
    prices = price_array(config, app)
    if np.any(prices < 0):
        log.info("price data contains %d negative prices", int(np.sum(prices < 0)))
    policy = _ArbitragePolicy(config, app, prices)
    dt = config.dt

    def revenue(k, b):
        # USD/MWh * W * h -> USD
        return prices[k] * b * dt * 1e-6

    return _run(config, policy, revenue_per_step=revenue)


# -- smoothing ---------------------------------------------------------------

class _SmoothingPolicy:
    def __init__(self, config: SimConfig, app: SmoothingApp, model, states, loads):
        self.config = config
        self.app = app
        self.model = model
        self.states = states
        self.loads = loads
        self.planner = SmoothingPlanner(config.solver)
        p = config.params
        self.initial_state = CellState.initial(p, charge=config.initial_soc * p.q_init)
        self.prev_total = None
        self._paths = {}

    def _forecasts(self, k):
        H = self.app.horizon
        if self.model is not None:
            # the forecast depends only on the current state
            s = int(self.states[k])
            if s not in self._paths:
                self._paths[s] = markov.forecast_path(self.model, s, H)
            return self._paths[s]
        # no model: persistence forecast from the trace's current value
        return np.full(H, self.loads[k])

    def __call__(self, k, state):
        cfg, app = self.config, self.app
        p, spec = cfg.params, cfg.battery
        kappa = aging_weight(p, spec, state.throughput, state.capacity)
        inp = SmoothingPlanInput(
            charge_now=state.charge * spec.scale, capacity_now=state.capacity * spec.scale,
            aging_coeff=kappa, load_now=float(self.loads[k]), forecasts=self._forecasts(k),
            gamma=app.gamma, eta_term=app.eta, dt=cfg.dt, c_rate_max=p.c_rate_max,
            prev_total=self.prev_total, anchor_previous=app.anchor_previous)
        try:
            return self.planner.policy_action(inp)
        except SolverError as exc:
            raise SolverError(exc.status, step=k) from None

    def observe(self, k, b):
        self.prev_total = float(self.loads[k]) + b


def load_trace(config: SimConfig, app: SmoothingApp):
    """(model, states, loads) for the run; a Markov trace is drawn with the run seed."""
    n = _max_steps(config)
    if app.loads is not None:
        trace = app.loads
        if len(trace) < n:
            reps = -(-n // len(trace))
            return None, np.tile(trace.states, reps), np.tile(trace.power, reps)
        return None, trace.states, trace.power
    model = app.model or markov.MarkovLoadModel()
    series = markov.generate(model, n, seed=config.seed, dt=config.dt)
    return model, series.states, series.power


def run_smoothing(config: SimConfig) -> SimResult:
    """Receding-horizon load smoothing until end of life; reports D for z and for w."""
    app = config.application
    if not isinstance(app, SmoothingApp):
        raise InvalidInputError("application is not smoothing")
    model, states, loads = load_trace(config, app)
    if app.loads is not None and app.model is not None:
        model = app.model
    policy = _SmoothingPolicy(config, app, model, states, loads)
    return _run(config, policy, loads=loads)


# -- sweeps ------------------------------------------------------------------

def run(config: SimConfig) -> SimResult:
    app = config.application
    if isinstance(app, CyclingApp):
        return run_cycling(config)
    if isinstance(app, ArbitrageApp):
        return run_arbitrage(config)
    if isinstance(app, SmoothingApp):
        return run_smoothing(config)
    raise InvalidInputError(f"unknown application {type(app).__name__}")


@dataclass(frozen=True)
class SweepRow:
    gamma: float
    result: SimResult | None
    error: str | None = None

    def summary(self) -> dict:
        out = {"gamma": self.gamma, "error": self.error or ""}
        if self.result is not None:
            out.update(self.result.summary())
        return out


def _sweep_row(config: SimConfig, gamma: float) -> SweepRow:
    try:
        return SweepRow(gamma, run(config.with_app(gamma=gamma)))
    except (SolverError, InvalidInputError, ArithmeticError) as exc:
        log.warning("sweep row gamma=%g failed: %s", gamma, exc)
        return SweepRow(gamma, None, str(exc))


def sweep_gamma(config: SimConfig, gamma_grid, workers: int = 1) -> list[SweepRow]:
    """Run one independent simulation per gamma; rows are sorted by gamma.

    A failing row records its error message and the sweep continues. With
    ``workers > 1`` rows run in separate processes; each owns its battery
    state, solver and random stream, so the result does not depend on
    ``workers``.
    """
    grid = sorted(float(g) for g in gamma_grid)
    if not grid:
        raise InvalidInputError("gamma grid is empty")
    if len(set(grid)) != len(grid) or any(g < 0 for g in grid):
        raise InvalidInputError("gamma values must be distinct and nonnegative")
    if isinstance(config.application, CyclingApp):
        raise InvalidInputError("cycling runs have no gamma")
    if int(workers) != workers or workers < 1:
        raise InvalidInputError(f"workers must be a positive integer, got {workers}")
    if workers == 1 or len(grid) == 1:
        return [_sweep_row(config, g) for g in grid]
    with ProcessPoolExecutor(max_workers=min(int(workers), len(grid))) as pool:
        return list(pool.map(_sweep_row, [config] * len(grid), grid))

