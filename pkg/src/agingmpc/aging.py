"""Semi-empirical LiFePO4 cycle-aging model.

All quantities here are per cell: currents in A (positive = discharge),
charge and capacity in Ah, time in hours. Battery-level values (W, Wh) are
obtained with :func:`cell_to_battery` under the balanced-cells assumption.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from agingmpc.errors import DomainError, InvalidStateError

CELL_VOLTAGE = 3.3

# relative slack on current limits, absorbs roundoff in W <-> A conversions
_LIMIT_RTOL = 1e-9


@dataclass(frozen=True)
class CellParams:
    """Physical constants and aging-law coefficients of one cell.

    ``alpha`` and ``beta`` are in 1/Ah^z, ``e_a`` in J/mol, ``r_g`` in
    J/(mol K), ``eta_arr`` in J h/mol, ``temperature`` in K, ``q_init`` in Ah
    and ``c_rate_max`` in 1/h.
    """

    z: float = 0.60
    alpha: float = 28.966
    beta: float = 74.112
    e_a: float = 31500.0
    r_g: float = 8.314
    eta_arr: float = 152.500
    temperature: float = 298.15
    q_init: float = 2.5
    c_rate_max: float = 1.0 / 3.0
    eol_fraction: float = 0.9

    def __post_init__(self):
        for name in ("z", "alpha", "beta", "e_a", "r_g", "eta_arr",
                     "temperature", "q_init", "c_rate_max", "eol_fraction"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be positive and finite, got {value!r}")
        if not self.z < 1:
            raise DomainError(f"z must lie in (0, 1), got {self.z}")
        if not self.eol_fraction < 1:
            raise DomainError(f"eol_fraction must lie in (0, 1), got {self.eol_fraction}")

    @property
    def max_current(self) -> float:
        """Largest admissible |current| in A."""
        return self.q_init * self.c_rate_max

    @property
    def throughput_floor(self) -> float:
        """Throughput floor (Ah) used when extracting planner coefficients."""
        return self.q_init

    @property
    def arrhenius(self) -> float:
        return math.exp(-self.e_a / (self.r_g * self.temperature))


@dataclass(frozen=True)
class CellState:
    """Charge (Ah), capacity (Ah), accumulated |Ah| throughput and normalized loss."""

    charge: float
    capacity: float
    throughput: float = 0.0
    loss: float = 0.0

    @classmethod
    def initial(cls, params: CellParams, charge: float = 0.0) -> "CellState":
        return cls(charge=charge, capacity=params.q_init)

    def validate(self, params: CellParams | None = None) -> None:
        if not (self.capacity > 0 and math.isfinite(self.capacity)):
            raise InvalidStateError(f"capacity must be positive, got {self.capacity}")
        if not (0.0 <= self.charge <= self.capacity):
            raise InvalidStateError(
                f"charge {self.charge} outside [0, capacity={self.capacity}]")
        if not self.throughput >= 0:
            raise InvalidStateError(f"throughput must be nonnegative, got {self.throughput}")
        if not (0.0 <= self.loss < 1.0):
            raise InvalidStateError(f"loss must lie in [0, 1), got {self.loss}")
        if params is not None and self.capacity > params.q_init * (1 + 1e-12):
            raise InvalidStateError(
                f"capacity {self.capacity} exceeds initial capacity {params.q_init}")


@dataclass(frozen=True)
class LongTermCoeffs:
    """Slowly varying factors of the aging rate, frozen over a planning horizon.

    ``mu`` absorbs the throughput power law and the Arrhenius factor, so its
    unit is composite (1/(A h) times Ah^(z-1) bookkeeping); treat it as an
    opaque positive scale. ``nu`` is 1/Ah and ``lam`` is 1/A.
    """

    mu: float
    nu: float
    lam: float

    def __post_init__(self):
        for name in ("mu", "nu", "lam"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be positive and finite, got {value!r}")

    def approx_coefficient(self, capacity: float) -> float:
        """Slope of the linearized rate in |current|: mu * (1 + nu * capacity / 2)."""
        return self.mu * (1.0 + self.nu * capacity / 2.0)


@dataclass(frozen=True)
class BatterySpec:
    """N balanced cells at a fixed terminal voltage."""

    n_cells: int
    cell_voltage: float = CELL_VOLTAGE

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 1:
            raise DomainError(f"n_cells must be a positive integer, got {self.n_cells!r}")
        if not self.cell_voltage > 0:
            raise DomainError("cell_voltage must be positive")

    @property
    def scale(self) -> float:
        """Multiplier from cell units (A, Ah) to battery units (W, Wh)."""
        return self.cell_voltage * self.n_cells


def cell_to_battery(spec: BatterySpec, x_cell):
    """Scale a cell quantity (A or Ah) to the battery (W or Wh)."""
    return np.multiply(x_cell, spec.scale) if isinstance(x_cell, np.ndarray) else x_cell * spec.scale


def battery_to_cell(spec: BatterySpec, x_battery):
    """Inverse of :func:`cell_to_battery`."""
    return np.divide(x_battery, spec.scale) if isinstance(x_battery, np.ndarray) else x_battery / spec.scale


def _check_current(params: CellParams, cell_current: float) -> None:
    if abs(cell_current) > params.max_current * (1 + _LIMIT_RTOL):
        raise DomainError(
            f"|current| = {abs(cell_current)} A exceeds limit {params.max_current} A")


def exact_aging_rate(params: CellParams, state: CellState, cell_current: float,
                     dt: float) -> float:
    """Aging rate (1/h) of the full semi-empirical law.

    The throughput entering the power law includes the current interval,
    ``state.throughput + |current| * dt``. Zero current gives exactly zero.
    """
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    state.validate()
    _check_current(params, cell_current)
    b = abs(cell_current)
    if b == 0.0:
        return 0.0
    p = params
    throughput = state.throughput + b * dt
    return (p.z * throughput ** (p.z - 1.0) * b
            * (p.alpha * state.charge / state.capacity + p.beta)
            * math.exp((-p.e_a + p.eta_arr * b / state.capacity)
                       / (p.r_g * p.temperature)))


def long_term_coeffs(params: CellParams, throughput_prior: float,
                     capacity: float) -> LongTermCoeffs:
    """Split the aging law into (mu, nu, lam) at the given throughput and capacity.

    Throughput below ``params.throughput_floor`` is raised to the floor so
    that mu stays finite on a fresh cell.
    """
    if not capacity > 0:
        raise DomainError(f"capacity must be positive, got {capacity}")
    if not throughput_prior >= 0:
        raise DomainError(f"throughput must be nonnegative, got {throughput_prior}")
    p = params
    a = max(throughput_prior, p.throughput_floor)
    mu = p.beta * p.arrhenius * p.z * a ** (p.z - 1.0)
    nu = p.alpha / (p.beta * capacity)
    lam = p.eta_arr / (p.r_g * p.temperature * capacity)
    return LongTermCoeffs(mu=mu, nu=nu, lam=lam)


def simplified_aging_rate(coeffs: LongTermCoeffs, cell_current: float,
                          charge: float) -> float:
    """mu |b| (1 + nu q) exp(lam |b|)."""
    if charge < 0:
        raise DomainError(f"charge must be nonnegative, got {charge}")
    b = abs(cell_current)
    if b == 0.0:
        return 0.0
    return coeffs.mu * b * (1.0 + coeffs.nu * charge) * math.exp(coeffs.lam * b)


def approx_aging_rate(coeffs: LongTermCoeffs, capacity: float,
                      cell_current: float) -> float:
    """Linearization of the simplified rate about |b| = 0, q = capacity / 2."""
    if not capacity > 0:
        raise DomainError(f"capacity must be positive, got {capacity}")
    return coeffs.approx_coefficient(capacity) * abs(cell_current)


def aging_rate(params: CellParams, state: CellState, cell_current: float,
               dt: float, model: str = "exact") -> float:
    """Rate used as simulation ground truth; ``model`` is "exact" or "approximate"."""
    if model == "exact":
        return exact_aging_rate(params, state, cell_current, dt)
    if model == "approximate":
        if not dt > 0:
            raise DomainError(f"dt must be positive, got {dt}")
        b = abs(cell_current)
        if b == 0.0:
            return 0.0
        # same throughput convention as the exact law; no floor here
        p = params
        a = state.throughput + b * dt
        mu = p.beta * p.arrhenius * p.z * a ** (p.z - 1.0)
        nu = p.alpha / (p.beta * state.capacity)
        return mu * (1.0 + nu * state.capacity / 2.0) * b
    raise DomainError(f"unknown aging model {model!r}")


def clip_current(params: CellParams, state: CellState, cell_current: float,
                 dt: float) -> float:
    """Largest-magnitude current in the requested direction that keeps the cell physical."""
    b = min(max(cell_current, -params.max_current), params.max_current)
    b = min(b, state.charge / dt)
    b = max(b, (state.charge - state.capacity) / dt)
    return b


def step_cell(params: CellParams, state: CellState, cell_current: float, dt: float,
              model: str = "exact") -> tuple[CellState, float]:
    """Advance one interval; returns ``(new_state, applied_current)``.

    The request is clipped to the C-rate limit and to the charge window.
    A charging current is reduced further if capacity fade during the
    interval would leave the charge above the faded capacity.
    """
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    b = clip_current(params, state, cell_current, dt)
    new = _advance(params, state, b, dt, model)
    if new.charge > new.capacity:
        b = (state.charge - new.capacity) / dt
        new = _advance(params, state, b, dt, model)
    return new, b


def _advance(params: CellParams, state: CellState, b: float, dt: float,
             model: str) -> CellState:
    if b == 0.0:
        return state
    rate = aging_rate(params, state, b, dt, model)
    loss = state.loss + dt * rate
    charge = state.charge - dt * b
    if charge < 0.0:
        # roundoff from charge/dt*dt
        charge = 0.0
    return replace(state, charge=charge, capacity=params.q_init * (1.0 - loss),
                   throughput=state.throughput + abs(b) * dt, loss=loss)


def is_end_of_life(params: CellParams, state: CellState) -> bool:
    """True once capacity has dropped below ``eol_fraction`` of its initial value."""
    return state.capacity < params.eol_fraction * params.q_init
