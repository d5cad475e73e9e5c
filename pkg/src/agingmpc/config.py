"""Run configuration files.

A configuration is one JSON object with up to five sections::

    {
      "battery":     {"n_cells": 500000, "temperature": 298.15, ...},
      "application": {"kind": "arbitrage", "gamma": 3e5, "prices": {"synthetic": {}}, ...},
      "solver":      {"eps_abs": 1e-6, ...},
      "sweep":       {"gammas": [0, 1e5, 3e5], "workers": 1},
      "output":      {"dir": "out", "plots": false, "trace_every": 24}
    }

Every key is optional except ``application.kind``; unknown keys are errors
so that typos do not silently fall back to defaults. Relative file paths are
resolved against the configuration file's directory. See README.md for the
full schema.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from agingmpc import markov, market
from agingmpc.aging import BatterySpec, CellParams
from agingmpc.errors import AgingMPCError, ConfigError
from agingmpc.qp import SolverSettings
from agingmpc.sim import ArbitrageApp, CyclingApp, SimConfig, SmoothingApp

SECTIONS = ("battery", "application", "solver", "sweep", "output")
KINDS = ("cycling", "arbitrage", "smoothing")

_CELL_KEYS = tuple(f.name for f in dataclasses.fields(CellParams))
_SOLVER_KEYS = tuple(f.name for f in dataclasses.fields(SolverSettings))
_RUN_KEYS = ("dt", "truth_model", "max_sim_years", "desk_years", "interest_rates",
             "seed", "initial_soc")
_APP_KEYS = {
    "cycling": ("cycles_per_day",),
    "arbitrage": ("gamma", "eta", "horizon", "prices"),
    "smoothing": ("gamma", "eta", "horizon", "load_model", "loads", "anchor_previous"),
}

# application-dependent defaults: battery size, C-rate limit and step
DEFAULTS = {
    "cycling": {"n_cells": 500000, "c_rate_max": 1.0 / 3.0, "dt": 1.0},
    "arbitrage": {"n_cells": 500000, "c_rate_max": 1.0 / 3.0, "dt": 1.0},
    "smoothing": {"n_cells": 15000, "c_rate_max": 0.3, "dt": 1.0 / 3.0},
}


@dataclass(frozen=True, eq=False)
class RunConfig:
    """A parsed configuration: the simulation config plus sweep and output settings."""

    sim: SimConfig
    kind: str
    cycles_per_day: tuple = ()
    gammas: tuple = ()
    workers: int = 1
    out_dir: Path = Path("out")
    plots: bool = False
    digest: str = ""
    raw: dict = field(default_factory=dict)


def digest_bytes(data: bytes) -> str:
    """SHA-256 of the configuration bytes, hex encoded."""
    return hashlib.sha256(data).hexdigest()


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be an object")
    return sec


def _check_keys(sec: dict, allowed, where: str) -> None:
    unknown = sorted(set(sec) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    return float(value)


def _resolve(base: Path, path) -> Path:
    if not isinstance(path, str):
        raise ConfigError(f"expected a file path, got {path!r}")
    p = Path(path)
    return p if p.is_absolute() else base / p


def _prices(spec, base: Path) -> market.PriceSeries:
    if spec is None:
        spec = {"synthetic": {}}
    if isinstance(spec, str):
        spec = {"csv": spec}
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError("application.prices must be {\"csv\": path} or {\"synthetic\": {...}}")
    (kind, value), = spec.items()
    if kind == "csv":
        return market.load_csv(_resolve(base, value))
    if kind == "synthetic":
        if not isinstance(value, dict):
            raise ConfigError("application.prices.synthetic must be an object")
        try:
            return market.synthetic_prices(**value)
        except TypeError as exc:
            raise ConfigError(f"application.prices.synthetic: {exc}") from None
    if kind == "two_level":
        if not isinstance(value, dict):
            raise ConfigError("application.prices.two_level must be an object")
        try:
            return market.two_level_prices(**value)
        except TypeError as exc:
            raise ConfigError(f"application.prices.two_level: {exc}") from None
    raise ConfigError(f"unknown price source {kind!r}")


def _load_model(spec) -> markov.MarkovLoadModel:
    if spec is None:
        return markov.MarkovLoadModel()
    if not isinstance(spec, dict):
        raise ConfigError("application.load_model must be an object")
    _check_keys(spec, ("levels", "transition"), "application.load_model")
    kw = {}
    if "levels" in spec:
        kw["levels"] = np.asarray(spec["levels"], dtype=float)
    if "transition" in spec:
        kw["transition"] = np.asarray(spec["transition"], dtype=float)
    return markov.MarkovLoadModel(**kw)


def _gammas(sec: dict) -> tuple:
    if "gammas" in sec and "log_grid" in sec:
        raise ConfigError("sweep: give either gammas or log_grid")
    if "log_grid" in sec:
        g = sec["log_grid"]
        if not isinstance(g, dict):
            raise ConfigError("sweep.log_grid must be an object")
        _check_keys(g, ("start", "stop", "num", "include_zero"), "sweep.log_grid")
        try:
            start, stop, num = float(g["start"]), float(g["stop"]), int(g["num"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError("sweep.log_grid needs numeric start, stop and num") from None
        if not (start > 0 and stop > start and num >= 2):
            raise ConfigError("sweep.log_grid needs 0 < start < stop and num >= 2")
        grid = list(np.geomspace(start, stop, num))
        if g.get("include_zero", False):
            grid = [0.0] + grid
        return tuple(grid)
    values = sec.get("gammas", [])
    if not isinstance(values, list):
        raise ConfigError("sweep.gammas must be a list")
    return tuple(_number(v, "sweep.gammas entry") for v in values)


def parse(doc: dict, base_dir: Path | str = ".", digest: str = "",
          seed: int | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from a decoded configuration object."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    _check_keys(doc, SECTIONS, "configuration")
    base = Path(base_dir)
    battery = _section(doc, "battery")
    app = _section(doc, "application")
    solver = _section(doc, "solver")
    sweep = _section(doc, "sweep")
    output = _section(doc, "output")

    kind = app.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"application.kind must be one of {', '.join(KINDS)}, got {kind!r}")
    _check_keys(app, ("kind",) + _RUN_KEYS + _APP_KEYS[kind], "application")
    _check_keys(battery, _CELL_KEYS + ("n_cells", "cell_voltage"), "battery")
    _check_keys(solver, _SOLVER_KEYS, "solver")
    _check_keys(sweep, ("gammas", "log_grid", "workers"), "sweep")
    _check_keys(output, ("dir", "plots", "trace_every"), "output")
    defaults = DEFAULTS[kind]

    try:
        cell_kw = {k: battery[k] for k in _CELL_KEYS if k in battery}
        cell_kw.setdefault("c_rate_max", defaults["c_rate_max"])
        params = CellParams(**cell_kw)
        spec_kw = {k: battery[k] for k in ("n_cells", "cell_voltage") if k in battery}
        spec_kw.setdefault("n_cells", defaults["n_cells"])
        spec = BatterySpec(**spec_kw)
        settings = SolverSettings(**solver)

        cycles = ()
        if kind == "cycling":
            cpd = app.get("cycles_per_day", [2, 4])
            cycles = tuple(_number(c, "cycles_per_day") for c in
                           (cpd if isinstance(cpd, list) else [cpd]))
            if not cycles:
                raise ConfigError("application.cycles_per_day is empty")
            application = CyclingApp(cycles[0])
        elif kind == "arbitrage":
            application = ArbitrageApp(
                prices=_prices(app.get("prices"), base),
                gamma=_number(app.get("gamma", 0.0), "application.gamma"),
                eta=_number(app.get("eta", 1.0), "application.eta"),
                horizon=int(app.get("horizon", 24)))
        else:
            loads = None
            if "loads" in app:
                loads = markov.read_csv(_resolve(base, app["loads"]))
            model = _load_model(app.get("load_model")) if loads is None or "load_model" in app else None
            application = SmoothingApp(
                gamma=_number(app.get("gamma", 0.0), "application.gamma"),
                model=model, loads=loads,
                eta=_number(app.get("eta", 0.5), "application.eta"),
                horizon=int(app.get("horizon", 18)),
                anchor_previous=bool(app.get("anchor_previous", False)))

        desk = app.get("desk_years")
        rates = app.get("interest_rates", [0.0, 0.1, 0.2])
        if not isinstance(rates, list):
            raise ConfigError("application.interest_rates must be a list")
        run_seed = app.get("seed", 0) if seed is None else seed
        if isinstance(run_seed, bool) or not isinstance(run_seed, int) or run_seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {run_seed!r}")
        sim = SimConfig(
            params=params, battery=spec, application=application,
            dt=_number(app.get("dt", defaults["dt"]), "application.dt"),
            truth_model=app.get("truth_model", "exact"),
            max_sim_years=_number(app.get("max_sim_years", 30.0), "application.max_sim_years"),
            interest_rates=tuple(_number(r, "interest rate") for r in rates),
            seed=run_seed,
            initial_soc=_number(app.get("initial_soc", 0.5), "application.initial_soc"),
            desk_years=None if desk is None else _number(desk, "application.desk_years"),
            trace_every=int(output.get("trace_every", 24)),
            solver=settings)
        gammas = _gammas(sweep)
        workers = sweep.get("workers", 1)
        if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
            raise ConfigError(f"sweep.workers must be a positive integer, got {workers!r}")
    except ConfigError:
        raise
    except (AgingMPCError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    out_dir = output.get("dir", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("output.dir must be a string")
    return RunConfig(sim=sim, kind=kind, cycles_per_day=cycles, gammas=gammas,
                     workers=workers, out_dir=_resolve(base, out_dir),
                     plots=bool(output.get("plots", False)), digest=digest, raw=doc)


def load(path, seed: int | None = None) -> RunConfig:
    """Read and parse a configuration file."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse(doc, path.parent, digest_bytes(data), seed)


def default_document(kind: str) -> dict:
    """A minimal configuration object for ``kind`` with every default spelled out."""
    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}")
    d = DEFAULTS[kind]
    app = {"kind": kind, "dt": d["dt"], "truth_model": "exact", "max_sim_years": 30.0,
           "seed": 0}
    if kind == "cycling":
        app["cycles_per_day"] = [2, 4]
    elif kind == "arbitrage":
        app.update(gamma=0.0, eta=1.0, horizon=24, prices={"synthetic": {"year": 2012}})
    else:
        app.update(gamma=0.0, eta=0.5, horizon=18)
    return {"battery": {"n_cells": d["n_cells"], "c_rate_max": d["c_rate_max"]},
            "application": app, "output": {"dir": "out"}}
