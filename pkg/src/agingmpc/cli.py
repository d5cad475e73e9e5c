"""Command-line front end.

    agingmpc cycling   [--config FILE] [--out-dir DIR] [--seed N] [--plots]
    agingmpc arbitrage [--config FILE] ...
    agingmpc smoothing [--config FILE] ...
    agingmpc sweep      --config FILE  ...
    agingmpc stats     PRICES.csv

Exit codes: 0 success, 2 configuration or input-data error, 3 simulation error.
Every successful run writes ``manifest.json`` next to its CSV outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shlex
import sys
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from agingmpc import __version__, config as cfgmod, market, svg
from agingmpc.errors import AgingMPCError, ConfigError, GapError, ParseError
from agingmpc.sim import (
    HOURS_PER_YEAR, SimResult, load_trace, price_array, run, run_cycling, sweep_gamma,
)

log = logging.getLogger("agingmpc")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIM = 3


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunManifest:
    """What was run, with which configuration, and what it wrote."""

    command_line: str
    config_digest: str
    seed: int
    tool_version: str
    started_utc: str
    wall_clock_seconds: float = 0.0
    outputs: list = field(default_factory=list)

    def write(self, path: Path) -> None:
        doc = {
            "command_line": self.command_line,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "started_utc": self.started_utc,
            "wall_clock_seconds": self.wall_clock_seconds,
            "outputs": sorted(self.outputs),
        }
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# -- CSV helpers -------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_rows(path: Path, header, rows) -> Path:
    """CSV with round-trip float formatting and ``\\n`` line endings."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def _summary_rows(summary: dict):
    return [(k, v) for k, v in summary.items()]


# -- command bodies ----------------------------------------------------------

class _Context:
    def __init__(self, args, rc: cfgmod.RunConfig):
        self.args = args
        self.rc = rc
        out = Path(args.out_dir) if args.out_dir is not None else rc.out_dir
        self.out = out
        self.plots = bool(args.plots) or rc.plots
        self.outputs: list[str] = []

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs.append(name)
        return self.out / name


def _cycling(ctx: _Context) -> None:
    rc = ctx.rc
    table = []
    charts = []
    for cpd in rc.cycles_per_day:
        lifetimes = {}
        for model in ("exact", "approximate"):
            res = run_cycling(replace(rc.sim, truth_model=model), cpd)
            lifetimes[model] = res
            cap0 = rc.sim.params.q_init * rc.sim.battery.scale
            loss = 1.0 - res.capacity_trace / cap0
            write_rows(ctx.path(f"capacity_{cpd:g}cpd_{model}.csv"),
                       ["time_h", "capacity_Wh", "loss"],
                       zip(res.trace_time, res.capacity_trace, loss))
            charts.append(svg.Series(f"{cpd:g}/day {model}", res.trace_time / HOURS_PER_YEAR, loss))
            log.info("%g cycles/day, %s model: %.4f years", cpd, model, res.lifetime_years)
        ex, ap = lifetimes["exact"], lifetimes["approximate"]
        table.append((float(cpd), ex.lifetime_years, ap.lifetime_years,
                      ex.reached_eol, ap.reached_eol))
    write_rows(ctx.path("lifetimes.csv"),
               ["cycles_per_day", "lifetime_exact_years", "lifetime_approx_years",
                "reached_eol_exact", "reached_eol_approx"], table)
    for row in table:
        print(f"{row[0]:g} cycles/day: exact {row[1]:.3f} y, approximate {row[2]:.3f} y")
    if ctx.plots:
        svg.write_chart(ctx.path("capacity_loss.svg"), charts, "Capacity loss under cycling",
                        "time (years)", "normalized capacity loss")


def _profile_window(rc: cfgmod.RunConfig) -> tuple[int, int]:
    hours = 168.0 if rc.kind == "arbitrage" else 24.0
    return 0, int(round(hours / rc.sim.dt)) - 1


def _write_result(ctx: _Context, res: SimResult, extra_name: str, extra) -> None:
    write_rows(ctx.path("summary.csv"), ["key", "value"],
               _summary_rows({"gamma": res.config.application.gamma, **res.summary(),
                              "seed": res.seed}))
    k = np.rint(res.trace_time / res.config.dt).astype(np.int64)
    write_rows(ctx.path("trace.csv"),
               ["time_h", extra_name, "power_W", "charge_Wh", "capacity_Wh"],
               zip(res.trace_time, extra[k], res.action_trace, res.charge_trace,
                   res.capacity_trace))


def _application(ctx: _Context) -> None:
    rc = ctx.rc
    sim = replace(rc.sim, full_window=_profile_window(rc))
    res = run(sim)
    app = sim.application
    first, last = sim.full_window
    if rc.kind == "arbitrage":
        extra = price_array(sim, app)
        _write_result(ctx, res, "price_usd_per_mwh", extra)
        print(f"lifetime {res.lifetime_years:.3f} y, total revenue {res.total_revenue:.2f} USD, "
              f"average {res.average_hourly_revenue:.4f} USD/h")
    else:
        _, _, extra = load_trace(sim, app)
        _write_result(ctx, res, "load_W", extra)
        print(f"lifetime {res.lifetime_years:.3f} y, D smoothed {res.rmsd_smoothed / 1e3:.4f} kW, "
              f"unsmoothed {res.rmsd_unsmoothed / 1e3:.4f} kW")
    if not ctx.plots:
        return
    t = res.trace_time
    k = np.rint(t / sim.dt).astype(np.int64)
    win = (k >= first) & (k <= last)
    tw, kw, bw = t[win], k[win], res.action_trace[win]
    if rc.kind == "arbitrage":
        svg.write_chart(ctx.path("weekly_discharge.svg"),
                        [svg.Series("discharge power (MW)", tw, bw / 1e6, step=True)],
                        "Battery power, first week", "time (h)", "MW")
        svg.write_chart(ctx.path("weekly_prices.svg"),
                        [svg.Series("price", tw, extra[kw], step=True)],
                        "Price, first week", "time (h)", "USD/MWh")
    else:
        w = extra[kw]
        svg.write_chart(ctx.path("daily_smoothing.svg"),
                        [svg.Series("load w", tw, w / 1e3, step=True),
                         svg.Series("net z = w + b", tw, (w + bw) / 1e3, step=True)],
                        "Load smoothing, first day", "time (h)", "kW")


_SWEEP_FIELDS = ("gamma", "error", "lifetime_years", "reached_eol", "extrapolated", "steps",
                 "total_revenue", "average_hourly_revenue", "rmsd_smoothed",
                 "rmsd_unsmoothed", "throughput_total", "final_loss")


def _sweep(ctx: _Context) -> None:
    rc = ctx.rc
    if rc.kind == "cycling":
        raise _Fail(EXIT_CONFIG, "sweep needs an arbitrage or smoothing application")
    if not rc.gammas:
        raise _Fail(EXIT_CONFIG, "sweep needs sweep.gammas or sweep.log_grid in the config")
    try:
        rows = sweep_gamma(rc.sim, rc.gammas, workers=rc.workers)
    except AgingMPCError as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from None
    npv_keys = [f"npv_{r:g}" for r in sorted(float(r) for r in rc.sim.interest_rates)]
    header = list(_SWEEP_FIELDS) + (npv_keys if rc.kind == "arbitrage" else [])
    table = []
    for row in rows:
        s = row.summary()
        table.append([s.get(h, "") for h in header])
        if row.error:
            print(f"gamma {row.gamma:g}: FAILED {row.error}", file=sys.stderr)
        else:
            res = row.result
            metric = (f"avg revenue {res.average_hourly_revenue:.4f} USD/h"
                      if rc.kind == "arbitrage" else f"D {res.rmsd_smoothed / 1e3:.4f} kW")
            print(f"gamma {row.gamma:g}: lifetime {res.lifetime_years:.3f} y, {metric}")
    write_rows(ctx.path("tradeoff.csv"), header, table)
    ok = [r for r in rows if r.result is not None]
    if not ok:
        raise _Fail(EXIT_SIM, "every sweep row failed")
    if ctx.plots:
        life = np.array([r.result.lifetime_years for r in ok])
        if rc.kind == "arbitrage":
            svg.write_chart(ctx.path("tradeoff_average_revenue.svg"),
                            [svg.Series("average revenue", life,
                                        [r.result.average_hourly_revenue for r in ok], markers=True)],
                            "Average hourly revenue versus lifetime", "lifetime (years)", "USD/h")
            svg.write_chart(ctx.path("tradeoff_total_revenue.svg"),
                            [svg.Series("total revenue", life,
                                        [r.result.total_revenue for r in ok], markers=True)],
                            "Total revenue versus lifetime", "lifetime (years)", "USD")
        else:
            svg.write_chart(ctx.path("tradeoff_rmsd.svg"),
                            [svg.Series("D smoothed", life,
                                        [r.result.rmsd_smoothed / 1e3 for r in ok], markers=True)],
                            "Smoothness versus lifetime", "lifetime (years)", "D (kW)")


def _stats(args) -> int:
    try:
        series = market.load_csv(args.prices)
    except OSError as exc:
        raise _Fail(EXIT_CONFIG, f"cannot read {args.prices}: {exc.strerror or exc}") from None
    except (ParseError, GapError) as exc:
        raise _Fail(EXIT_CONFIG, f"{args.prices}: {exc}") from None
    st = market.stats(series)
    print(f"count {st.count}")
    print(f"mean {st.mean:.4f}")
    print(f"std {st.std:.4f}")
    print(f"max {st.max:.4f}")
    print(f"min {st.min:.4f}")
    print(f"negative {st.negative_count}")
    return EXIT_OK


_COMMANDS = {"cycling": _cycling, "arbitrage": _application, "smoothing": _application,
             "sweep": _sweep}


def _load_config(args) -> cfgmod.RunConfig:
    if args.config is None:
        if args.command == "sweep":
            raise _Fail(EXIT_CONFIG, "sweep needs --config")
        doc = cfgmod.default_document(args.command)
        return cfgmod.parse(doc, ".", cfgmod.digest_bytes(
            json.dumps(doc, sort_keys=True).encode()), args.seed)
    return cfgmod.load(args.config, seed=args.seed)


def _run_command(args, argv) -> int:
    started = time.perf_counter()
    stamp = datetime.now(timezone.utc).replace(microsecond=0).isoformat()
    try:
        rc = _load_config(args)
    except ConfigError as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from None
    if args.command != "sweep" and rc.kind != args.command:
        raise _Fail(EXIT_CONFIG, f"config describes a {rc.kind} run, not {args.command}")
    ctx = _Context(args, rc)
    try:
        _COMMANDS[args.command](ctx)
    except _Fail:
        raise
    except AgingMPCError as exc:
        raise _Fail(EXIT_SIM, f"simulation failed: {exc}") from None
    manifest = RunManifest(
        command_line=shlex.join(["agingmpc"] + list(argv)), config_digest=rc.digest,
        seed=rc.sim.seed, tool_version=__version__, started_utc=stamp,
        wall_clock_seconds=round(time.perf_counter() - started, 3), outputs=ctx.outputs)
    ctx.out.mkdir(parents=True, exist_ok=True)
    manifest.write(ctx.out / "manifest.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", default=argparse.SUPPRESS,
                        help="JSON run configuration (see README)")
    common.add_argument("--out-dir", metavar="DIR", default=argparse.SUPPRESS,
                        help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="random seed (overrides application.seed)")
    common.add_argument("--plots", action="store_true", default=argparse.SUPPRESS,
                        help="also write static SVG plots")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to standard error")

    parser = argparse.ArgumentParser(
        prog="agingmpc", parents=[common],
        description="Aging-aware battery control simulations.")
    parser.add_argument("--version", action="version", version=f"agingmpc {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    sub.add_parser("cycling", parents=[common],
                   help="lifetimes under square-wave cycling (exact and approximate aging)")
    sub.add_parser("arbitrage", parents=[common], help="closed-loop price arbitrage run")
    sub.add_parser("smoothing", parents=[common], help="closed-loop load smoothing run")
    sub.add_parser("sweep", parents=[common], help="trade-off sweep over the aging cost gamma")
    st = sub.add_parser("stats", help="statistics of an hourly price CSV")
    st.add_argument("prices", metavar="PRICES.csv")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("out_dir", None), ("seed", None),
                          ("plots", False), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "stats":
            return _stats(args)
        return _run_command(args, argv)
    except _Fail as exc:
        print(f"agingmpc: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
