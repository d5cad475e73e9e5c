"""Hourly electricity price series: CSV I/O, year repetition, statistics.

CSV schema (UTF-8, newline-delimited)::

    timestamp,price_usd_per_mwh
    2012-01-01T00:00:00,21.5
    ...

Timestamps are ISO-8601 and strictly hourly.
"""

from __future__ import annotations

import calendar
import csv
import io
import logging
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from agingmpc.errors import GapError, InvalidInputError, ParseError

log = logging.getLogger(__name__)

HEADER = ("timestamp", "price_usd_per_mwh")
_HOUR = timedelta(hours=1)


@dataclass(frozen=True, eq=False)
class PriceSeries:
    start: datetime
    prices: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float).reshape(-1)
        if prices.shape[0] < 1:
            raise InvalidInputError("price series must be nonempty")
        if not np.all(np.isfinite(prices)):
            raise InvalidInputError("prices must be finite")
        if not self.dt > 0:
            raise InvalidInputError("dt must be positive")
        object.__setattr__(self, "prices", prices)

    def __len__(self) -> int:
        return self.prices.shape[0]

    def timestamps(self) -> list[datetime]:
        step = timedelta(hours=self.dt)
        return [self.start + i * step for i in range(len(self))]


@dataclass(frozen=True)
class PriceStats:
    """Population statistics (std divides by n)."""

    count: int
    mean: float
    std: float
    max: float
    min: float
    negative_count: int


def stats(series: PriceSeries) -> PriceStats:
    p = series.prices
    return PriceStats(count=int(p.shape[0]), mean=float(np.mean(p)), std=float(np.std(p)),
                      max=float(np.max(p)), min=float(np.min(p)),
                      negative_count=int(np.sum(p < 0)))


def _open_text(src):
    if isinstance(src, (str, Path)):
        return open(src, encoding="utf-8", newline=""), True
    if isinstance(src, (bytes, bytearray)):
        return io.StringIO(bytes(src).decode("utf-8")), True
    if isinstance(src, io.BufferedIOBase) or hasattr(src, "mode") and "b" in getattr(src, "mode", ""):
        return io.TextIOWrapper(src, encoding="utf-8", newline=""), False
    return src, False


def load_csv(src) -> PriceSeries:
    """Read a price CSV from a path, bytes, or a text/binary stream.

    Raises ParseError (with the 1-based line number) on malformed content
    and GapError listing every missing hour.
    """
    fh, close = _open_text(src)
    try:
        rows = list(csv.reader(fh))
    except (UnicodeDecodeError, csv.Error) as exc:
        raise ParseError(str(exc)) from None
    finally:
        if close:
            fh.close()
    if not rows:
        raise ParseError("empty file", 1)
    if tuple(c.strip() for c in rows[0]) != HEADER:
        raise ParseError(f"expected header {','.join(HEADER)!r}, got {','.join(rows[0])!r}", 1)
    times: list[datetime] = []
    values: list[float] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 fields, got {len(row)}", lineno)
        try:
            ts = datetime.fromisoformat(row[0].strip())
        except ValueError:
            raise ParseError(f"bad timestamp {row[0]!r}", lineno) from None
        try:
            val = float(row[1])
        except ValueError:
            raise ParseError(f"bad price {row[1]!r}", lineno) from None
        if not np.isfinite(val):
            raise ParseError(f"non-finite price {row[1]!r}", lineno)
        if times:
            step = ts - times[-1]
            if step <= timedelta(0):
                raise ParseError(f"timestamp {ts.isoformat()} does not increase", lineno)
            if step % _HOUR:
                raise ParseError(f"timestamp {ts.isoformat()} is not on the hourly grid", lineno)
        times.append(ts)
        values.append(val)
    if not times:
        raise ParseError("no data rows", 2)
    missing = []
    for prev, cur in zip(times, times[1:]):
        t = prev + _HOUR
        while t < cur:
            missing.append(t.isoformat())
            t += _HOUR
    if missing:
        raise GapError(missing)
    series = PriceSeries(start=times[0], prices=np.array(values))
    n_neg = int(np.sum(series.prices < 0))
    if n_neg:
        log.info("price series contains %d negative prices", n_neg)
    return series


def write_csv(series: PriceSeries, dest) -> None:
    """Write ``series`` in the CSV schema with round-trip float formatting."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            write_csv(series, fh)
        return
    dest.write(",".join(HEADER) + "\n")
    for ts, p in zip(series.timestamps(), series.prices):
        dest.write(f"{ts.isoformat()},{float(p)!r}\n")


def hours_in_year(year: int) -> int:
    return 8784 if calendar.isleap(year) else 8760


def repeat_years(series: PriceSeries, n_years: int) -> PriceSeries:
    """Extend one full calendar year of hourly prices to ``n_years`` years.

    For a non-leap target year the 24 hours of February 29 are dropped from
    a leap base year; for a leap target year with a non-leap base, February
    28 is repeated.
    """
    if int(n_years) != n_years or n_years < 1:
        raise InvalidInputError(f"n_years must be a positive integer, got {n_years}")
    start = series.start
    year = start.year
    if series.dt != 1.0 or start != datetime(year, 1, 1) or len(series) != hours_in_year(year):
        raise InvalidInputError("base series must cover exactly one calendar year hourly")
    base = series.prices
    feb_start = 24 * 59  # hour index of Feb 29 00:00 (or Mar 1 in a non-leap year)
    if calendar.isleap(year):
        leap = base
        common = np.concatenate([base[:feb_start], base[feb_start + 24:]])
    else:
        common = base
        leap = np.concatenate([base[:feb_start], base[feb_start - 24:feb_start], base[feb_start:]])
    parts = [leap if calendar.isleap(year + k) else common for k in range(int(n_years))]
    return PriceSeries(start=start, prices=np.concatenate(parts))


def synthetic_prices(year: int = 2012, seed: int = 0, mean: float = 27.0,
                     daily_amplitude: float = 10.0, seasonal_amplitude: float = 6.0,
                     noise: float = 4.0, spike_rate: float = 0.002,
                     spike_scale: float = 150.0) -> PriceSeries:
    """One calendar year of hourly prices with a daily and seasonal shape.

    Prices are lowest before dawn and peak in the late afternoon; summer
    prices are higher. Rare positive spikes mimic scarcity pricing.
    """
    rng = np.random.default_rng(seed)
    n = hours_in_year(year)
    h = np.arange(n)
    hour = h % 24
    day = h / 24.0
    daily = -np.cos(2 * np.pi * (hour - 4) / 24) - 0.35 * np.cos(4 * np.pi * (hour - 4) / 24)
    seasonal = -np.cos(2 * np.pi * (day - 15) / (365.0 + calendar.isleap(year)))
    base = mean + daily_amplitude * daily * (1 + 0.5 * (seasonal > 0) * seasonal) \
        + seasonal_amplitude * seasonal
    ar = np.empty(n)
    shocks = rng.standard_normal(n) * noise
    ar[0] = shocks[0]
    for i in range(1, n):
        ar[i] = 0.8 * ar[i - 1] + 0.6 * shocks[i]
    spikes = (rng.random(n) < spike_rate) * rng.exponential(spike_scale, n)
    return PriceSeries(start=datetime(year, 1, 1), prices=np.round(base + ar + spikes, 2))


def two_level_prices(n_hours: int, low: float, high: float, high_hours=range(12, 24),
                     start: datetime = datetime(2012, 1, 1)) -> PriceSeries:
    """Day/night price pattern: ``high`` during ``high_hours`` of each day."""
    hours = np.arange(n_hours) % 24
    mask = np.isin(hours, list(high_hours))
    return PriceSeries(start=start, prices=np.where(mask, high, low).astype(float))
