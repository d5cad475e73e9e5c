import math
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, strategies as st

from agingmpc import market, markov
from agingmpc.aging import BatterySpec, CellParams
from agingmpc.errors import InfeasibleProfileError, InvalidInputError
from agingmpc.sim import (
    ArbitrageApp, CyclingApp, SimConfig, SmoothingApp, extrapolate_lifetime, npv,
    per_period_rate, price_array, rmsd, run, run_arbitrage, run_cycling, run_smoothing,
    sweep_gamma,
)
from oracles import geometric_npv, hours_in_years

PARAMS = CellParams()
ARB_SPEC = BatterySpec(500000)
SMOOTH_PARAMS = CellParams(c_rate_max=0.3)
SMOOTH_SPEC = BatterySpec(15000)
DAY = 1.0 / 365.0


def arb_config(gamma=1e5, prices=None, days=10, **kw):
    prices = prices if prices is not None else market.synthetic_prices(2012)
    return SimConfig(PARAMS, ARB_SPEC, ArbitrageApp(prices=prices, gamma=gamma),
                     desk_years=days * DAY, **kw)


def smooth_config(gamma=1e5, days=5, loads=None, **kw):
    app = SmoothingApp(gamma=gamma, loads=loads)
    return SimConfig(SMOOTH_PARAMS, SMOOTH_SPEC, app, dt=1.0 / 3.0, desk_years=days * DAY,
                     **kw)


class TestNpv:
    def test_zero_rate_is_sum(self):
        assert npv([1.0, 2.0, 3.5], 0.0) == 6.5

    def test_single(self):
        assert npv([11.0], 0.1) == pytest.approx(10.0, rel=1e-15)

    @given(st.floats(0.1, 100.0), st.floats(0.5, 1.5), st.floats(0.0, 0.5),
           st.integers(1, 200))
    def test_geometric(self, r0, g, i, n):
        stream = r0 * g ** np.arange(n)
        assert npv(stream, i) == pytest.approx(geometric_npv(r0, g, i, n), rel=1e-9)

    @given(st.lists(st.floats(0.0, 1e3), min_size=1, max_size=50),
           st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_nonincreasing_in_rate(self, revenues, a, b):
        lo, hi = sorted((a, b))
        assert npv(revenues, hi) <= npv(revenues, lo) * (1 + 1e-12) + 1e-12

    def test_negative_rate(self):
        with pytest.raises(InvalidInputError):
            npv([1.0], -0.1)

    def test_per_period_rate_compounds_to_annual(self):
        r = per_period_rate(0.1, 1.0)
        assert (1 + r) ** 8760 == pytest.approx(1.1, rel=1e-12)


class TestHelpers:
    def test_rmsd(self):
        assert rmsd([1.0, 3.0, 2.0]) == pytest.approx(math.sqrt((4 + 1) / 2))
        assert rmsd([5.0]) == 0.0

    def test_extrapolate(self):
        # loss grows like t^z, so reaching 4x the loss takes 4^(1/z) times as long
        assert extrapolate_lifetime(0.025, 1.0, 0.9, 0.5) == pytest.approx(16.0)
        assert extrapolate_lifetime(0.0, 1.0, 0.9, 0.6) == math.inf

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            arb_config(truth_model="magic")
        with pytest.raises(InvalidInputError):
            arb_config(interest_rates=(-0.1,))
        with pytest.raises(InvalidInputError):
            arb_config(full_window=(5, 2))


class TestCycling:
    def test_zero_cycles_hits_cap(self):
        cfg = SimConfig(PARAMS, ARB_SPEC, CyclingApp(0.0), max_sim_years=2.0)
        r = run_cycling(cfg)
        assert not r.reached_eol
        assert r.lifetime_years == pytest.approx(2.0)
        assert r.final_loss == 0.0

    def test_infeasible(self):
        cfg = SimConfig(PARAMS, ARB_SPEC, CyclingApp(12.0))
        with pytest.raises(InfeasibleProfileError):
            run_cycling(cfg)

    def test_square_wave(self):
        cfg = SimConfig(PARAMS, ARB_SPEC, CyclingApp(2.0), desk_years=2 * DAY, trace_every=1)
        r = run_cycling(cfg)
        b = r.action_trace / ARB_SPEC.scale
        i = PARAMS.q_init / 6.0
        # the last charging step is clipped to the slightly faded capacity
        assert np.all(b[:5] == pytest.approx(-i, rel=1e-12))
        assert b[5] == pytest.approx(-i, rel=1e-2)
        assert np.all(b[6:11] == pytest.approx(i, rel=1e-12))
        assert b[11] == pytest.approx(i, rel=1e-2)
        assert r.extrapolated


class TestArbitrage:
    def test_two_level_gamma_zero_revenue(self):
        prices = market.two_level_prices(24 * 40, 10.0, 60.0)
        cfg = SimConfig(PARAMS, ARB_SPEC, ArbitrageApp(prices=prices, gamma=0.0),
                        desk_years=30 * DAY, trace_every=1)
        r = run_arbitrage(cfg)
        a = r.action_trace[24:].reshape(-1, 24)
        cap = r.capacity_trace[24::24]
        daily = (a * np.tile([10.0] * 12 + [60.0] * 12, (a.shape[0], 1))).sum(axis=1) / 1e6
        # one full cycle per day worth capacity x (high - low)
        np.testing.assert_allclose(daily, cap * 50.0 / 1e6, rtol=5e-3)
        np.testing.assert_allclose(np.maximum(a, 0).sum(axis=1), cap, rtol=5e-3)

    def test_npv_zero_equals_total(self):
        r = run_arbitrage(arb_config(days=5))
        assert r.npv_by_rate[0.0] == pytest.approx(r.total_revenue, rel=1e-12)
        assert r.npv_by_rate[0.2] < r.npv_by_rate[0.1] < r.npv_by_rate[0.0]

    def test_energy_bookkeeping(self):
        r = run_arbitrage(arb_config(days=5, trace_every=1))
        q = r.charge_trace
        np.testing.assert_allclose(q[1:], q[:-1] - r.action_trace[:-1], rtol=0, atol=1e-6)
        assert np.all(q >= 0) and np.all(q <= r.capacity_trace * (1 + 1e-12))

    def test_huge_gamma_no_throughput(self):
        cfg = SimConfig(PARAMS, ARB_SPEC,
                        ArbitrageApp(prices=market.synthetic_prices(2012), gamma=1e12),
                        max_sim_years=0.02)
        r = run_arbitrage(cfg)
        assert not r.reached_eol and r.lifetime_years == pytest.approx(0.02, abs=1 / 8760)
        assert r.throughput_total < 1e-3

    def test_deterministic(self):
        a = run_arbitrage(arb_config(days=3, trace_every=1))
        b = run_arbitrage(arb_config(days=3, trace_every=1))
        assert a.summary() == b.summary()
        np.testing.assert_array_equal(a.action_trace, b.action_trace)

    def test_price_array_calendar(self):
        cfg = arb_config(days=3 * 365)
        prices = price_array(cfg, cfg.application)
        assert len(prices) >= 3 * 8760 + 24
        assert len(prices) in (hours_in_years(2012, n) for n in range(3, 6))

    def test_full_window_recorded(self):
        r = run_arbitrage(arb_config(days=3, trace_every=24, full_window=(24, 47)))
        assert np.all(np.diff(r.trace_time[(r.trace_time >= 24) & (r.trace_time <= 47)]) == 1)
        assert len(r.trace_time) == 1 + 24 + 1

    def test_rejects_wrong_app(self):
        with pytest.raises(InvalidInputError):
            run_arbitrage(smooth_config())


class TestSmoothing:
    def test_huge_gamma_matches_expected_rmsd(self):
        r = run_smoothing(smooth_config(gamma=1e12, days=60))
        assert r.rmsd_smoothed == pytest.approx(r.rmsd_unsmoothed, rel=1e-6)
        assert r.rmsd_unsmoothed == pytest.approx(markov.expected_rmsd(markov.MarkovLoadModel()),
                                                  rel=0.05)

    def test_constant_load(self):
        loads = markov.LoadSeries(start=datetime(2018, 1, 1), dt=1.0 / 3.0,
                                  states=np.ones(500, int), power=np.full(500, 20000.0))
        r = run_smoothing(smooth_config(gamma=1e5, days=3, loads=loads, trace_every=1))
        assert r.rmsd_smoothed == pytest.approx(0.0, abs=1e-3)
        assert r.rmsd_unsmoothed == 0.0
        np.testing.assert_allclose(r.action_trace, 0.0, atol=1e-3)

    def test_moderate_gamma_smooths(self):
        r = run_smoothing(smooth_config(gamma=1e5, days=5))
        ref = run_smoothing(smooth_config(gamma=1e12, days=5))
        assert r.rmsd_unsmoothed == ref.rmsd_unsmoothed
        assert r.rmsd_smoothed < 0.5 * ref.rmsd_smoothed

    def test_energy_bookkeeping(self):
        r = run_smoothing(smooth_config(days=2, trace_every=1))
        q = r.charge_trace
        np.testing.assert_allclose(q[1:], q[:-1] - r.action_trace[:-1] / 3.0, rtol=0, atol=1e-6)

    def test_deterministic_and_seeded(self):
        a = run_smoothing(smooth_config(days=2, seed=5))
        b = run_smoothing(smooth_config(days=2, seed=5))
        c = run_smoothing(smooth_config(days=2, seed=6))
        assert a.summary() == b.summary()
        assert a.rmsd_unsmoothed != c.rmsd_unsmoothed


class TestSweep:
    def test_single_row_equals_direct(self):
        cfg = arb_config(gamma=0.0, days=3)
        rows = sweep_gamma(cfg, [2e5])
        assert len(rows) == 1 and rows[0].error is None
        assert rows[0].result.summary() == run(cfg.with_app(gamma=2e5)).summary()

    def test_sorted_and_validated(self):
        cfg = smooth_config(days=1)
        rows = sweep_gamma(cfg, [1e6, 0.0])
        assert [r.gamma for r in rows] == [0.0, 1e6]
        for bad in ([], [1.0, 1.0], [-1.0]):
            with pytest.raises(InvalidInputError):
                sweep_gamma(cfg, bad)

    def test_parallel_matches_sequential(self):
        cfg = smooth_config(days=1)
        seq = sweep_gamma(cfg, [0.0, 1e5, 1e6])
        par = sweep_gamma(cfg, [0.0, 1e5, 1e6], workers=2)
        assert [r.summary() for r in seq] == [r.summary() for r in par]

    def test_failed_row_recorded(self):
        # a price series whose step differs from the simulation step fails per row
        bad = market.PriceSeries(start=datetime(2012, 1, 1), prices=np.ones(100), dt=0.5)
        rows = sweep_gamma(arb_config(prices=bad, days=1), [0.0, 1.0])
        assert all(r.result is None and "differs" in r.error for r in rows)
