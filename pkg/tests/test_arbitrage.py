import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from agingmpc.aging import BatterySpec, CellParams
from agingmpc.arbitrage import (
    ArbitragePlanInput, ArbitragePlanner, build_problem, plan, policy_action,
)
from agingmpc.errors import InvalidInputError
from agingmpc.plan import aging_weight
from oracles import qp_enumerate

SPEC = BatterySpec(500000)
Q = 2.5 * SPEC.scale                      # 4.125 MWh in Wh
KAPPA = aging_weight(CellParams(), SPEC, 1000.0, 2.5)


def oracle(inp):
    """Dense version of the planning problem in MW/MWh, built from the formula."""
    H, dt = inp.horizon, inp.dt
    Qm, q0 = inp.capacity_now / 1e6, inp.charge_now / 1e6
    w = inp.gamma * inp.aging_coeff * 1e6
    n = 3 * H
    P = np.zeros((n, n))
    P[3 * H - 1, 3 * H - 1] = 2 * inp.eta_term
    c = np.zeros(n)
    rows, lo, hi = [], [], []
    for k in range(H):
        c[3 * k] = (-inp.prices[k] * dt + w) / H
        c[3 * k + 1] = (inp.prices[k] * dt + w) / H
        r = np.zeros(n)
        r[3 * k + 2] = 1.0
        r[3 * k] = dt
        r[3 * k + 1] = -dt
        if k > 0:
            r[3 * k - 1] = -1.0
        rows.append(r)
        lo.append(q0 if k == 0 else 0.0)
        hi.append(q0 if k == 0 else 0.0)
        for j, ub in ((3 * k, inp.c_rate_max * Qm), (3 * k + 1, inp.c_rate_max * Qm),
                      (3 * k + 2, Qm)):
            e = np.zeros(n)
            e[j] = 1.0
            rows.append(e)
            lo.append(0.0)
            hi.append(ub)
    c[-1] += -inp.eta_term * Qm
    x, _ = qp_enumerate(P, c, np.array(rows), np.array(lo), np.array(hi))
    f = 0.5 * x @ P @ x + c @ x + inp.eta_term * Qm ** 2 / 4
    return f, x


def make(prices, gamma=1e5, charge=0.5, eta=1.0, **kw):
    return ArbitragePlanInput(charge_now=charge * Q, capacity_now=Q, aging_coeff=KAPPA,
                              prices=np.asarray(prices, float), gamma=gamma, eta_term=eta, **kw)


def check_feasible(inp, p, rtol=1e-5):
    tol = rtol * inp.capacity_now
    q_prev = np.concatenate([[inp.charge_now], p.charge[:-1]])
    np.testing.assert_allclose(p.charge, q_prev - inp.dt * p.power, atol=tol)
    assert np.all(p.charge >= -tol) and np.all(p.charge <= inp.capacity_now + tol)
    assert np.all(np.abs(p.power) <= inp.c_rate_max * inp.capacity_now + tol)


class TestBuild:
    def test_h1_shape(self):
        pr = build_problem(make([30.0]))
        assert pr.n == 3
        assert np.all(np.isfinite(pr.lower)) and np.all(np.isfinite(pr.upper))

    def test_shape_h24(self):
        pr = build_problem(make(np.ones(24)))
        assert (pr.n, pr.m) == (72, 96)

    @pytest.mark.parametrize("kw", [dict(charge=1.2), dict(gamma=-1.0), dict(eta=-1.0),
                                    dict(prices=[np.nan]), dict(prices=[])])
    def test_invalid(self, kw):
        prices = kw.pop("prices", [30.0])
        with pytest.raises(InvalidInputError):
            make(prices, **kw)

    def test_negative_prices_logged(self, caplog):
        with caplog.at_level(logging.INFO, logger="agingmpc.arbitrage"):
            make([-5.0, 20.0])
        assert "negative prices" in caplog.text


class TestPlan:
    def test_one_step_lp(self):
        inp = make([40.0], gamma=0.0, eta=0.0)
        p = plan(inp)
        assert p.power[0] == pytest.approx(min(inp.c_rate_max * Q, 0.5 * Q / 1.0), rel=1e-6)

    def test_flat_prices_closed_form(self):
        # stage terms are averaged over H, the terminal term is not, so a flat
        # price still pays for net discharge X = (p - w) / (2 H eta) in MWh
        H, price, eta = 24, 30.0, 1.0
        p = plan(make(np.full(H, price), gamma=1e5, eta=eta))
        w = 1e5 * KAPPA * 1e6
        assert p.power.sum() / 1e6 == pytest.approx((price - w) / (2 * H * eta), rel=1e-4)
        assert p.objective_value == pytest.approx(-(price - w) ** 2 / (4 * H * H * eta),
                                                  rel=1e-6)
        assert np.all(p.charging < 1e-6 * Q)

    def test_flat_prices_zero_action_when_aging_dominates(self):
        # aging weight per MWh above the price: doing nothing is optimal
        p = plan(make(np.full(24, 30.0), gamma=1e7))
        np.testing.assert_allclose(p.power, 0.0, atol=1e-6 * Q)
        assert p.objective_value == pytest.approx(0.0, abs=1e-8)

    def test_zero_prices_zero_action(self):
        p = plan(make(np.zeros(12), gamma=1e5))
        np.testing.assert_allclose(p.power, 0.0, atol=1e-6 * Q)

    def test_two_period_buy_low_sell_high(self):
        inp = make([10.0, 60.0], gamma=1e4, charge=0.5, eta=100.0)
        p = plan(inp)
        assert p.power[0] < 0 < p.power[1]
        f, x = oracle(inp)
        assert p.objective_value == pytest.approx(f, abs=1e-6 * (1 + abs(f)))
        np.testing.assert_allclose(p.power, (x[0::3] - x[1::3]) * 1e6, atol=1e-5 * Q)

    def test_terminal_penalty_dominates(self):
        inp = make(np.full(6, 25.0), gamma=0.0, charge=0.1, eta=1e4)
        p = plan(inp)
        # terminal charge is pulled to Q/2 - p / (2 H eta) (MWh)
        assert p.charge[-1] / 1e6 == pytest.approx(Q / 2e6 - 25.0 / (2 * 6 * 1e4), rel=1e-6)

    def test_overlap_free(self):
        p = plan(make(np.random.default_rng(0).uniform(0, 80, 24), gamma=0.0))
        assert np.all(np.minimum(p.discharge, p.charging) == 0.0)

    @given(st.lists(st.floats(0.0, 100.0), min_size=1, max_size=3),
           st.floats(0.0, 1.0), st.sampled_from([0.0, 1e4, 1e5, 1e6]), st.floats(0.1, 10.0))
    def test_matches_oracle_small_horizon(self, prices, frac, gamma, eta):
        inp = make(prices, gamma=gamma, charge=frac, eta=eta)
        p = plan(inp)
        f, _ = oracle(inp)
        assert p.objective_value == pytest.approx(f, abs=1e-6 * (1 + abs(f)))
        check_feasible(inp, p)

    @given(st.integers(0, 10_000), st.floats(0.0, 1.0))
    def test_feasible(self, seed, frac):
        prices = np.random.default_rng(seed).uniform(-10, 120, 24)
        inp = make(prices, gamma=3e5, charge=frac)
        check_feasible(inp, plan(inp))

    def test_throughput_nonincreasing_in_gamma(self):
        prices = 30 + 20 * np.sin(np.arange(24) * 2 * np.pi / 24) \
            + np.random.default_rng(1).uniform(0, 5, 24)
        tp = [plan(make(prices, gamma=g)).throughput for g in (0, 1e4, 1e5, 3e5, 1e6, 3e6)]
        assert all(b <= a * (1 + 1e-5) + 1e-3 for a, b in zip(tp, tp[1:]))
        assert tp[-1] < tp[0]


class TestPolicy:
    def test_flat(self):
        assert policy_action(make(np.full(24, 40.0), gamma=1e7)) == pytest.approx(0.0, abs=1e-6 * Q)

    def test_charges_at_cheap_midnight(self):
        h = np.arange(24)
        prices = np.where(h < 6, 20.0 + h, np.where((h >= 10) & (h < 19), 60.0, 35.0))
        inp = make(prices, gamma=1e4)
        b = policy_action(inp)
        assert b < 0
        _, x = oracle(make(prices[:3], gamma=1e4))
        assert x[1] > 0  # the small-horizon oracle also charges first

    def test_deterministic(self):
        inp = make(np.random.default_rng(4).uniform(0, 80, 24))
        assert policy_action(inp) == policy_action(inp)

    def test_planner_reuse_matches_fresh(self):
        rng = np.random.default_rng(8)
        prices = rng.uniform(10, 70, 48)
        planner = ArbitragePlanner()
        for k in range(10):
            inp = make(prices[k:k + 24], charge=0.3 + 0.02 * k)
            reused = planner.plan(inp)
            fresh = plan(inp)
            assert reused.objective_value == pytest.approx(
                fresh.objective_value, abs=1e-6 * (1 + abs(fresh.objective_value)))
