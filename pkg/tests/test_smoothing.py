import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agingmpc.aging import BatterySpec, CellParams
from agingmpc.errors import InvalidInputError
from agingmpc.plan import aging_weight
from agingmpc.smoothing import (
    SmoothingPlanInput, SmoothingPlanner, build_problem, plan, policy_action,
)
from oracles import qp_enumerate

SPEC = BatterySpec(15000)
Q = 2.5 * SPEC.scale                      # 123.75 kWh in Wh
KAPPA = aging_weight(CellParams(), SPEC, 1000.0, 2.5)


def oracle(inp):
    """Dense smoothing problem in kW/kWh, written out from the objective formula.

    Variables: (b+_k, b-_k, z_k) for k = 0..H, then q_1..q_H.
    """
    H, dt = inp.horizon, inp.dt
    Qk, q0 = inp.capacity_now / 1e3, inp.charge_now / 1e3
    w = inp.gamma * inp.aging_coeff * 1e3
    loads = np.concatenate([[inp.load_now], inp.forecasts]) / 1e3
    n = 3 * (H + 1) + H

    def bp(k):
        return 3 * k

    def bm(k):
        return 3 * k + 1

    def z(k):
        return 3 * k + 2

    def q(k):
        return 3 * (H + 1) + k - 1

    P = np.zeros((n, n))
    c = np.zeros(n)
    for k in range(1, H + 1):
        d = np.zeros(n)
        d[z(k)], d[z(k - 1)] = 1.0, -1.0
        P += 2.0 / H * np.outer(d, d)
    if inp.anchored:
        P[z(0), z(0)] += 2.0 / H
        c[z(0)] -= 2.0 * inp.prev_total / 1e3 / H
    P[q(H), q(H)] += 2 * inp.eta_term
    c[q(H)] -= inp.eta_term * Qk
    for k in range(H + 1):
        c[bp(k)] = c[bm(k)] = w / H
    rows, lo, hi = [], [], []

    def row(entries, a, b):
        r = np.zeros(n)
        for j, v in entries:
            r[j] += v
        rows.append(r)
        lo.append(a)
        hi.append(b)

    bmax = inp.c_rate_max * Qk
    for k in range(H + 1):
        row([(z(k), 1.0), (bp(k), -1.0), (bm(k), 1.0)], loads[k], loads[k])
        row([(bp(k), 1.0)], 0.0, bmax)
        row([(bm(k), 1.0)], 0.0, bmax)
        row([(z(k), 1.0)], 0.0, np.inf)
    for k in range(1, H + 1):
        prev = [(q(k - 1), -1.0)] if k > 1 else []
        rhs = q0 if k == 1 else 0.0
        row([(q(k), 1.0), (bp(k - 1), dt), (bm(k - 1), -dt)] + prev, rhs, rhs)
        row([(q(k), 1.0)], 0.0, Qk)
    x, _ = qp_enumerate(P, c, np.array(rows), np.array(lo), np.array(hi))
    f = 0.5 * x @ P @ x + c @ x + inp.eta_term * Qk ** 2 / 4
    if inp.anchored:
        f += (inp.prev_total / 1e3) ** 2 / H
    b = x[0:3 * (H + 1):3] - x[1:3 * (H + 1):3]
    return f, b * 1e3


def make(forecasts, load_now=20000.0, gamma=1e5, charge=0.5, eta=0.5, **kw):
    return SmoothingPlanInput(charge_now=charge * Q, capacity_now=Q, aging_coeff=KAPPA,
                              load_now=load_now, forecasts=np.asarray(forecasts, float),
                              gamma=gamma, eta_term=eta, **kw)


def net(inp, p):
    return np.concatenate([[inp.load_now], inp.forecasts]) + p.power


def check_feasible(inp, p, rtol=1e-5):
    tol = rtol * inp.capacity_now
    H = inp.horizon
    assert p.power.shape == (H + 1,) and p.charge.shape == (H,)
    q_prev = np.concatenate([[inp.charge_now], p.charge[:-1]])
    np.testing.assert_allclose(p.charge, q_prev - inp.dt * p.power[:H], atol=tol)
    assert np.all(p.charge >= -tol) and np.all(p.charge <= inp.capacity_now + tol)
    assert np.all(np.abs(p.power) <= inp.c_rate_max * inp.capacity_now + tol)
    assert np.all(net(inp, p) >= -tol)


class TestBuild:
    def test_shape(self):
        pr = build_problem(make(np.full(18, 20000.0)))
        assert (pr.n, pr.m) == (3 + 4 * 18, 4 + 6 * 18)

    @pytest.mark.parametrize("kw", [dict(charge=-0.1), dict(gamma=-1.0), dict(load_now=-1.0),
                                    dict(forecasts=[np.inf]), dict(forecasts=[])])
    def test_invalid(self, kw):
        forecasts = kw.pop("forecasts", [20000.0])
        with pytest.raises(InvalidInputError):
            make(forecasts, **kw)


class TestPlan:
    def test_constant_forecast_zero_action(self):
        p = plan(make(np.full(18, 20000.0), gamma=1e5))
        np.testing.assert_allclose(p.power, 0.0, atol=1e-6 * Q)
        assert p.objective_value == pytest.approx(0.0, abs=1e-8)

    def test_h2_matches_oracle(self):
        inp = make([20000.0, 5000.0], load_now=35000.0, gamma=1e5)
        p = plan(inp)
        f, b = oracle(inp)
        assert p.objective_value == pytest.approx(f, abs=1e-6 * (1 + abs(f)))
        np.testing.assert_allclose(p.power, b, atol=1e-5 * Q)
        check_feasible(inp, p)

    @settings(max_examples=25)
    @given(st.lists(st.sampled_from([5000.0, 20000.0, 35000.0]), min_size=1, max_size=2),
           st.sampled_from([5000.0, 20000.0, 35000.0]), st.floats(0.0, 1.0),
           st.sampled_from([0.0, 1e4, 1e5, 1e6]), st.floats(0.1, 5.0))
    def test_matches_oracle_small_horizon(self, forecasts, load_now, frac, gamma, eta):
        inp = make(forecasts, load_now=load_now, gamma=gamma, charge=frac, eta=eta)
        p = plan(inp)
        f, _ = oracle(inp)
        assert p.objective_value == pytest.approx(f, abs=1e-6 * (1 + abs(f)))
        check_feasible(inp, p)

    def test_huge_gamma_tracks_forecast(self):
        fc = np.random.default_rng(2).choice([5000.0, 20000.0, 35000.0], 18)
        inp = make(fc, gamma=1e10)
        p = plan(inp)
        assert p.throughput < 1e-6 * Q
        np.testing.assert_allclose(net(inp, p), np.concatenate([[inp.load_now], fc]),
                                   atol=1e-6 * Q)

    def test_step_up_smoothed(self):
        fc = np.full(18, 35000.0)
        inp = make(fc, load_now=5000.0, gamma=1e4)
        p = plan(inp)
        assert p.power[0] > 0 or p.power[1] < 0
        z = net(inp, p)
        w = np.concatenate([[inp.load_now], fc])
        assert (z[1] - z[0]) ** 2 < (w[1] - w[0]) ** 2
        # b = 0 is feasible with objective (1/H) (dw)^2 in kW^2 plus nothing else
        assert p.objective_value < ((w[1] - w[0]) / 1e3) ** 2 / 18

    def test_gamma_zero_flat_net_load(self):
        # ample capacity and a negligible terminal weight: z is constant (its
        # level is then only weakly determined)
        inp = make([5000.0, 35000.0, 20000.0, 5000.0], load_now=20000.0, gamma=0.0,
                   eta=1e-9)
        z = net(inp, plan(inp))
        np.testing.assert_allclose(z, z.mean(), atol=1e-3 * Q)

    def test_monotone_in_gamma(self):
        fc = np.random.default_rng(5).choice([5000.0, 20000.0, 35000.0], 18)
        rough, tp = [], []
        for g in (0.0, 1e4, 1e5, 1e6, 1e7, 1e8):
            inp = make(fc, load_now=35000.0, gamma=g)
            p = plan(inp)
            rough.append(float(np.sum(np.diff(net(inp, p)) ** 2)))
            tp.append(p.throughput)
        assert all(b >= a * (1 - 1e-5) - 1e-3 for a, b in zip(rough, rough[1:]))
        assert all(b <= a * (1 + 1e-5) + 1e-3 for a, b in zip(tp, tp[1:]))
        assert tp[-1] < tp[0]

    @given(st.integers(0, 10_000), st.floats(0.0, 1.0))
    def test_feasible(self, seed, frac):
        rng = np.random.default_rng(seed)
        fc = rng.choice([5000.0, 20000.0, 35000.0], 18)
        inp = make(fc, load_now=float(rng.choice([5000.0, 35000.0])), gamma=1e5, charge=frac)
        check_feasible(inp, plan(inp))

    def test_anchor_pulls_first_net_toward_previous(self):
        fc = np.full(18, 35000.0)
        free = make(fc, load_now=35000.0, gamma=1e4)
        anchored = make(fc, load_now=35000.0, gamma=1e4, prev_total=5000.0,
                        anchor_previous=True)
        z_free = net(free, plan(free))[0]
        z_anch = net(anchored, plan(anchored))[0]
        assert abs(z_anch - 5000.0) < abs(z_free - 5000.0)

    def test_anchor_matches_oracle(self):
        inp = make([35000.0, 20000.0], load_now=35000.0, gamma=1e4, prev_total=5000.0,
                   anchor_previous=True)
        f, _ = oracle(inp)
        assert plan(inp).objective_value == pytest.approx(f, abs=1e-6 * (1 + abs(f)))

    def test_prev_total_ignored_without_anchor(self):
        fc = np.random.default_rng(6).choice([5000.0, 20000.0, 35000.0], 18)
        a = plan(make(fc))
        b = plan(make(fc, prev_total=1234.0))
        np.testing.assert_array_equal(a.power, b.power)


class TestPolicy:
    def test_flat(self):
        inp = make(np.full(18, 20000.0))
        assert policy_action(inp) == pytest.approx(0.0, abs=1e-6 * Q)

    def test_deterministic(self):
        inp = make(np.random.default_rng(4).choice([5000.0, 35000.0], 18), load_now=5000.0)
        assert policy_action(inp) == policy_action(inp)

    def test_planner_reuse_matches_fresh(self):
        rng = np.random.default_rng(8)
        loads = rng.choice([5000.0, 20000.0, 35000.0], 40)
        planner = SmoothingPlanner()
        for k in range(10):
            inp = make(loads[k + 1:k + 19], load_now=loads[k], charge=0.3 + 0.02 * k)
            reused = planner.plan(inp)
            fresh = plan(inp)
            assert reused.objective_value == pytest.approx(
                fresh.objective_value, abs=1e-6 * (1 + abs(fresh.objective_value)))
