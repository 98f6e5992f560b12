from types import SimpleNamespace

import numpy as np
import pytest

from cann.aggregator import Aggregator, ExpertLedger, run, weights
from cann.experts import SaddleResult
from cann.market import MarketConfig
from cann.objective import RiskConfig


def scripted(b, c, lam):
    return SaddleResult(b=np.asarray(b, dtype=float), c=c, lam=lam, value=0.0,
                        iters=1, residual=0.0, converged=True)


class ScriptedPool:
    """Pool stand-in returning fixed per-day predictions."""

    def __init__(self, mcfg, rcfg, preds_by_day):
        self.mcfg = mcfg
        self.rcfg = rcfg
        self.preds_by_day = preds_by_day
        self.calls = 0
        self.unconverged_days = 0

    def __len__(self):
        return len(self.preds_by_day[0])

    def observe(self, x):
        pass

    def predict_all(self):
        preds = self.preds_by_day[min(self.calls, len(self.preds_by_day) - 1)]
        self.calls += 1
        return preds


class TestWeights:
    def test_uniform_when_ledgers_equal(self):
        led = ExpertLedger.uniform(4)
        led.loss_bc[:] = 3.3
        led.loss_lam[:] = -1.1
        np.testing.assert_allclose(weights(led, 1, "primal"), np.full(4, 0.25))
        np.testing.assert_allclose(weights(led, 7, "dual"), np.full(4, 0.25))

    def test_two_expert_hand_values(self):
        led = ExpertLedger.uniform(2)
        led.loss_bc[:] = [0.0, 3.0 * np.log(2.0)]  # t = 9 -> sqrt(t) = 3
        np.testing.assert_allclose(weights(led, 9, "primal"), [2 / 3, 1 / 3],
                                   atol=1e-12)

    def test_dual_weight_monotone_in_gap(self):
        vals = []
        for gap in (0.5, 1.0, 2.0, 4.0):
            led = ExpertLedger.uniform(2)
            led.loss_lam[:] = [gap, 0.0]
            vals.append(weights(led, 4, "dual")[0])
        assert all(b > a for a, b in zip(vals, vals[1:]))
        assert vals[-1] > 0.85

    def test_priors_enter_both_sides(self):
        led = ExpertLedger.with_priors([0.8, 0.2])
        np.testing.assert_allclose(weights(led, 1, "primal"), [0.8, 0.2])
        np.testing.assert_allclose(weights(led, 1, "dual"), [0.8, 0.2])

    def test_overflow_safe(self):
        led = ExpertLedger.uniform(3)
        led.loss_bc[:] = [0.0, 5e4, 1e5]
        w = weights(led, 1, "primal")
        assert np.isfinite(w).all() and w[0] == pytest.approx(1.0)

    def test_validation(self):
        led = ExpertLedger.uniform(2)
        with pytest.raises(ValueError):
            weights(led, 0, "primal")
        with pytest.raises(ValueError):
            weights(led, 1, "sideways")
        with pytest.raises(ValueError):
            ExpertLedger.with_priors([0.5, 0.6])


class TestStepDegenerate:
    MCFG = MarketConfig(n=1, B=0.4, r=0.01)
    RCFG = RiskConfig(alpha=0.9, gamma=0.05, M=5.0, lam_max=3.0)

    def test_single_expert_mixture_is_identity(self):
        L = self.MCFG.L
        pred = [scripted([0.3 * L, 0.5 * L, 0.2 * L], 0.25, 0.7)]
        pool = ScriptedPool(self.MCFG, self.RCFG, [pred])
        agg = Aggregator(pool)
        rng = np.random.default_rng(0)
        for _ in range(4):
            b, c, lam = agg.played
            np.testing.assert_allclose(b, pred[0].b)
            assert c == pred[0].c and lam == pred[0].lam
            agg.step(rng.uniform(0.9, 1.1, size=1))

    def test_identical_experts_keep_uniform_weights(self):
        L = self.MCFG.L
        pred = [scripted([L, 0, 0], 0.1, 0.5)] * 3
        pool = ScriptedPool(self.MCFG, self.RCFG, [pred])
        agg = Aggregator(pool)
        rng = np.random.default_rng(1)
        for _ in range(5):
            rec = agg.step(rng.uniform(0.8, 1.2, size=1))
            b, c, lam = agg.played
            np.testing.assert_allclose(b, pred[0].b)
            assert c == pytest.approx(pred[0].c)
            assert lam == pytest.approx(pred[0].lam)
            assert rec.entropy_primal == pytest.approx(np.log(3.0))
            assert rec.entropy_dual == pytest.approx(np.log(3.0))


class TestThreeDayHandTrace:
    """Replicates the full ledger/weight/mixture evolution with inline formulas."""

    def test_trace(self):
        mcfg = MarketConfig(n=1, B=0.4, r=0.01)
        rcfg = RiskConfig(alpha=0.9, gamma=0.05, M=5.0, lam_max=3.0)
        L, r, q, gamma = mcfg.L, mcfg.r, 10.0, 0.05
        off = (L - 1.0) * (1.0 + r)

        b_A, c_A, lam_A = np.array([L, 0.0, 0.0]), 0.1, 0.2
        b_B, c_B, lam_B = np.array([0.0, L, 0.0]), -0.1, 0.0
        preds = [scripted(b_A, c_A, lam_A), scripted(b_B, c_B, lam_B)]
        xs = [1.2, 0.8, 1.0]

        def lag(b, c, lam, x):
            xp = np.array([1.0 + r, x, 2.0 - x + r])
            w = -np.log(float(b @ xp) - off)
            return w + lam * (c + q * max(w - c, 0.0) - gamma)

        pool = ScriptedPool(mcfg, rcfg, [preds])
        agg = Aggregator(pool)

        Lb = np.zeros(2)
        Ll = np.zeros(2)
        wp = np.array([0.5, 0.5])
        wd = np.array([0.5, 0.5])
        for t, x in enumerate(xs, start=1):
            b_exp = wp[0] * b_A + wp[1] * b_B
            c_exp = wp[0] * c_A + wp[1] * c_B
            lam_exp = wd[0] * lam_A + wd[1] * lam_B
            got_b, got_c, got_lam = agg.played
            np.testing.assert_allclose(got_b, b_exp, atol=1e-12)
            assert got_c == pytest.approx(c_exp, abs=1e-12)
            assert got_lam == pytest.approx(lam_exp, abs=1e-12)

            rec = agg.step(np.array([x]))

            xp = np.array([1.0 + r, x, 2.0 - x + r])
            ret_exp = float(b_exp @ xp) - off
            assert rec.ret == pytest.approx(ret_exp, rel=1e-12)
            assert rec.lagrangian == pytest.approx(
                lag(b_exp, c_exp, lam_exp, x), rel=1e-12)

            Lb += [lag(b_A, c_A, lam_exp, x), lag(b_B, c_B, lam_exp, x)]
            Ll += [lag(b_exp, c_exp, lam_A, x), lag(b_exp, c_exp, lam_B, x)]
            np.testing.assert_allclose(agg.ledger.loss_bc, Lb, atol=1e-12)
            np.testing.assert_allclose(agg.ledger.loss_lam, Ll, atol=1e-12)

            zp = np.exp(-Lb / np.sqrt(t))
            wp = zp / zp.sum()
            zd = np.exp(Ll / np.sqrt(t))
            wd = zd / zd.sum()


class TestRun:
    def test_identity_market_wealth_one(self):
        mcfg = SimpleNamespace(n=2, B=0.4, r=0.0, L=1.5, dim=5)
        rcfg = RiskConfig(alpha=0.9, gamma=0.05, M=5.0, lam_max=3.0)
        rng = np.random.default_rng(2)
        raw = rng.uniform(0, 1, size=5)
        b = 1.5 * raw / raw.sum()
        pool = ScriptedPool(mcfg, rcfg, [[scripted(b, 0.0, 0.3)]])
        rep = run(np.ones((7, 2)), pool)
        assert rep.terminal_wealth == pytest.approx(1.0, abs=1e-12)
        assert rep.growth_rate == pytest.approx(0.0, abs=1e-12)

    def test_all_cash_expert_compounds_interest(self):
        mcfg = MarketConfig(n=1, B=0.4, r=0.01)
        rcfg = RiskConfig(alpha=0.9, gamma=0.05, M=5.0, lam_max=3.0)
        pool = ScriptedPool(mcfg, rcfg,
                            [[scripted([mcfg.L, 0, 0], -np.log1p(mcfg.r), 0.0)]])
        rng = np.random.default_rng(3)
        T = 20
        rep = run(rng.uniform(0.8, 1.2, size=(T, 1)), pool)
        assert rep.terminal_wealth == pytest.approx((1 + mcfg.r) ** T, rel=1e-12)
        np.testing.assert_allclose(rep.omegas, np.full(T, -np.log1p(mcfg.r)))

    def test_report_fields_consistent(self):
        mcfg = MarketConfig(n=1, B=0.4, r=0.01)
        rcfg = RiskConfig(alpha=0.9, gamma=0.1, M=5.0, lam_max=3.0)
        L = mcfg.L
        day1 = [scripted([L, 0, 0], 0.0, 0.1), scripted([0, L, 0], 0.0, 0.4)]
        pool = ScriptedPool(mcfg, rcfg, [day1])
        mk = np.random.default_rng(4).uniform(0.9, 1.1, size=(15, 1))
        rep = run(mk, pool, keep_portfolios=True)
        assert rep.terminal_wealth == pytest.approx(np.prod(rep.returns), rel=1e-12)
        assert rep.growth_rate == pytest.approx(
            np.mean(np.log(rep.returns)), abs=1e-14)
        np.testing.assert_allclose(rep.omegas, -np.log(rep.returns), atol=1e-14)
        assert rep.portfolios.shape == (15, 3)
        np.testing.assert_allclose(rep.portfolios.sum(axis=1), np.full(15, L),
                                   atol=1e-9)
        trail = rep.trailing_cvar(0.9)
        assert trail.size == 15
        assert trail[-1] == pytest.approx(rep.empirical_cvar(0.9))

    def test_mixture_stays_feasible(self):
        mcfg = MarketConfig(n=1, B=0.4, r=0.01)
        rcfg = RiskConfig(alpha=0.9, gamma=0.05, M=5.0, lam_max=3.0)
        L = mcfg.L
        rng = np.random.default_rng(5)
        day1 = [scripted(L * rng.dirichlet(np.ones(3)), float(rng.uniform(-5, 5)),
                         float(rng.uniform(0, 3))) for _ in range(6)]
        pool = ScriptedPool(mcfg, rcfg, [day1])
        rep = run(rng.uniform(0.7, 1.3, size=(25, 1)), pool, keep_portfolios=True)
        assert np.all(rep.portfolios >= -1e-12)
        np.testing.assert_allclose(rep.portfolios.sum(axis=1), np.full(25, L),
                                   atol=1e-9)
        assert np.all(rep.lams >= 0) and np.all(rep.lams <= rcfg.lam_max)
        assert np.all(np.abs(rep.cs) <= rcfg.M)

    def test_determinism_bitwise(self):
        from cann.experts import ExpertPool
        mcfg = MarketConfig(n=1, B=0.4, r=0.01)
        rcfg = RiskConfig.from_market(mcfg, 0.9, 0.1)
        mk = np.random.default_rng(6).uniform(0.9, 1.1, size=(40, 1))
        reps = []
        for _ in range(2):
            pool = ExpertPool(mcfg, rcfg, k_values=(1, 2), h_values=(1, 2))
            reps.append(run(mk, pool))
        a, b = reps
        np.testing.assert_array_equal(a.returns, b.returns)
        np.testing.assert_array_equal(a.omegas, b.omegas)
        np.testing.assert_array_equal(a.lams, b.lams)

    def test_best_expert_dominates_weights(self):
        # one expert repeatedly suffers lower Lagrangian loss; its primal
        # weight should go to one
        mcfg = MarketConfig(n=1, B=0.4, r=0.01)
        rcfg = RiskConfig(alpha=0.9, gamma=0.05, M=5.0, lam_max=3.0)
        L = mcfg.L
        day1 = [scripted([L, 0, 0], 0.0, 0.0), scripted([0, 0, L], 0.0, 0.0)]
        pool = ScriptedPool(mcfg, rcfg, [day1])
        agg = Aggregator(pool)
        for _ in range(200):
            agg.step(np.array([1.35]))  # short leg loses steadily
        w = weights(agg.ledger, agg.day, "primal")
        assert w[0] > 0.99
