import numpy as np
import pytest

from cann.experts import (ExpertPool, NeighborSchedule, SolverParams, _best_c,
                          _psi, default_triple, expert_predict, matched_set,
                          regularizer_weight, solve_saddle)
from cann.market import MarketConfig, transform_all
from cann.objective import RiskConfig, project_simplex


class TestNeighborSchedule:
    def test_default_fractions(self):
        sched = NeighborSchedule.default(10)
        assert sched.fraction(1) == pytest.approx(1 / 20)
        assert sched.fraction(10) == pytest.approx(1 / 20 + 9 / 18)

    def test_h_hat_floor(self):
        sched = NeighborSchedule.default(10)
        assert sched.h_hat(1, 19) == 0
        assert sched.h_hat(1, 20) == 1
        assert sched.h_hat(10, 100) == 55

    def test_fraction_bounds_enforced(self):
        with pytest.raises(ValueError):
            NeighborSchedule((0.5, 1.2))


class TestMatchedSet:
    def test_no_candidates_when_history_short(self):
        hist = np.ones((3, 2))
        assert matched_set(hist, k=3, h_hat=5).size == 0
        assert matched_set(hist, k=4, h_hat=5).size == 0
        assert matched_set(np.ones((0, 2)), k=1, h_hat=5).size == 0

    def test_identical_history_tie_break_low_index(self):
        hist = np.ones((9, 1))  # predicting day 10
        idx = matched_set(hist, k=1, h_hat=3)
        np.testing.assert_array_equal(idx, [1, 2, 3])

    def test_enumerated_example(self):
        hist = np.array([1.0, 1.1, 0.9, 1.05, 1.0])
        # query 1.0; candidate windows are the first four values; the two
        # nearest are 1.0 (idx 0) and 1.05 (idx 3) -> successors 1 and 4
        idx = matched_set(hist, k=1, h_hat=2)
        np.testing.assert_array_equal(idx, [1, 4])
        np.testing.assert_allclose(hist[idx], [1.1, 1.0])

    def test_h_hat_zero_empty(self):
        assert matched_set(np.ones((9, 1)), k=1, h_hat=0).size == 0

    def test_all_candidates_when_h_hat_large(self):
        hist = np.arange(12.0).reshape(-1, 1) / 12.0 + 0.6
        idx = matched_set(hist, k=2, h_hat=100)
        np.testing.assert_array_equal(idx, np.arange(2, 12))

    def test_stable_under_irrelevant_growth(self):
        rng = np.random.default_rng(0)
        base = np.concatenate([rng.uniform(0.99, 1.01, size=30),
                               [1.0]]).reshape(-1, 1)
        near = matched_set(base, k=1, h_hat=5)
        # splice far-away days in the middle: selected windows (successor - 1
        # for k=1) are unchanged apart from the index shift, and no window
        # from the far block enters the set
        far = np.concatenate([base[:20], np.full((10, 1), 1.4), base[20:]])
        shifted = matched_set(far, k=1, h_hat=5)
        expect = np.array([(i - 1 if i - 1 < 20 else i - 1 + 10) + 1 for i in near])
        np.testing.assert_array_equal(shifted, expect)
        assert not np.any((shifted - 1 >= 20) & (shifted - 1 < 30))

    def test_window_metric_uses_all_k_days(self):
        hist = np.array([[1.0], [2.0], [1.0], [1.5], [1.0], [2.0]])
        # query window (1.0, 2.0): candidates (1,2),(2,1),(1,1.5),(1.5,1)
        idx = matched_set(hist, k=2, h_hat=1)
        np.testing.assert_array_equal(idx, [2])


def toy_rcfg(alpha=0.6, gamma=0.3, M=1.0, lam_max=2.0):
    return RiskConfig(alpha=alpha, gamma=gamma, M=M, lam_max=lam_max)


def grid_minmax(X, reg, rcfg, L, r, nb=401, nc=401):
    """Dense minimax over (b1, c) with the multiplier solved in closed form."""
    off = (L - 1.0) * (1.0 + r)
    b1 = np.linspace(0, L, nb)
    cs = np.linspace(-rcfg.M, rcfg.M, nc)
    B = np.stack([b1, L - b1], axis=1)
    w = -np.log(B @ X.T - off)
    meanw = w.mean(axis=1)
    hin = np.maximum(w[:, None, :] - cs[None, :, None], 0.0).mean(axis=2)
    gbar = cs[None, :] + rcfg.q * hin - rcfg.gamma
    P = (meanw[:, None] + reg * ((B * B).sum(axis=1)[:, None] + cs[None, :] ** 2)
         + _psi(gbar, reg, rcfg.lam_max))
    i, j = np.unravel_index(np.argmin(P), P.shape)
    lam = float(np.clip(gbar[i, j] / (2 * reg), 0, rcfg.lam_max))
    return b1[i], cs[j], lam, P[i, j]


def grid_maxmin(X, reg, rcfg, L, r, nb=2001):
    """max over lam of min over (b1, c), with exact inner c by bisection."""
    off = (L - 1.0) * (1.0 + r)
    b1 = np.linspace(0, L, nb)
    B = np.stack([b1, L - b1], axis=1)
    w = -np.log(B @ X.T - off)  # (nb, N)
    meanw = w.mean(axis=1)
    nrm = (B * B).sum(axis=1)

    def inner_min(lam):
        # exact c per b by bisection on the convex piecewise derivative
        lo = np.full(nb, -rcfg.M)
        hi = np.full(nb, rcfg.M)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            S = (w > mid[:, None]).mean(axis=1)
            dphi = 2 * reg * mid + lam * (1 - rcfg.q * S)
            hi = np.where(dphi > 0, mid, hi)
            lo = np.where(dphi > 0, lo, mid)
        c = 0.5 * (lo + hi)
        hing = np.maximum(w - c[:, None], 0.0).mean(axis=1)
        gbar = c + rcfg.q * hing - rcfg.gamma
        vals = meanw + reg * (nrm + c * c) + lam * gbar - reg * lam * lam
        return float(vals.min())

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    lo, hi = 0.0, rcfg.lam_max
    x1, x2 = hi - invphi * hi, invphi * hi
    f1, f2 = inner_min(x1), inner_min(x2)
    for _ in range(80):
        if f1 >= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = inner_min(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = inner_min(x2)
    return max(f1, f2)


class TestBestC:
    def test_matches_dense_scan(self):
        rng = np.random.default_rng(1)
        for _ in range(60):
            n = rng.integers(1, 12)
            w = rng.normal(0, 0.5, size=n)
            p = rng.dirichlet(np.ones(n))
            reg = float(rng.uniform(0.05, 1.5))
            q = float(rng.uniform(1.5, 20))
            gamma = float(rng.uniform(0.01, 0.5))
            M, lam_max = 1.5, float(rng.uniform(0.5, 5))
            c_star = _best_c(w, p, reg, q, gamma, M, lam_max)
            cs = np.linspace(-M, M, 40001)
            hin = np.maximum(w[None, :] - cs[:, None], 0.0) @ p
            vals = reg * cs ** 2 + _psi(cs + q * hin - gamma, reg, lam_max)
            best = reg * c_star ** 2 + _psi(
                c_star + q * float(np.maximum(w - c_star, 0.0) @ p) - gamma,
                reg, lam_max)
            assert best <= vals.min() + 1e-10


class TestSolveSaddle:
    def test_identity_sample_symmetric_solution(self):
        # single all-ones sample, r=0: omega == 0 for every feasible b, so the
        # regularizer pins b at uniform mass and c at zero; slack budget -> lam 0
        mcfg_dim = 5
        L = 2.0
        X = np.ones((1, mcfg_dim))
        rcfg = toy_rcfg(gamma=5.0, M=1.0, lam_max=2.0)
        res = solve_saddle(X, reg=0.5, rcfg=rcfg, L=L, r=0.0,
                           params=SolverParams(tol=1e-10))
        np.testing.assert_allclose(res.b, np.full(mcfg_dim, L / mcfg_dim), atol=1e-6)
        assert res.c == pytest.approx(0.0, abs=1e-8)
        assert res.lam == 0.0

    def test_generous_budget_kills_multiplier(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            X = rng.uniform(0.7, 1.4, size=(rng.integers(1, 6), 3))
            rcfg = toy_rcfg(alpha=0.9, gamma=1.0 * (1 + 1 / (1 - 0.9)), M=1.0,
                            lam_max=3.0)
            res = solve_saddle(X, reg=0.4, rcfg=rcfg, L=1.0, r=0.0)
            assert res.lam == 0.0

    def test_grid_agreement_two_instruments(self):
        rng = np.random.default_rng(3)
        for _ in range(12):
            N = rng.integers(1, 6)
            X = rng.uniform(0.7, 1.4, size=(N, 2))
            rcfg = toy_rcfg(alpha=float(rng.uniform(0.5, 0.8)),
                            gamma=float(rng.uniform(0.1, 0.5)))
            reg = float(rng.uniform(0.3, 1.0))
            res = solve_saddle(X, reg, rcfg, 1.0, 0.0, SolverParams(tol=1e-9))
            gb, gc, gl, gval = grid_minmax(X, reg, rcfg, 1.0, 0.0)
            assert res.b[0] == pytest.approx(gb, abs=2e-2)
            assert res.c == pytest.approx(gc, abs=2e-2)
            assert res.lam == pytest.approx(gl, abs=2e-2)
            assert res.value <= gval + 1e-9
            assert res.value == pytest.approx(gval, abs=1e-3)

    def test_minmax_equals_maxmin(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            N = rng.integers(2, 6)
            X = rng.uniform(0.7, 1.4, size=(N, 2))
            rcfg = toy_rcfg(alpha=0.7, gamma=0.15)
            reg = 0.5
            res = solve_saddle(X, reg, rcfg, 1.0, 0.0, SolverParams(tol=1e-9))
            maxmin = grid_maxmin(X, reg, rcfg, 1.0, 0.0)
            # the saddle value from the min-max order matches the max-min order
            assert res.value == pytest.approx(maxmin, abs=1e-5)

    def test_warm_start_lands_on_same_saddle(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(0.7, 1.4, size=(4, 3))
        rcfg = toy_rcfg(alpha=0.8, gamma=0.1)
        params = SolverParams(tol=1e-10)
        cold = solve_saddle(X, 0.6, rcfg, 1.0, 0.0, params)
        for _ in range(5):
            warm_b = project_simplex(rng.uniform(0, 1, size=3), 1.0)
            warm_c = float(rng.uniform(-1, 1))
            warm = solve_saddle(X, 0.6, rcfg, 1.0, 0.0, params,
                                warm=(warm_b, warm_c))
            np.testing.assert_allclose(warm.b, cold.b, atol=1e-5)
            assert warm.c == pytest.approx(cold.c, abs=1e-5)
            assert warm.lam == pytest.approx(cold.lam, abs=1e-5)

    def test_weighted_samples_match_replication(self):
        X = np.array([[1.2, 0.9], [0.8, 1.3], [1.0, 1.0]])
        reps = np.array([3, 1, 2])
        rcfg = toy_rcfg(alpha=0.7, gamma=0.2)
        repl = solve_saddle(np.repeat(X, reps, axis=0), 0.5, rcfg, 1.0, 0.0,
                            SolverParams(tol=1e-10))
        wtd = solve_saddle(X, 0.5, rcfg, 1.0, 0.0, SolverParams(tol=1e-10),
                           weights=reps / reps.sum())
        np.testing.assert_allclose(wtd.b, repl.b, atol=1e-6)
        assert wtd.value == pytest.approx(repl.value, abs=1e-9)

    def test_reg_to_zero_approaches_unregularized_value(self):
        rng = np.random.default_rng(6)
        X = rng.uniform(0.75, 1.35, size=(4, 2))
        rcfg = toy_rcfg(alpha=0.7, gamma=0.05, M=1.0, lam_max=3.0)
        # unregularized saddle value on a fine grid: psi degenerates to a
        # hinge penalty with slope lam_max
        b1 = np.linspace(0, 1, 2001)
        cs = np.linspace(-1, 1, 2001)
        B = np.stack([b1, 1 - b1], axis=1)
        w = -np.log(B @ X.T)
        meanw = w.mean(axis=1)
        target = np.inf
        for j, c in enumerate(cs):
            gbar = c + rcfg.q * np.maximum(w - c, 0.0).mean(axis=1) - rcfg.gamma
            vals = meanw + rcfg.lam_max * np.maximum(gbar, 0.0)
            target = min(target, float(vals.min()))
        got = [solve_saddle(X, reg, rcfg, 1.0, 0.0,
                            SolverParams(tol=1e-10, max_iters=20000)).value
               for reg in (0.3, 0.1, 0.03, 0.01, 0.003)]
        errs = [abs(v - target) for v in got]
        assert errs[-1] < 5e-3
        assert errs[-1] <= errs[0]

    def test_rejects_bad_inputs(self):
        rcfg = toy_rcfg()
        with pytest.raises(ValueError):
            solve_saddle(np.ones((0, 2)), 0.5, rcfg, 1.0, 0.0)
        with pytest.raises(ValueError):
            solve_saddle(np.ones((2, 2)), 0.0, rcfg, 1.0, 0.0)

    def test_primal_feasibility_exact(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            dim = int(rng.integers(2, 8))
            L = float(rng.uniform(1.0, 3.0))
            X = rng.uniform(0.8, 1.3, size=(rng.integers(1, 7), dim))
            rcfg = toy_rcfg(alpha=0.8, gamma=float(rng.uniform(0.05, 0.5)))
            res = solve_saddle(X, 0.5, rcfg, L, 0.0, SolverParams(max_iters=50))
            assert np.all(res.b >= 0.0)
            assert res.b.sum() == pytest.approx(L, abs=1e-9)
            assert -rcfg.M <= res.c <= rcfg.M
            assert 0.0 <= res.lam <= rcfg.lam_max


class TestExpertPredict:
    MCFG = MarketConfig(n=1, B=0.4, r=0.01)
    RCFG = RiskConfig.from_market(MCFG, alpha=0.9, gamma=0.5)

    def test_cold_start_day_one(self):
        sched = NeighborSchedule.default(3)
        res = expert_predict(1, 1, np.empty((0, 1)), self.MCFG, self.RCFG, sched)
        assert res.iters == 0
        assert res.b[0] == pytest.approx(self.MCFG.L)
        assert res.c == pytest.approx(-np.log1p(self.MCFG.r))
        assert res.lam == 0.0

    def test_default_until_window_fills(self):
        sched = NeighborSchedule((0.9,))
        hist = np.ones((3, 1))
        res = expert_predict(4, 1, hist, self.MCFG, self.RCFG, sched)
        assert res.iters == 0  # t=4 <= k -> no candidate windows

    def test_matches_direct_solve_on_matched_samples(self):
        rng = np.random.default_rng(7)
        hist = rng.uniform(0.9, 1.1, size=(40, 1))
        sched = NeighborSchedule((0.3,))
        k, h = 2, 1
        res = expert_predict(k, h, hist, self.MCFG, self.RCFG, sched,
                             params=SolverParams(tol=1e-10))
        t = hist.shape[0] + 1
        idx = matched_set(hist, k, sched.h_hat(h, t))
        direct = solve_saddle(transform_all(hist[idx], self.MCFG.r),
                              regularizer_weight(t, k, h), self.RCFG,
                              self.MCFG.L, self.MCFG.r, SolverParams(tol=1e-10))
        np.testing.assert_allclose(res.b, direct.b, atol=1e-7)
        assert res.c == pytest.approx(direct.c, abs=1e-7)

    def test_iid_market_approaches_population_solution(self):
        rng = np.random.default_rng(8)
        # two-point i.i.d. market; the matched sample converges to the
        # population distribution, so the expert approaches the exact solve
        vals = np.array([0.95, 1.06])
        draw = rng.choice(2, size=4000, p=[0.5, 0.5])
        hist = vals[draw][:, None]
        sched = NeighborSchedule((0.5,))
        k, h = 1, 1
        t = hist.shape[0] + 1
        res = expert_predict(k, h, hist, self.MCFG, self.RCFG, sched,
                             params=SolverParams(tol=1e-8))
        pop = solve_saddle(transform_all(vals[:, None], self.MCFG.r),
                           regularizer_weight(t, k, h), self.RCFG,
                           self.MCFG.L, self.MCFG.r, SolverParams(tol=1e-8),
                           weights=np.array([0.5, 0.5]))
        np.testing.assert_allclose(res.b, pop.b, atol=0.05)
        assert res.value == pytest.approx(pop.value, abs=5e-3)


class TestExpertPool:
    def test_pool_matches_standalone_predictions(self):
        rng = np.random.default_rng(9)
        mcfg = MarketConfig(n=2, B=0.4, r=0.01)
        rcfg = RiskConfig.from_market(mcfg, alpha=0.9, gamma=0.4)
        sched = NeighborSchedule.default(2)
        params = SolverParams(tol=1e-9)
        pool = ExpertPool(mcfg, rcfg, k_values=(1, 2), h_values=(1, 2),
                          schedule=sched, params=params)
        hist = rng.uniform(0.9, 1.1, size=(60, 2))
        for t in range(60):
            pool.observe(hist[t])
        got = pool.predict_all()
        for res, (k, h) in zip(got, pool.experts):
            ref = expert_predict(k, h, hist, mcfg, rcfg, sched, params)
            np.testing.assert_allclose(res.b, ref.b, atol=1e-5)
            assert res.c == pytest.approx(ref.c, abs=1e-5)
            assert res.lam == pytest.approx(ref.lam, abs=1e-4)

    def test_pool_matched_equals_pure_function(self):
        rng = np.random.default_rng(10)
        mcfg = MarketConfig(n=2, B=0.4, r=0.01)
        rcfg = RiskConfig.from_market(mcfg, alpha=0.9, gamma=0.4)
        pool = ExpertPool(mcfg, rcfg, k_values=(1, 3), h_values=(1, 2),
                          schedule=NeighborSchedule.default(2))
        hist = rng.uniform(0.8, 1.2, size=(45, 2))
        for t in range(45):
            pool.observe(hist[t])
        tt = 46
        for k in (1, 3):
            dist = pool._distances(k)
            for h in (1, 2):
                h_hat = pool.schedule.h_hat(h, tt)
                from cann.experts import _select_nearest
                mine = (_select_nearest(dist, h_hat) + k if h_hat >= 1
                        else np.empty(0, dtype=np.intp))
                ref = matched_set(hist, k, h_hat)
                np.testing.assert_array_equal(mine, ref)

    def test_threaded_predictions_identical(self):
        rng = np.random.default_rng(11)
        mcfg = MarketConfig(n=1, B=0.4, r=0.01)
        rcfg = RiskConfig.from_market(mcfg, alpha=0.9, gamma=0.3)
        mk = rng.uniform(0.9, 1.1, size=(50, 1))
        pools = [ExpertPool(mcfg, rcfg, k_values=(1, 2), h_values=(1, 2),
                            workers=w) for w in (1, 3)]
        outs = []
        for pool in pools:
            for t in range(50):
                pool.observe(mk[t])
            outs.append(pool.predict_all())
        for a, b in zip(*outs):
            np.testing.assert_array_equal(a.b, b.b)
            assert a.c == b.c and a.lam == b.lam

    def test_grid_validation(self):
        mcfg = MarketConfig(n=1)
        rcfg = RiskConfig.from_market(mcfg, 0.95, 0.05)
        with pytest.raises(ValueError):
            ExpertPool(mcfg, rcfg, k_values=(0,))
        with pytest.raises(ValueError):
            ExpertPool(mcfg, rcfg, h_values=(0,))


def test_default_triple_shape():
    mcfg = MarketConfig(n=3)
    rcfg = RiskConfig.from_market(mcfg, 0.95, 0.05)
    res = default_triple(mcfg, rcfg)
    assert res.b.shape == (7,)
    assert res.b.sum() == pytest.approx(mcfg.L)
    assert res.converged


def test_regularizer_weight():
    assert regularizer_weight(10, 2, 5) == pytest.approx(0.1 + 0.5 + 0.2)
    assert regularizer_weight(10, 2, 5, scale=0.5) == pytest.approx(0.4)
