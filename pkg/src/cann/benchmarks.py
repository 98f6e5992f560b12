"""Reference strategies for wealth comparisons.

All benchmarks consume raw market vectors (relative prices). BCRP, UP, EG
and ONS are long-only and unleveraged; the nearest-neighbor wealth strategy
comes in a long-only variant and a short/leverage variant that trades the
transformed instruments with the same matched sets as the risk-constrained
experts.
"""

import numpy as np

from .experts import NeighborSchedule, matched_set
from .market import MarketConfig, transform_all
from .objective import project_simplex


def _log_wealth_grad(X: np.ndarray, b: np.ndarray, off: float):
    d = X @ b - off
    return d, X.T @ (1.0 / d)


def log_optimal(X: np.ndarray, mass: float = 1.0, off: float = 0.0,
                warm: np.ndarray | None = None, tol: float = 1e-8,
                max_iters: int = 4000) -> np.ndarray:
    """argmax of sum(log(<b,x> - off)) over the mass-scaled simplex.

    Projected gradient ascent with Armijo backtracking; the objective is
    smooth and concave on the feasible set, which stays inside the positive
    return region whenever off is below mass * min(X).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    dim = X.shape[1]
    b = project_simplex(np.asarray(warm, dtype=float), mass) if warm is not None \
        else np.full(dim, mass / dim)
    d, g = _log_wealth_grad(X, b, off)
    val = float(np.sum(np.log(d)))
    eta = 1.0
    for it in range(1, max_iters + 1):
        if np.max(np.abs(b - project_simplex(b + g, mass))) <= tol:
            break
        step = min(4.0 * eta, 1e6)
        accepted = False
        for _ in range(60):
            b_try = project_simplex(b + step * g, mass)
            move = b_try - b
            sq = float(move @ move)
            if sq == 0.0:
                break
            d_try = X @ b_try - off
            if np.all(d_try > 0.0):
                v_try = float(np.sum(np.log(d_try)))
                if v_try >= val + 1e-4 * sq / step:
                    b, val, eta = b_try, v_try, step
                    d, g = _log_wealth_grad(X, b, off)
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
    return b


def bcrp(markets: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Best constant rebalanced portfolio in hindsight (long-only simplex)."""
    markets = np.atleast_2d(np.asarray(markets, dtype=float))
    return log_optimal(markets, mass=1.0, off=0.0, tol=tol)


def crp_wealth(markets: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cumulative wealth path of a fixed rebalanced portfolio."""
    markets = np.atleast_2d(np.asarray(markets, dtype=float))
    return np.cumprod(markets @ np.asarray(b))


def eg_step(b: np.ndarray, x: np.ndarray, eta: float) -> np.ndarray:
    """Multiplicative-update step b_i <- b_i * exp(eta * x_i / <b,x>)."""
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    w = b * np.exp(eta * x / float(b @ x))
    return w / w.sum()


def eg_run(markets: np.ndarray, eta: float = 0.05) -> np.ndarray:
    """Exponentiated-gradient wealth path from the uniform portfolio."""
    markets = np.atleast_2d(np.asarray(markets, dtype=float))
    T, n = markets.shape
    b = np.full(n, 1.0 / n)
    rets = np.empty(T)
    for t in range(T):
        rets[t] = float(markets[t] @ b)
        b = eg_step(b, markets[t], eta)
    return np.cumprod(rets)


class OnsState:
    """Online Newton step with the standard toolkit defaults."""

    def __init__(self, n: int, delta: float = 0.125, beta: float = 1.0,
                 eta: float = 0.0):
        self.delta = delta
        self.beta = beta
        self.eta = eta
        self.A = np.eye(n)
        self.bvec = np.zeros(n)
        self.b = np.full(n, 1.0 / n)
        self._proj_warm = self.b.copy()

    def update(self, x: np.ndarray) -> np.ndarray:
        """Absorb one revealed market vector; returns the next portfolio."""
        x = np.asarray(x, dtype=float)
        grad = x / float(self.b @ x)
        self.A += np.outer(grad, grad)
        self.bvec += (1.0 + 1.0 / self.beta) * grad
        target = self.delta * np.linalg.solve(self.A, self.bvec)
        proj = projection_in_norm(target, self.A, warm=self._proj_warm)
        self._proj_warm = proj
        n = x.size
        self.b = (1.0 - self.eta) * proj + self.eta * np.full(n, 1.0 / n)
        return self.b


def projection_in_norm(y: np.ndarray, A: np.ndarray,
                       warm: np.ndarray | None = None,
                       tol: float = 1e-10, max_iters: int = 2000) -> np.ndarray:
    """argmin over the simplex of (b - y)^T A (b - y), by accelerated projection."""
    n = y.size
    b = warm.copy() if warm is not None else np.full(n, 1.0 / n)
    z = b.copy()
    lip = 2.0 * float(np.linalg.eigvalsh(A)[-1])
    tk = 1.0
    for _ in range(max_iters):
        grad = 2.0 * (A @ (z - y))
        b_new = project_simplex(z - grad / lip, 1.0)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        z = b_new + ((tk - 1.0) / t_new) * (b_new - b)
        if np.max(np.abs(b_new - b)) <= tol:
            return b_new
        b, tk = b_new, t_new
    return b


def ons_run(markets: np.ndarray, delta: float = 0.125, beta: float = 1.0,
            eta: float = 0.0) -> np.ndarray:
    markets = np.atleast_2d(np.asarray(markets, dtype=float))
    T, n = markets.shape
    state = OnsState(n, delta=delta, beta=beta, eta=eta)
    rets = np.empty(T)
    for t in range(T):
        rets[t] = float(markets[t] @ state.b)
        state.update(markets[t])
    return np.cumprod(rets)


def up_approx(markets: np.ndarray, samples: int = 10_000, seed: int = 0) -> np.ndarray:
    """Universal-portfolio wealth path by Monte Carlo over uniform CRPs."""
    if samples < 1:
        raise ValueError("need at least one sample portfolio")
    markets = np.atleast_2d(np.asarray(markets, dtype=float))
    T, n = markets.shape
    rng = np.random.default_rng(seed)
    B = rng.dirichlet(np.ones(n), size=samples)  # (samples, n)
    wealth = np.ones(samples)
    out = np.empty(T)
    for t in range(T):
        wealth *= B @ markets[t]
        out[t] = wealth.mean()
    return out


def _nn_wealth_run(markets: np.ndarray, mass: float, off: float,
                   payoffs: np.ndarray, k_values, h_values,
                   schedule: NeighborSchedule, return_portfolios: bool):
    """Wealth-weighted nearest-neighbor expert strategy over given payoffs.

    payoffs[t] is the instrument payoff row for day t (raw market vectors in
    the long-only variant, transformed vectors in the leveraged one). Each
    expert holds the log-optimal portfolio over its matched set and is
    weighted by its own cumulative wealth.
    """
    markets = np.atleast_2d(np.asarray(markets, dtype=float))
    T = markets.shape[0]
    dim = payoffs.shape[1]
    experts = [(k, h) for k in k_values for h in h_values]
    E = len(experts)
    uniform = np.full(dim, mass / dim)
    b_e = np.tile(uniform, (E, 1))
    wealth_e = np.ones(E)
    warm: list[np.ndarray | None] = [None] * E
    out = np.empty(T)
    ports = np.empty((T, dim)) if return_portfolios else None
    total = 1.0
    for t in range(T):
        played = (wealth_e @ b_e) / wealth_e.sum()
        if ports is not None:
            ports[t] = played
        ret = float(payoffs[t] @ played - off)
        total *= ret
        out[t] = total
        wealth_e *= payoffs[t] @ b_e.T - off
        history = markets[: t + 1]
        tt = t + 2  # day index being predicted next
        for e, (k, h) in enumerate(experts):
            idx = matched_set(history, k, schedule.h_hat(h, tt))
            if idx.size == 0:
                b_e[e] = uniform
                continue
            b_e[e] = log_optimal(payoffs[idx], mass=mass, off=off, warm=warm[e])
            warm[e] = b_e[e]
    return (out, ports) if return_portfolios else out


def bnn_run(markets: np.ndarray, k_values=(1, 2, 3, 4, 5),
            h_values=(1, 2, 3, 4, 5, 6, 7, 8, 9, 10),
            schedule: NeighborSchedule | None = None,
            return_portfolios: bool = False):
    """Long-only nearest-neighbor wealth strategy."""
    markets = np.atleast_2d(np.asarray(markets, dtype=float))
    schedule = schedule or NeighborSchedule.default(max(h_values))
    return _nn_wealth_run(markets, 1.0, 0.0, markets, k_values, h_values,
                          schedule, return_portfolios)


def bnn_leveraged_run(markets: np.ndarray, mcfg: MarketConfig,
                      k_values=(1, 2, 3, 4, 5),
                      h_values=(1, 2, 3, 4, 5, 6, 7, 8, 9, 10),
                      schedule: NeighborSchedule | None = None,
                      return_portfolios: bool = False):
    """Short-and-leveraged nearest-neighbor wealth strategy."""
    markets = np.atleast_2d(np.asarray(markets, dtype=float))
    schedule = schedule or NeighborSchedule.default(max(h_values))
    off = (mcfg.L - 1.0) * (1.0 + mcfg.r)
    payoffs = transform_all(markets, mcfg.r)
    return _nn_wealth_run(markets, mcfg.L, off, payoffs, k_values, h_values,
                          schedule, return_portfolios)
