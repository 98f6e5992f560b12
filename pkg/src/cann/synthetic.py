"""Stationary-ergodic synthetic markets with computable optima.

A hidden Markov chain over S states emits per-asset discrete relative
prices. Because distinct states use distinct supports, the conditional
distribution of the next market vector given the whole past equals the
mixture of next-state emissions determined by the previous hidden state, so
an oracle that sees states can evaluate exactly the conditional quantities
the learner is trying to track: the per-state constrained optimum and the
conditional CVaR of any played portfolio.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np

from .cvar import cvar_discrete
from .market import MarketConfig, transform_all
from .objective import RiskConfig, project_simplex


@dataclass(frozen=True)
class AssetDist:
    """Discrete one-asset relative-price distribution."""

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if v.size == 0 or v.shape != p.shape:
            raise ValueError("values and probs must be matching nonempty tuples")
        if np.any(p < 0.0) or not np.isclose(p.sum(), 1.0):
            raise ValueError("probs must be nonnegative and sum to 1")


@dataclass(frozen=True)
class MarkovMarketSpec:
    """Hidden-chain market: transition matrix plus per-state per-asset emissions."""

    transition: tuple[tuple[float, ...], ...]
    emissions: tuple[tuple[AssetDist, ...], ...]  # [state][asset]
    seed: int = 0
    jitter: float = 0.0

    def __post_init__(self):
        P = self.matrix
        S = P.shape[0]
        if P.ndim != 2 or P.shape != (S, S) or S < 1:
            raise ValueError("transition must be a square matrix")
        if np.any(P < 0.0) or not np.allclose(P.sum(axis=1), 1.0):
            raise ValueError("transition rows must be nonnegative and sum to 1")
        if len(self.emissions) != S:
            raise ValueError(f"need emissions for {S} states, got {len(self.emissions)}")
        n = len(self.emissions[0])
        if any(len(e) != n for e in self.emissions):
            raise ValueError("every state must emit the same number of assets")
        if not _is_primitive(P):
            raise ValueError("transition chain must be irreducible and aperiodic")
        if self.jitter < 0.0:
            raise ValueError("jitter width must be nonnegative")

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.transition, dtype=float)

    @property
    def n_states(self) -> int:
        return len(self.emissions)

    @property
    def n_assets(self) -> int:
        return len(self.emissions[0])

    def validate_bounds(self, B: float) -> None:
        half = self.jitter / 2.0
        for s, state in enumerate(self.emissions):
            for a, dist in enumerate(state):
                v = np.asarray(dist.values)
                if np.any(v - half < 1.0 - B) or np.any(v + half > 1.0 + B):
                    raise ValueError(
                        f"state {s} asset {a}: support (with jitter) leaves "
                        f"[{1.0 - B}, {1.0 + B}]"
                    )


def _is_primitive(P: np.ndarray) -> bool:
    """Irreducible + aperiodic via the Wielandt power bound on the support."""
    S = P.shape[0]
    A = P > 0.0
    power = np.eye(S, dtype=bool)
    target = (S - 1) ** 2 + 1
    for _ in range(target):
        power = power @ A
    return bool(power.all())


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Left eigenvector of the transition matrix for eigenvalue 1."""
    vals, vecs = np.linalg.eig(P.T)
    i = int(np.argmin(np.abs(vals - 1.0)))
    pi = np.real(vecs[:, i])
    pi = np.abs(pi)
    return pi / pi.sum()


def gen_iid(assets: tuple[AssetDist, ...], T: int, seed: int,
            jitter: float = 0.0) -> np.ndarray:
    """T i.i.d. market vectors with independent per-asset discrete draws."""
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(seed)
    out = np.empty((T, len(assets)))
    for a, dist in enumerate(assets):
        vals = np.asarray(dist.values)
        idx = rng.choice(vals.size, size=T, p=np.asarray(dist.probs))
        out[:, a] = vals[idx]
    if jitter > 0.0:
        out += rng.uniform(-jitter / 2.0, jitter / 2.0, size=out.shape)
    return out


def gen_markov(spec: MarkovMarketSpec, T: int,
               seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample (markets, hidden states); the chain starts at stationarity."""
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    P = spec.matrix
    S = spec.n_states
    pi = stationary_distribution(P)
    states = np.empty(T, dtype=np.intp)
    states[0] = rng.choice(S, p=pi)
    for t in range(1, T):
        states[t] = rng.choice(S, p=P[states[t - 1]])
    out = np.empty((T, spec.n_assets))
    for s in range(S):
        mask = states == s
        cnt = int(mask.sum())
        if cnt == 0:
            continue
        for a, dist in enumerate(spec.emissions[s]):
            vals = np.asarray(dist.values)
            idx = rng.choice(vals.size, size=cnt, p=np.asarray(dist.probs))
            out[mask, a] = vals[idx]
    if spec.jitter > 0.0:
        out += rng.uniform(-spec.jitter / 2.0, spec.jitter / 2.0, size=out.shape)
    return out, states


def _state_support(spec: MarkovMarketSpec, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Joint support of the state's emission as (values (V, n), probs (V,))."""
    dists = spec.emissions[s]
    grids = [np.asarray(d.values) for d in dists]
    probs = [np.asarray(d.probs) for d in dists]
    size = int(np.prod([g.size for g in grids]))
    if size > 100_000:
        raise ValueError(f"state {s}: joint emission support too large ({size})")
    vals = np.array(list(product(*grids)))
    ps = np.array([np.prod(c) for c in product(*probs)])
    return vals, ps


def conditional_mixture(spec: MarkovMarketSpec, prev_state: int
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Distribution of the next market vector given the previous hidden state.

    States are identifiable from emissions, so this is exactly the law of
    the next day given the infinite past ending in prev_state.
    """
    P = spec.matrix
    vals = []
    ps = []
    for s in range(spec.n_states):
        w = P[prev_state, s]
        if w == 0.0:
            continue
        v, p = _state_support(spec, s)
        vals.append(v)
        ps.append(w * p)
    return np.vstack(vals), np.concatenate(ps)


def conditional_cvar(spec: MarkovMarketSpec, prev_state: int, b: np.ndarray,
                     mcfg: MarketConfig, alpha: float) -> float:
    """Exact conditional CVaR of the portfolio's log-loss given prev_state."""
    vals, ps = conditional_mixture(spec, prev_state)
    xp = transform_all(vals, mcfg.r)
    w = -np.log(xp @ np.asarray(b) - (mcfg.L - 1.0) * (1.0 + mcfg.r))
    return cvar_discrete(w, ps, alpha)


class ConditionalCvarOracle:
    """Precomputed per-state transformed supports for fast repeated queries."""

    def __init__(self, spec: MarkovMarketSpec, mcfg: MarketConfig, alpha: float):
        self.alpha = alpha
        self.off = (mcfg.L - 1.0) * (1.0 + mcfg.r)
        self._xp = []
        self._ps = []
        for s in range(spec.n_states):
            vals, ps = conditional_mixture(spec, s)
            self._xp.append(transform_all(vals, mcfg.r))
            self._ps.append(ps)

    def cvar(self, prev_state: int, b: np.ndarray) -> float:
        w = -np.log(self._xp[prev_state] @ b - self.off)
        return cvar_discrete(w, self._ps[prev_state], self.alpha)

    def mean_loss(self, prev_state: int, b: np.ndarray) -> float:
        w = -np.log(self._xp[prev_state] @ b - self.off)
        return float(self._ps[prev_state] @ w)


@dataclass(frozen=True)
class StateOptimum:
    value: float
    b: np.ndarray
    c: float
    lam: float
    cvar: float


@dataclass(frozen=True)
class TrueOptimum:
    """Stationary-weighted constrained optimum and its per-state pieces."""

    value: float
    per_state: tuple[StateOptimum, ...]
    stationary: np.ndarray


def _tail_weights(w: np.ndarray, p: np.ndarray, alpha: float) -> np.ndarray:
    """RU tail weights tau in [0,1]: full on strict tail, fractional at the cut."""
    m = 1.0 - alpha
    order = np.argsort(w)[::-1]
    cum = np.cumsum(p[order])
    k = int(np.searchsorted(cum, m, side="left"))
    k = min(k, w.size - 1)
    tau_sorted = np.zeros(w.size)
    tau_sorted[:k] = 1.0
    prev = cum[k - 1] if k > 0 else 0.0
    if p[order][k] > 0.0:
        tau_sorted[k] = (m - prev) / p[order][k]
    tau = np.empty(w.size)
    tau[order] = tau_sorted
    return tau


def _min_penalized(xp: np.ndarray, ps: np.ndarray, lam: float, off: float,
                   alpha: float, gamma: float, L: float,
                   b0: np.ndarray, tol: float = 1e-10,
                   max_iters: int = 2000) -> tuple[float, np.ndarray, float]:
    """Minimize E[omega] + lam*(CVaR_alpha(omega) - gamma) over the mass-L simplex.

    The threshold is eliminated exactly through the tail average, leaving a
    convex problem in b solved by projected gradient with Armijo search.
    Returns (value, b, cvar at b).
    """
    b = b0.copy()

    def evaluate(bb):
        d = xp @ bb - off
        w = -np.log(d)
        cv = cvar_discrete(w, ps, alpha) if lam > 0.0 else 0.0
        return float(ps @ w) + lam * (cv - gamma), d, w, cv

    val, d, w, cv = evaluate(b)
    eta = 1.0
    for it in range(1, max_iters + 1):
        coef = ps / d
        if lam > 0.0:
            tau = _tail_weights(w, ps, alpha)
            coef = coef * (1.0 + lam * tau / (1.0 - alpha))
        grad = -(xp.T @ coef)
        if np.max(np.abs(b - project_simplex(b - grad, L))) <= tol:
            break
        step = min(4.0 * eta, 1e3)
        accepted = False
        for _ in range(40):
            b_try = project_simplex(b - step * grad, L)
            move = b_try - b
            sq = float(move @ move)
            if sq == 0.0:
                break
            v_try, d_t, w_t, cv_t = evaluate(b_try)
            if v_try <= val - 1e-4 * sq / step:
                b, val, d, w, cv, eta = b_try, v_try, d_t, w_t, cv_t, step
                accepted = True
                break
            step *= 0.5
        if not accepted:
            b_try = project_simplex(b - grad / it, L)
            v_try, d_t, w_t, cv_t = evaluate(b_try)
            if v_try < val:
                b, val, d, w, cv = b_try, v_try, d_t, w_t, cv_t
            else:
                break
    if lam == 0.0:
        cv = cvar_discrete(w, ps, alpha)
    return val, b, cv


def _state_optimum(vals: np.ndarray, ps: np.ndarray, mcfg: MarketConfig,
                   rcfg: RiskConfig) -> StateOptimum:
    """Constrained optimum for one conditional distribution via the dual."""
    xp = transform_all(vals, mcfg.r)
    off = (mcfg.L - 1.0) * (1.0 + mcfg.r)
    L = mcfg.L
    alpha, gamma = rcfg.alpha, rcfg.gamma
    dim = xp.shape[1]
    b0 = np.full(dim, L / dim)

    # Unconstrained growth optimum; done if it already meets the budget.
    v0, b_star, cv0 = _min_penalized(xp, ps, 0.0, off, alpha, gamma, L, b0)
    if cv0 <= gamma:
        w = -np.log(xp @ b_star - off)
        return StateOptimum(value=v0, b=b_star, c=_threshold(w, ps, alpha),
                            lam=0.0, cvar=cv0)

    # Feasibility: the minimum attainable CVaR must not exceed the budget.
    big = 1e6
    _, b_safe, cv_min = _min_penalized(xp, ps, big, off, alpha, gamma, L, b0)
    if cv_min > gamma:
        raise ValueError(
            f"risk budget gamma={gamma} infeasible: minimum attainable "
            f"conditional CVaR is {cv_min:.6g}"
        )

    # Concave dual over lam, maximized by golden section; warm-started inner solves.
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    lo, hi = 0.0, rcfg.lam_max
    warm = b_star

    def dual(lam):
        nonlocal warm
        v, b, cv = _min_penalized(xp, ps, lam, off, alpha, gamma, L, warm)
        warm = b
        return v, b, cv

    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, b1, c1v = dual(x1)
    f2, b2, c2v = dual(x2)
    for _ in range(60):
        if f1 >= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1, b1, c1v = dual(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2, b2, c2v = dual(x2)
        if hi - lo < 1e-9 * max(1.0, rcfg.lam_max):
            break
    if f1 >= f2:
        lam_star, value, b_opt = x1, f1, b1
    else:
        lam_star, value, b_opt = x2, f2, b2
    w = -np.log(xp @ b_opt - off)
    return StateOptimum(value=value, b=b_opt, c=_threshold(w, ps, alpha),
                        lam=lam_star, cvar=cvar_discrete(w, ps, alpha))


def _threshold(w: np.ndarray, p: np.ndarray, alpha: float) -> float:
    order = np.argsort(w)[::-1]
    cum = np.cumsum(p[order])
    k = int(np.searchsorted(cum, 1.0 - alpha, side="left"))
    return float(w[order][min(k, w.size - 1)])


def true_optimum(spec: MarkovMarketSpec, mcfg: MarketConfig,
                 rcfg: RiskConfig) -> TrueOptimum:
    """Exact gamma-constrained optimum of the market, state by state.

    For each conditioning (previous) state the conditional distribution is a
    finite mixture, so the constrained program is solved on it directly; the
    headline value is the stationary-weighted average of per-state optima.
    """
    spec.validate_bounds(mcfg.B)
    pi = stationary_distribution(spec.matrix)
    per_state = []
    for s in range(spec.n_states):
        vals, ps = conditional_mixture(spec, s)
        per_state.append(_state_optimum(vals, ps, mcfg, rcfg))
    value = float(sum(pi[s] * per_state[s].value for s in range(spec.n_states)))
    return TrueOptimum(value=value, per_state=tuple(per_state), stationary=pi)
