"""Nearest-neighbor saddle-point experts.

An expert is indexed by a window length k and a neighbor-fraction index h.
Each day it collects the successors of the h-hat past windows closest to the
current window (the matched set), and outputs the unique saddle point of the
mean regularized per-day Lagrangian over that sample: minimizing in the
portfolio and threshold, maximizing in the multiplier.

The solver exploits structure rather than running a generic descent-ascent
loop: the multiplier maximization is a concave quadratic with a closed form,
and the threshold minimization is an exact scan over the piecewise-quadratic
pieces between sample losses. Only the portfolio block needs iterative
projected-gradient steps (Armijo line search along the projection arc, with
a diminishing-step fallback at kinks). Warm starts make the daily resolve
cheap once the matched set stabilizes.
"""

from dataclasses import dataclass

import numpy as np

from .market import MarketConfig, transform_all
from .objective import RiskConfig, project_simplex


@dataclass(frozen=True)
class SolverParams:
    tol: float = 1e-6
    max_iters: int = 5000


@dataclass(frozen=True)
class SaddleResult:
    b: np.ndarray
    c: float
    lam: float
    value: float
    iters: int
    residual: float
    converged: bool

    @property
    def triple(self) -> tuple[np.ndarray, float, float]:
        return self.b, self.c, self.lam


@dataclass(frozen=True)
class NeighborSchedule:
    """Per-h neighbor fractions; h-hat on day t is floor(t * fraction[h])."""

    fractions: tuple[float, ...]

    def __post_init__(self):
        for i, p in enumerate(self.fractions):
            if not (0.0 < p < 1.0):
                raise ValueError(f"neighbor fraction for h={i + 1} must lie in (0,1), got {p}")

    @classmethod
    def default(cls, n_h: int) -> "NeighborSchedule":
        return cls(tuple(1.0 / 20.0 + (h - 1) / 18.0 for h in range(1, n_h + 1)))

    def fraction(self, h: int) -> float:
        return self.fractions[h - 1]

    def h_hat(self, h: int, t: int) -> int:
        return int(t * self.fraction(h))


def _as_history(history) -> np.ndarray:
    arr = np.asarray(history, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, arr.shape[1] if arr.ndim == 2 else 1)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def matched_set(history, k: int, h_hat: int) -> np.ndarray:
    """Successor indices of the h_hat past k-windows nearest the current one.

    history is the (m, n) stack of observed market vectors (a 1-D array is
    treated as a single asset). A candidate is any fully observed pair of a
    window history[i-k:i] and its successor history[i], for i in [k, m-1].
    Distances are Euclidean on flattened windows against the query
    history[m-k:m]; ties at the cutoff break toward the lower index. Returns
    0-based successor indices, ascending; empty when no candidate window
    exists or h_hat < 1.
    """
    history = _as_history(history)
    m = history.shape[0]
    if m < k + 1 or h_hat < 1:
        return np.empty(0, dtype=np.intp)
    wins = np.lib.stride_tricks.sliding_window_view(history, (k, history.shape[1]))
    wins = wins.reshape(m - k + 1, -1)[: m - k]  # windows ending before the query
    query = history[m - k:].ravel()
    dist = ((wins - query) ** 2).sum(axis=1)
    return _select_nearest(dist, h_hat) + k


def _select_nearest(dist: np.ndarray, h_hat: int) -> np.ndarray:
    """Indices of the h_hat smallest distances, ties broken by lower index."""
    h_eff = min(h_hat, dist.size)
    if h_eff == dist.size:
        return np.arange(dist.size, dtype=np.intp)
    cutoff = np.partition(dist, h_eff - 1)[h_eff - 1]
    strict = np.flatnonzero(dist < cutoff)
    ties = np.flatnonzero(dist == cutoff)[: h_eff - strict.size]
    return np.sort(np.concatenate([strict, ties]))


def _psi(z, reg: float, lam_max: float):
    """max over lam in [0, lam_max] of lam*z - reg*lam^2 (C1, convex in z)."""
    z0 = 2.0 * reg * lam_max
    if np.isscalar(z) or np.ndim(z) == 0:
        z = float(z)
        if z <= 0.0:
            return 0.0
        if z < z0:
            return z * z / (4.0 * reg)
        return lam_max * z - reg * lam_max * lam_max
    return np.where(
        z <= 0.0, 0.0,
        np.where(z < z0, z * z / (4.0 * reg), lam_max * z - reg * lam_max * lam_max),
    )


def _lam_star(gbar: float, reg: float, lam_max: float) -> float:
    return float(np.clip(gbar / (2.0 * reg), 0.0, lam_max))


def _best_c(w: np.ndarray, p: np.ndarray, reg: float, q: float, gamma: float,
            M: float, lam_max: float) -> float:
    """Exact minimizer over c in [-M, M] of reg*c^2 + psi(gbar(c)).

    gbar(c) = c + q * sum_i p_i (w_i - c)^+ - gamma is piecewise affine with
    breakpoints at the sample losses, and psi is C1 piecewise quadratic, so
    on each piece the objective has closed-form stationary candidates; the
    scan over pieces is vectorized and exact.
    """
    order = np.argsort(w, kind="stable")
    ws = w[order]
    ps = p[order]
    n = ws.size
    # On the piece below ws[j] the hinge-active set is {i >= j}.
    S = np.empty(n + 1)
    S[-1] = 0.0
    np.cumsum(ps[::-1], out=S[:-1][::-1])
    TS = np.empty(n + 1)
    TS[-1] = 0.0
    np.cumsum((ps * ws)[::-1], out=TS[:-1][::-1])
    slope = 1.0 - q * S        # d gbar / dc per piece
    icept = q * TS - gamma     # gbar at c = 0 per piece
    lo = np.empty(n + 1)
    lo[0] = -M
    np.maximum(ws, -M, out=lo[1:])
    hi = np.empty(n + 1)
    hi[-1] = M
    np.minimum(ws, M, out=hi[:-1])

    cands = np.empty((5, n + 1))
    np.minimum(np.maximum(0.0, lo), hi, out=cands[0])               # psi == 0
    c_quad = -slope * icept / (4.0 * reg * reg + slope * slope)     # psi quadratic
    np.minimum(np.maximum(c_quad, lo), hi, out=cands[1])
    c_edge = (-lam_max / (2.0 * reg)) * slope                       # psi affine
    np.minimum(np.maximum(c_edge, lo), hi, out=cands[2])
    cands[3] = lo
    cands[4] = hi
    gb = icept + slope * cands
    vals = reg * cands * cands + _psi(gb, reg, lam_max)
    vals[:, lo > hi] = np.inf
    j = np.unravel_index(np.argmin(vals), vals.shape)
    return float(cands[j])


class _Objective:
    """Mean regularized Lagrangian over a fixed weighted sample, reduced over lam."""

    def __init__(self, X: np.ndarray, weights: np.ndarray | None, reg: float,
                 rcfg: RiskConfig, L: float, r: float):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        n = self.X.shape[0]
        if n == 0:
            raise ValueError("empty sample set")
        self.p = (np.full(n, 1.0 / n) if weights is None
                  else np.asarray(weights, dtype=float))
        if self.p.shape != (n,) or np.any(self.p < 0.0):
            raise ValueError("weights must be a nonnegative vector matching the samples")
        self.reg = reg
        self.rcfg = rcfg
        self.off = (L - 1.0) * (1.0 + r)
        self.mass = L

    def returns_losses(self, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = self.X @ b - self.off
        if np.any(d <= 0.0):
            i = int(np.argmin(d))
            raise ValueError(f"non-positive return {d[i]:.6g} at matched sample {i}")
        return d, -np.log(d)

    def losses(self, b: np.ndarray) -> np.ndarray:
        return self.returns_losses(b)[1]

    def gbar(self, w: np.ndarray, c: float) -> float:
        cfg = self.rcfg
        return c + cfg.q * float(self.p @ np.maximum(w - c, 0.0)) - cfg.gamma

    def value(self, b: np.ndarray, c: float, w: np.ndarray | None = None) -> float:
        """Primal value max_lam F(b, c, lam); lam solved in closed form."""
        if w is None:
            w = self.losses(b)
        val = float(self.p @ w) + self.reg * (float(b @ b) + c * c)
        return val + float(_psi(self.gbar(w, c), self.reg, self.rcfg.lam_max))

    def gradients(self, b, c, d, w, lam, kink_ge: bool = False):
        """Subgradients of F at (b, c); the hinge side at kinks is selectable."""
        cfg = self.rcfg
        active = (w >= c) if kink_ge else (w > c)
        coef = self.p * np.where(active, 1.0 + lam * cfg.q, 1.0) / d
        gb = -(self.X.T @ coef) + 2.0 * self.reg * b
        gc = lam * (1.0 - cfg.q * float(self.p @ active)) + 2.0 * self.reg * c
        return gb, gc

    def best_c(self, w: np.ndarray) -> float:
        cfg = self.rcfg
        return _best_c(w, self.p, self.reg, cfg.q, cfg.gamma, cfg.M, cfg.lam_max)

    def residual(self, b, c, d, w, lam, tol: float) -> float:
        """Unit-step projected-subgradient residual, minimized over kink sides."""
        M = self.rcfg.M
        res = np.inf
        for kink_ge in (False, True):
            gb, gc = self.gradients(b, c, d, w, lam, kink_ge)
            rb = float(np.max(np.abs(b - project_simplex(b - gb, self.mass))))
            rc = abs(c - float(np.clip(c - gc, -M, M)))
            res = min(res, max(rb, rc))
            if res <= tol:
                break
        return res


def solve_saddle(samples: np.ndarray, reg: float, rcfg: RiskConfig, L: float, r: float,
                 params: SolverParams = SolverParams(),
                 weights: np.ndarray | None = None,
                 warm: tuple[np.ndarray, float] | None = None) -> SaddleResult:
    """Saddle point of the mean regularized Lagrangian over the sample set.

    Minimizes over (b, c) on the mass-L simplex times [-M, M], maximizes
    over lam in [0, lam_max]. reg > 0 makes the saddle unique and min-max
    equal max-min, so the returned triple solves both orders. Stops when the
    projected-subgradient residual falls below tol or the value stops
    improving at the bottom of the strongly convex bowl; if the iteration
    budget runs out first, the best iterate found is returned and flagged.
    """
    if reg <= 0.0:
        raise ValueError(f"regularization weight must be positive, got {reg}")
    obj = _Objective(samples, weights, reg, rcfg, L, r)
    dim = obj.X.shape[1]
    M = rcfg.M
    if warm is not None:
        b = project_simplex(np.asarray(warm[0], dtype=float), L)
        c = float(np.clip(warm[1], -M, M))
    else:
        b = np.full(dim, L / dim)
        c = 0.0

    eta = 1.0
    grow = 2.0
    sigma = 1e-4
    f_tol = max(reg * params.tol * params.tol, 1e-17)
    stall = 0
    still = 0
    best_val = np.inf
    best = (b, c)
    it = 0
    converged = False
    c_prev = c
    for it in range(1, params.max_iters + 1):
        d, w = obj.returns_losses(b)
        c = obj.best_c(w)
        gbar = obj.gbar(w, c)
        lam = _lam_star(gbar, reg, rcfg.lam_max)
        val = obj.value(b, c, w)
        if val < best_val - f_tol:
            best_val, best, stall = val, (b.copy(), c), 0
        else:
            if val < best_val:
                best_val, best = val, (b.copy(), c)
            stall += 1
        if stall >= 15:
            converged = True  # value flat to f_tol at the bottom of the bowl
            break

        gb, _ = obj.gradients(b, c, d, w, lam)
        step = min(grow * eta, 1e3)
        accepted = False
        moved = abs(c - c_prev)
        first_try = True
        for _ in range(30):
            b_try = project_simplex(b - step * gb, L)
            delta = b_try - b
            sq = float(delta @ delta)
            if sq == 0.0:
                break
            if obj.value(b_try, c) <= val - sigma * sq / step:
                moved = max(moved, float(np.max(np.abs(delta))))
                b, eta, accepted = b_try, step, True
                grow = 2.0 if first_try else 1.0
                break
            step *= 0.5
            first_try = False
        c_prev = c
        if not accepted:
            if moved <= params.tol:
                # no descent step and the iterate is pinned: converged up to
                # the kink-selection ambiguity; certify with the residual
                if obj.residual(b, c, d, w, lam, params.tol) <= 10.0 * params.tol:
                    converged = True
                    break
                # genuine kink away from the bottom: guaranteed diminishing step
                b = project_simplex(b - gb / (reg * it), L)
                stall = 0
            else:
                b = project_simplex(b - gb / (reg * it), L)
                stall = 0
        elif moved <= params.tol:
            still += 1
            if still >= 2:
                converged = True  # iterate stationary across consecutive passes
                break
        else:
            still = 0

    b, c = best
    d, w = obj.returns_losses(b)
    gbar = obj.gbar(w, c)
    lam = _lam_star(gbar, reg, rcfg.lam_max)
    residual = obj.residual(b, c, d, w, lam, params.tol)
    return SaddleResult(b=b, c=c, lam=lam, value=obj.value(b, c, w), iters=it,
                        residual=float(residual),
                        converged=converged or residual <= params.tol)


def default_triple(mcfg: MarketConfig, rcfg: RiskConfig) -> SaddleResult:
    """Cold-start prediction: everything in cash, threshold at the cash loss."""
    b = np.zeros(mcfg.dim)
    b[0] = mcfg.L
    c = float(np.clip(-np.log1p(mcfg.r), -rcfg.M, rcfg.M))
    return SaddleResult(b=b, c=c, lam=0.0, value=float("nan"), iters=0, residual=0.0,
                        converged=True)


def regularizer_weight(t: int, k: int, h: int, scale: float = 1.0) -> float:
    """Coupling weight (1/t + 1/h + 1/k) for the expert's day-t problem."""
    return scale * (1.0 / t + 1.0 / h + 1.0 / k)


def expert_predict(k: int, h: int, history, mcfg: MarketConfig,
                   rcfg: RiskConfig, schedule: NeighborSchedule,
                   params: SolverParams = SolverParams(),
                   reg_scale: float = 1.0,
                   warm: tuple[np.ndarray, float] | None = None) -> SaddleResult:
    """One expert's prediction for the next day given the observed history."""
    history = _as_history(history)
    t = history.shape[0] + 1
    idx = matched_set(history, k, schedule.h_hat(h, t))
    if idx.size == 0:
        return default_triple(mcfg, rcfg)
    xp = transform_all(history[idx], mcfg.r)
    reg = regularizer_weight(t, k, h, reg_scale)
    return solve_saddle(xp, reg, rcfg, mcfg.L, mcfg.r, params, warm=warm)


class ExpertPool:
    """The (k, h) expert grid with incremental nearest-neighbor bookkeeping.

    Windows are stored flattened, one growing matrix per distinct k, so each
    day costs one distance pass per k (shared by every h with that k) plus a
    warm-started saddle resolve per expert. Predictions come back in fixed
    grid order (k-major), so reductions over experts are deterministic.
    """

    def __init__(self, mcfg: MarketConfig, rcfg: RiskConfig,
                 k_values: tuple[int, ...] = (1, 2, 3, 4, 5),
                 h_values: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10),
                 schedule: NeighborSchedule | None = None,
                 params: SolverParams = SolverParams(),
                 reg_scale: float = 1.0,
                 workers: int = 1):
        if any(k < 1 for k in k_values):
            raise ValueError("window lengths must be >= 1")
        if any(h < 1 for h in h_values):
            raise ValueError("neighbor indices must be >= 1")
        self.mcfg = mcfg
        self.rcfg = rcfg
        self.k_values = tuple(k_values)
        self.h_values = tuple(h_values)
        self.schedule = schedule or NeighborSchedule.default(max(h_values))
        self.params = params
        self.reg_scale = reg_scale
        self.workers = workers
        self.experts = [(k, h) for k in self.k_values for h in self.h_values]
        self.t_observed = 0
        self._cap = 256
        n = mcfg.n
        self._markets = np.empty((self._cap, n))
        self._xp = np.empty((self._cap, mcfg.dim))
        self._wins = {k: np.empty((self._cap, k * n)) for k in self.k_values}
        self._warm: list[tuple[np.ndarray, float] | None] = [None] * len(self.experts)
        self.unconverged_days = 0

    def __len__(self) -> int:
        return len(self.experts)

    def _grow(self, need: int) -> None:
        while self._cap < need:
            self._cap *= 2
        for name in ("_markets", "_xp"):
            old = getattr(self, name)
            new = np.empty((self._cap, old.shape[1]))
            new[: self.t_observed] = old[: self.t_observed]
            setattr(self, name, new)
        for k, old in self._wins.items():
            new = np.empty((self._cap, old.shape[1]))
            new[: self.t_observed] = old[: self.t_observed]
            self._wins[k] = new

    def observe(self, x) -> None:
        """Append one revealed market vector and extend the window matrices."""
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.mcfg.n:
            raise ValueError(f"expected {self.mcfg.n} assets, got {x.size}")
        if self.t_observed + 1 > self._cap:
            self._grow(self.t_observed + 1)
        m = self.t_observed
        self._markets[m] = x
        self._xp[m] = transform_all(x[None, :], self.mcfg.r)[0]
        for k in self.k_values:
            if m + 1 >= k:
                self._wins[k][m] = self._markets[m + 1 - k: m + 1].ravel()
        self.t_observed = m + 1

    def _distances(self, k: int) -> np.ndarray | None:
        """Squared distances from the query window to all candidate windows."""
        m = self.t_observed
        if m - k < 1:
            return None
        wins = self._wins[k][k - 1: m - 1]  # windows ending at days k-1 .. m-2
        query = self._wins[k][m - 1]
        return ((wins - query) ** 2).sum(axis=1)

    def predict_all(self) -> list[SaddleResult]:
        """Every expert's prediction for day t_observed + 1, in grid order."""
        t = self.t_observed + 1
        matched: dict[tuple[int, int], np.ndarray] = {}
        empty = np.empty(0, dtype=np.intp)
        for k in self.k_values:
            dist = self._distances(k)
            for h in self.h_values:
                h_hat = self.schedule.h_hat(h, t)
                if dist is None or h_hat < 1:
                    matched[(k, h)] = empty
                else:
                    matched[(k, h)] = _select_nearest(dist, h_hat) + k

        def run(e: int) -> SaddleResult:
            k, h = self.experts[e]
            idx = matched[(k, h)]
            if idx.size == 0:
                return default_triple(self.mcfg, self.rcfg)
            reg = regularizer_weight(t, k, h, self.reg_scale)
            return solve_saddle(self._xp[idx], reg, self.rcfg, self.mcfg.L,
                                self.mcfg.r, self.params, warm=self._warm[e])

        if self.workers > 1 and len(self.experts) > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(run, range(len(self.experts))))
        else:
            results = [run(e) for e in range(len(self.experts))]

        for e, res in enumerate(results):
            if res.iters > 0:
                self._warm[e] = (res.b, res.c)
                if not res.converged:
                    self.unconverged_days += 1
        return results
