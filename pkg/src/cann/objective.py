"""Shared scalar kernel: daily return, log-loss, the per-day Lagrangian.

Everything downstream (experts, the aggregator, metrics) evaluates the same
three quantities: the leveraged daily return for a portfolio against a
transformed market vector, its negative log (the loss omega), and the
per-day Lagrangian that folds the CVaR constraint surrogate in with
multiplier lambda.
"""

from dataclasses import dataclass, replace

import numpy as np

from .market import MarketConfig


@dataclass(frozen=True)
class RiskConfig:
    """CVaR level, risk budget, loss bound and multiplier cap for one run."""

    alpha: float
    gamma: float
    M: float
    lam_max: float

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0,1), got {self.alpha}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.M <= 0.0:
            raise ValueError(f"M must be positive, got {self.M}")
        if self.lam_max <= 0.0:
            raise ValueError(f"lam_max must be positive, got {self.lam_max}")

    @property
    def q(self) -> float:
        """Tail inflation factor 1/(1-alpha)."""
        return 1.0 / (1.0 - self.alpha)

    @classmethod
    def from_market(cls, mcfg: MarketConfig, alpha: float, gamma: float,
                    slater_delta: float | None = None) -> "RiskConfig":
        M = compute_m(mcfg)
        return cls(alpha=alpha, gamma=gamma, M=M,
                   lam_max=compute_lambda_max(M, gamma, slater_delta))

    def with_gamma(self, gamma: float, slater_delta: float | None = None) -> "RiskConfig":
        """Same bounds, new risk budget (lam_max rescaled)."""
        return replace(self, gamma=gamma,
                       lam_max=compute_lambda_max(self.M, gamma, slater_delta))


def return_bounds(B: float, r: float, L: float) -> tuple[float, float]:
    """Attainable daily-return interval over clipped markets and feasible b.

    The minimum payoff component is a long leg at 1-B, the maximum a short
    leg at 1+B+r, and a simplex portfolio of mass L interpolates between
    L*(component) - (L-1)(1+r) at the extremes.
    """
    off = (L - 1.0) * (1.0 + r)
    return L * (1.0 - B) - off, L * (1.0 + B + r) - off


def compute_m(mcfg: MarketConfig) -> float:
    """Loss bound M: max |log return| over the attainable return interval."""
    lo, hi = return_bounds(mcfg.B, mcfg.r, mcfg.L)
    if lo <= 0.0:
        # lo > 0 iff L < (1+r)/(B+r)
        raise ValueError(
            f"leverage {mcfg.L} admits bankruptcy (worst return {lo:.6g}); "
            f"require L < {(1.0 + mcfg.r) / (mcfg.B + mcfg.r):.6g}"
        )
    return max(abs(np.log(lo)), abs(np.log(hi)))


def compute_lambda_max(M: float, gamma: float, slater_delta: float | None = None) -> float:
    """Multiplier cap 2M/delta from the Slater margin; default delta = gamma/2."""
    delta = gamma / 2.0 if slater_delta is None else slater_delta
    if not (0.0 < delta < gamma):
        raise ValueError(f"slater margin must lie in (0, gamma), got {delta}")
    return 2.0 * M / delta


def project_simplex(v: np.ndarray, mass: float = 1.0) -> np.ndarray:
    """Euclidean projection onto {b >= 0, sum(b) = mass}."""
    v = np.asarray(v, dtype=float)
    if v.size <= 16:  # scan beats vectorized sort at small dimension
        u = sorted(v.tolist(), reverse=True)
        css = 0.0
        theta = 0.0
        for i, ui in enumerate(u):
            css += ui
            t = (css - mass) / (i + 1)
            if i + 1 == len(u) or u[i + 1] <= t:
                theta = t
                break
        return np.maximum(v - theta, 0.0)
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - mass
    rho = np.nonzero(u * np.arange(1, v.size + 1) > cssv)[0][-1]
    theta = cssv[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def daily_return(b: np.ndarray, xp: np.ndarray, L: float, r: float):
    """Leveraged daily multiplicative return <b, x'> - (L-1)(1+r).

    xp may be a single vector or a (T, dim) stack; returns a scalar or (T,).
    """
    return np.asarray(xp) @ np.asarray(b) - (L - 1.0) * (1.0 + r)


def omega(b: np.ndarray, xp: np.ndarray, L: float, r: float):
    """Daily log-loss -log(daily_return). Fails loudly on non-positive returns."""
    ret = daily_return(b, xp, L, r)
    bad = np.atleast_1d(ret <= 0.0)
    if bad.any():
        day = int(np.flatnonzero(bad)[0])
        raise ValueError(
            f"non-positive daily return {np.atleast_1d(ret)[day]:.6g} at sample {day}; "
            "leverage override exceeds the no-bankruptcy bound"
        )
    return -np.log(ret)


def constraint_surrogate(w, c: float, alpha: float, gamma: float):
    """Per-day CVaR surrogate c + (omega - c)^+ / (1-alpha) - gamma."""
    return c + np.maximum(np.asarray(w) - c, 0.0) / (1.0 - alpha) - gamma


def inst_lagrangian(b: np.ndarray, c: float, lam: float, xp: np.ndarray,
                    rcfg: RiskConfig, L: float, r: float):
    """Per-day Lagrangian: omega + lam * constraint surrogate.

    Convex in (b, c) at fixed lam, affine in lam. Vectorizes over rows of xp.
    """
    w = omega(b, xp, L, r)
    return w + lam * constraint_surrogate(w, c, rcfg.alpha, rcfg.gamma)


def regularized_loss(b: np.ndarray, c: float, lam: float, xp: np.ndarray,
                     reg: float, rcfg: RiskConfig, L: float, r: float):
    """Per-day Lagrangian plus reg * (||(b,c)||^2 - lam^2).

    The quadratic term makes the empirical saddle problem strongly convex in
    (b, c) and strongly concave in lam, so each expert's solution is unique.
    """
    base = inst_lagrangian(b, c, lam, xp, rcfg, L, r)
    return base + reg * (float(np.dot(b, b)) + c * c - lam * lam)
