"""Conditional value at risk of a discrete loss sample.

Two routes to the same number: direct tail averaging over the worst
(1-alpha) probability mass, and minimization of the convex threshold
objective phi(c) = c + mean((loss - c)^+) / (1-alpha). For discrete samples
the minimizer sits at an order statistic, so both are computed exactly by a
sort; the tail average weights the boundary loss fractionally so that the
two routes agree to machine precision.
"""

from dataclasses import dataclass

import numpy as np

from .objective import RiskConfig, omega


@dataclass(frozen=True)
class CvarResult:
    value: float
    c_star: float


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0,1), got {alpha}")


def cvar_tail_oracle(losses: np.ndarray, alpha: float) -> float:
    """Average of the worst (1-alpha) fraction of losses.

    With m = (1-alpha)*len(losses), the top ceil(m) losses are averaged with
    the smallest of them weighted by the fractional remainder, so the total
    tail weight is exactly m.
    """
    _check_alpha(alpha)
    losses = np.asarray(losses, dtype=float).ravel()
    if losses.size == 0:
        raise ValueError("empty loss sample")
    return _tail_mean(np.sort(losses)[::-1], np.full(losses.size, 1.0 / losses.size), alpha)


def cvar_discrete(losses: np.ndarray, probs: np.ndarray, alpha: float) -> float:
    """CVaR of a finite distribution given as (support, probabilities)."""
    _check_alpha(alpha)
    losses = np.asarray(losses, dtype=float).ravel()
    probs = np.asarray(probs, dtype=float).ravel()
    if losses.size == 0 or losses.shape != probs.shape:
        raise ValueError("support and probabilities must be matching nonempty vectors")
    if np.any(probs < 0.0) or not np.isclose(probs.sum(), 1.0):
        raise ValueError("probabilities must be nonnegative and sum to 1")
    order = np.argsort(losses)[::-1]
    return _tail_mean(losses[order], probs[order], alpha)


def _tail_mean(sorted_desc: np.ndarray, weights: np.ndarray, alpha: float) -> float:
    """Mean of the top (1-alpha) probability mass of a sorted weighted sample."""
    m = 1.0 - alpha
    cum = np.cumsum(weights)
    k = int(np.searchsorted(cum, m, side="left"))
    k = min(k, sorted_desc.size - 1)
    full = np.dot(sorted_desc[:k], weights[:k])
    prev = cum[k - 1] if k > 0 else 0.0
    return (full + sorted_desc[k] * (m - prev)) / m


def _tail_threshold(sorted_desc: np.ndarray, weights: np.ndarray, alpha: float) -> float:
    """The order statistic at which the (1-alpha) tail mass is exhausted."""
    m = 1.0 - alpha
    cum = np.cumsum(weights)
    k = int(np.searchsorted(cum, m, side="left"))
    return float(sorted_desc[min(k, sorted_desc.size - 1)])


def phi_empirical(b: np.ndarray, c: float, samples: np.ndarray, alpha: float,
                  L: float, r: float) -> float:
    """Threshold objective c + mean((omega - c)^+) / (1-alpha) over samples."""
    _check_alpha(alpha)
    samples = np.atleast_2d(samples)
    if samples.shape[0] == 0:
        raise ValueError("empty sample set")
    w = omega(b, samples, L, r)
    return float(c + np.mean(np.maximum(w - c, 0.0)) / (1.0 - alpha))


def cvar_ru_minimize(b: np.ndarray, samples: np.ndarray, alpha: float, M: float,
                     L: float, r: float) -> CvarResult:
    """Minimize phi_empirical over c in [-M, M].

    The empirical minimizer is an order statistic of the induced loss
    sample, so the scan is exact; the value equals cvar_tail_oracle of the
    same losses.
    """
    _check_alpha(alpha)
    samples = np.atleast_2d(samples)
    if samples.shape[0] == 0:
        raise ValueError("empty sample set")
    w = np.sort(np.asarray(omega(b, samples, L, r)).ravel())[::-1]
    weights = np.full(w.size, 1.0 / w.size)
    value = _tail_mean(w, weights, alpha)
    c_star = float(np.clip(_tail_threshold(w, weights, alpha), -M, M))
    return CvarResult(value=value, c_star=c_star)


def cvar_of_losses(losses: np.ndarray, alpha: float, M: float) -> CvarResult:
    """Tail oracle plus the minimizing threshold for a raw loss sample."""
    _check_alpha(alpha)
    losses = np.asarray(losses, dtype=float).ravel()
    if losses.size == 0:
        raise ValueError("empty loss sample")
    w = np.sort(losses)[::-1]
    weights = np.full(w.size, 1.0 / w.size)
    return CvarResult(value=_tail_mean(w, weights, alpha),
                      c_star=float(np.clip(_tail_threshold(w, weights, alpha), -M, M)))
