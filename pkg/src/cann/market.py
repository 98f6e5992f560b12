"""Price ingestion, relative-price market vectors, and the short/leverage transform.

A market vector holds one day's relative prices (close-to-close ratios) for n
assets, clipped to [1-B, 1+B]. The transformed vector has 2n+1 entries: cash
grows by 1+r, and each asset contributes a long leg x_i and a short leg
2-x_i+r, so every admissible position is a nonnegative allocation on a
simplex scaled by the leverage mass L.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np


def default_leverage(B: float, r: float) -> float:
    """Leverage mass that makes the worst-case daily return exactly r."""
    return 1.0 / (B + r)


@dataclass(frozen=True)
class MarketConfig:
    """Static market parameters for one run.

    n: number of assets; B: daily move bound in (0,1); r: daily interest
    rate; L: leverage mass (default 1/(B+r), overridable).
    """

    n: int
    B: float = 0.4
    r: float = 0.000245
    L: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"asset count must be >= 1, got {self.n}")
        if not (0.0 < self.B < 1.0):
            raise ValueError(f"B must lie in (0,1), got {self.B}")
        if self.r <= 0.0:
            raise ValueError(f"daily rate must be positive, got {self.r}")
        if self.L is None:
            object.__setattr__(self, "L", default_leverage(self.B, self.r))
        if self.L <= 1.0:
            raise ValueError(f"leverage mass must exceed 1, got {self.L}")

    @property
    def dim(self) -> int:
        """Length of the transformed instrument vector."""
        return 2 * self.n + 1


def load_prices(path: str) -> tuple[list[str], np.ndarray]:
    """Read a closing-price CSV: header of tickers, one row per trading day.

    Returns (asset_names, prices) with prices shaped (days, n). Rejects
    ragged rows, non-numeric cells, and non-positive prices, naming the
    offending row and column.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"price file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        names = [h.strip() for h in header]
        n = len(names)
        if n == 0:
            raise ValueError(f"{path}: header row has no columns")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue  # tolerate blank lines
            if len(row) != n:
                raise ValueError(
                    f"{path}: row {lineno} has {len(row)} columns, expected {n}"
                )
            vals = np.empty(n)
            for j, cell in enumerate(row):
                try:
                    vals[j] = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}: row {lineno}, column '{names[j]}': "
                        f"non-numeric price {cell!r}"
                    ) from None
                if not np.isfinite(vals[j]) or vals[j] <= 0.0:
                    raise ValueError(
                        f"{path}: row {lineno}, column '{names[j]}': "
                        f"non-positive price {cell!r}"
                    )
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no price rows")
    return names, np.vstack(rows)


def to_relative(prices: np.ndarray, B: float) -> np.ndarray:
    """Consecutive-day price ratios, clipped componentwise to [1-B, 1+B].

    prices is (T+1, n); the result is (T, n).
    """
    prices = np.asarray(prices, dtype=float)
    if prices.ndim != 2 or prices.shape[0] < 2:
        raise ValueError("need at least two days of prices")
    rel = prices[1:] / prices[:-1]
    return np.clip(rel, 1.0 - B, 1.0 + B)


def transform(x: np.ndarray, r: float) -> np.ndarray:
    """Map one market vector to the 2n+1 transformed instrument payoffs."""
    x = np.asarray(x, dtype=float)
    out = np.empty(2 * x.shape[-1] + 1)
    out[0] = 1.0 + r
    out[1::2] = x
    out[2::2] = 2.0 - x + r
    return out


def transform_all(markets: np.ndarray, r: float) -> np.ndarray:
    """Vectorized transform: (T, n) market vectors to (T, 2n+1) payoffs."""
    markets = np.atleast_2d(np.asarray(markets, dtype=float))
    T, n = markets.shape
    out = np.empty((T, 2 * n + 1))
    out[:, 0] = 1.0 + r
    out[:, 1::2] = markets
    out[:, 2::2] = 2.0 - markets + r
    return out


def untransform(xp: np.ndarray) -> np.ndarray:
    """Recover the original market vector from the long legs."""
    xp = np.asarray(xp, dtype=float)
    return xp[..., 1::2]


def prices_from_relatives(markets: np.ndarray, base: float = 100.0) -> np.ndarray:
    """Cumulative-product price path (T+1, n) starting at `base` per asset."""
    markets = np.atleast_2d(np.asarray(markets, dtype=float))
    T, n = markets.shape
    prices = np.empty((T + 1, n))
    prices[0] = base
    np.cumprod(markets, axis=0, out=prices[1:])
    prices[1:] *= base
    return prices


def write_price_csv(path: str, names: list[str], prices: np.ndarray) -> None:
    """Write a price matrix in the ingestion CSV format (full float precision)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in prices:
            writer.writerow([repr(float(v)) for v in row])
