"""Twin exponential-weights aggregation over the expert grid.

Two weight distributions are maintained over the same experts: the primal
side tracks each expert's cumulative per-day Lagrangian with its own
portfolio and threshold against the played multiplier, and is exponentiated
negatively (low loss -> high weight); the dual side tracks the played
portfolio and threshold against each expert's multiplier, exponentiated
positively (high loss -> high weight). Both use learning rate 1/sqrt(t) on
the full cumulative loss. The played decision is the primal-weighted average
of the expert portfolios and thresholds together with the dual-weighted
average of the expert multipliers; feasibility survives the averaging
because all three constraint sets are convex.
"""

from dataclasses import dataclass, field

import numpy as np

from .cvar import cvar_of_losses
from .market import MarketConfig
from .objective import RiskConfig, daily_return, inst_lagrangian
from .experts import ExpertPool, SaddleResult


@dataclass
class ExpertLedger:
    """Per-expert cumulative losses for the two aggregation sides."""

    priors: np.ndarray
    loss_bc: np.ndarray
    loss_lam: np.ndarray
    days: int = 0

    @classmethod
    def uniform(cls, n_experts: int) -> "ExpertLedger":
        if n_experts < 1:
            raise ValueError("need at least one expert")
        return cls(priors=np.full(n_experts, 1.0 / n_experts),
                   loss_bc=np.zeros(n_experts), loss_lam=np.zeros(n_experts))

    @classmethod
    def with_priors(cls, priors) -> "ExpertLedger":
        priors = np.asarray(priors, dtype=float)
        if priors.ndim != 1 or priors.size < 1:
            raise ValueError("priors must be a nonempty vector")
        if np.any(priors <= 0.0) or not np.isclose(priors.sum(), 1.0):
            raise ValueError("priors must be positive and sum to 1")
        return cls(priors=priors, loss_bc=np.zeros(priors.size),
                   loss_lam=np.zeros(priors.size))

    def record(self, bc_losses: np.ndarray, lam_losses: np.ndarray) -> None:
        self.loss_bc += bc_losses
        self.loss_lam += lam_losses
        self.days += 1


def weights(ledger: ExpertLedger, t: int, side: str) -> np.ndarray:
    """Normalized exponential weights after t completed days.

    side='primal' uses exp(-loss_bc/sqrt(t)), side='dual' uses
    exp(+loss_lam/sqrt(t)); both are prior-multiplied and computed in
    log space with a max shift.
    """
    if t < 1:
        raise ValueError(f"weights are defined for t >= 1, got {t}")
    if side == "primal":
        z = -ledger.loss_bc / np.sqrt(t)
    elif side == "dual":
        z = ledger.loss_lam / np.sqrt(t)
    else:
        raise ValueError(f"side must be 'primal' or 'dual', got {side!r}")
    z = z + np.log(ledger.priors)
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


@dataclass
class DayRecord:
    day: int
    ret: float
    omega: float
    lagrangian: float
    lam: float
    c: float
    entropy_primal: float
    entropy_dual: float


@dataclass
class RunReport:
    """Per-day trace and terminal summaries of one aggregated run."""

    returns: np.ndarray
    omegas: np.ndarray
    lagrangians: np.ndarray
    lams: np.ndarray
    cs: np.ndarray
    entropy_primal: np.ndarray
    entropy_dual: np.ndarray
    portfolios: np.ndarray | None = None
    unconverged_days: int = 0

    @property
    def terminal_wealth(self) -> float:
        return float(np.prod(self.returns))

    @property
    def growth_rate(self) -> float:
        return float(np.mean(np.log(self.returns)))

    def empirical_cvar(self, alpha: float) -> float:
        return cvar_of_losses(self.omegas, alpha, M=np.inf).value

    def trailing_cvar(self, alpha: float, stride: int = 1) -> np.ndarray:
        """Empirical CVaR of the loss prefix at every stride-th day."""
        days = range(stride - 1, self.omegas.size, stride)
        return np.array([
            cvar_of_losses(self.omegas[: i + 1], alpha, M=np.inf).value for i in days
        ])


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


@dataclass
class Aggregator:
    """Online driver: play, observe, charge the ledgers, remix the experts."""

    pool: ExpertPool
    priors: np.ndarray | None = None
    ledger: ExpertLedger = field(init=False)
    day: int = field(init=False, default=0)

    def __post_init__(self):
        self.ledger = (ExpertLedger.uniform(len(self.pool)) if self.priors is None
                       else ExpertLedger.with_priors(self.priors))
        if self.ledger.priors.size != len(self.pool):
            raise ValueError(
                f"{self.ledger.priors.size} priors for {len(self.pool)} experts")
        self._absorb(self.pool.predict_all())  # cold-start defaults
        self._played = self._mix(self.ledger.priors, self.ledger.priors)

    @property
    def mcfg(self) -> MarketConfig:
        return self.pool.mcfg

    @property
    def rcfg(self) -> RiskConfig:
        return self.pool.rcfg

    @property
    def played(self) -> tuple[np.ndarray, float, float]:
        """The triple committed for the upcoming day."""
        return self._played

    def _absorb(self, predictions: list[SaddleResult]) -> None:
        self._predictions = predictions
        self._pred_b = np.stack([p.b for p in predictions])
        self._pred_c = np.array([p.c for p in predictions])
        self._pred_lam = np.array([p.lam for p in predictions])

    def _mix(self, w_primal: np.ndarray, w_dual: np.ndarray):
        return (w_primal @ self._pred_b, float(w_primal @ self._pred_c),
                float(w_dual @ self._pred_lam))

    def step(self, x) -> DayRecord:
        """Reveal one market vector; returns the diagnostics of the day."""
        x = np.asarray(x, dtype=float).ravel()
        mcfg, rcfg = self.mcfg, self.rcfg
        self.day += 1
        b, c, lam = self._played
        xp_row = np.empty(mcfg.dim)
        xp_row[0] = 1.0 + mcfg.r
        xp_row[1::2] = x
        xp_row[2::2] = 2.0 - x + mcfg.r

        ret = float(daily_return(b, xp_row, mcfg.L, mcfg.r))
        loss = float(inst_lagrangian(b, c, lam, xp_row, rcfg, mcfg.L, mcfg.r))

        # each expert charged against the played counterpart
        off = (mcfg.L - 1.0) * (1.0 + mcfg.r)
        om_e = -np.log(self._pred_b @ xp_row - off)
        om_played = -np.log(ret)
        bc_losses = om_e + lam * (
            self._pred_c + rcfg.q * np.maximum(om_e - self._pred_c, 0.0) - rcfg.gamma)
        lam_losses = om_played + self._pred_lam * (
            c + rcfg.q * max(om_played - c, 0.0) - rcfg.gamma)
        self.ledger.record(bc_losses, lam_losses)

        w_primal = weights(self.ledger, self.day, "primal")
        w_dual = weights(self.ledger, self.day, "dual")

        self.pool.observe(x)
        self._absorb(self.pool.predict_all())
        self._played = self._mix(w_primal, w_dual)

        return DayRecord(day=self.day, ret=ret, omega=float(-np.log(ret)),
                         lagrangian=loss, lam=lam, c=c,
                         entropy_primal=_entropy(w_primal),
                         entropy_dual=_entropy(w_dual))


def run(markets: np.ndarray, pool: ExpertPool, priors: np.ndarray | None = None,
        keep_portfolios: bool = False) -> RunReport:
    """Drive the aggregator over a full market sequence."""
    markets = np.atleast_2d(np.asarray(markets, dtype=float))
    if markets.shape[0] < 1:
        raise ValueError("need at least one market day")
    agg = Aggregator(pool, priors=priors)
    T = markets.shape[0]
    rets = np.empty(T)
    oms = np.empty(T)
    lags = np.empty(T)
    lams = np.empty(T)
    cs = np.empty(T)
    ent_p = np.empty(T)
    ent_d = np.empty(T)
    ports = np.empty((T, pool.mcfg.dim)) if keep_portfolios else None
    for t in range(T):
        if ports is not None:
            ports[t] = agg.played[0]
        rec = agg.step(markets[t])
        rets[t] = rec.ret
        oms[t] = rec.omega
        lags[t] = rec.lagrangian
        lams[t] = rec.lam
        cs[t] = rec.c
        ent_p[t] = rec.entropy_primal
        ent_d[t] = rec.entropy_dual
    return RunReport(returns=rets, omegas=oms, lagrangians=lags, lams=lams, cs=cs,
                     entropy_primal=ent_p, entropy_dual=ent_d, portfolios=ports,
                     unconverged_days=pool.unconverged_days)
