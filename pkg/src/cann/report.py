"""Experiment runner: config schema, strategy dispatch, and report artifacts.

A run config is a single JSON document. The runner executes every configured
strategy on the configured market source, sweeps the risk budget when asked,
and writes a JSON report plus CSV tables (terminal wealth per strategy,
realized CVaR per risk budget, a daily-return histogram, and mean-versus-
CVaR frontier points). Outputs are byte-reproducible for a fixed config and
seed: floats are serialized with repr, rows in fixed order.
"""

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
from jsonschema import Draft202012Validator

from . import __version__
from .aggregator import run as cann_run
from .benchmarks import (bcrp, bnn_leveraged_run, bnn_run, crp_wealth, eg_run,
                         ons_run, up_approx)
from .cvar import cvar_of_losses
from .errors import ConfigError, DataError
from .experts import ExpertPool, NeighborSchedule, SolverParams
from .market import MarketConfig, load_prices, to_relative
from .objective import RiskConfig
from .synthetic import AssetDist, MarkovMarketSpec, gen_iid, gen_markov

_DIST = {
    "type": "object",
    "required": ["values", "probs"],
    "properties": {
        "values": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "probs": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["market", "risk", "strategies"],
    "properties": {
        "seed": {"type": "integer"},
        "workers": {"type": "integer", "minimum": 1},
        "market": {
            "type": "object",
            "required": ["source"],
            "properties": {
                "B": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "r": {"type": "number", "exclusiveMinimum": 0},
                "leverage": {"type": ["number", "null"]},
                "source": {
                    "type": "object",
                    "required": ["type"],
                    "properties": {
                        "type": {"enum": ["csv", "iid", "markov"]},
                        "path": {"type": "string"},
                        "T": {"type": "integer", "minimum": 1},
                        "jitter": {"type": "number", "minimum": 0},
                        "assets": {"type": "array", "items": _DIST, "minItems": 1},
                        "transition": {
                            "type": "array", "minItems": 1,
                            "items": {"type": "array", "items": {"type": "number"},
                                      "minItems": 1},
                        },
                        "emissions": {
                            "type": "array", "minItems": 1,
                            "items": {"type": "array", "items": _DIST, "minItems": 1},
                        },
                    },
                },
            },
        },
        "risk": {
            "type": "object",
            "required": ["alpha", "gamma"],
            "properties": {
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "gamma": {"type": "number", "exclusiveMinimum": 0},
                "slater_delta": {"type": ["number", "null"]},
            },
        },
        "experts": {
            "type": "object",
            "properties": {
                "k_values": {"type": "array", "items": {"type": "integer", "minimum": 1},
                             "minItems": 1},
                "h_values": {"type": "array", "items": {"type": "integer", "minimum": 1},
                             "minItems": 1},
                "p_fractions": {"type": ["array", "null"],
                                "items": {"type": "number"}},
                "priors": {"type": ["array", "null"],
                           "items": {"type": "number", "exclusiveMinimum": 0}},
                "reg_scale": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "solver": {
            "type": "object",
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
            },
        },
        "strategies": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name"],
                "properties": {
                    "name": {"enum": ["cann", "bcrp", "up", "eg", "ons",
                                      "bnn", "bnn_leveraged"]},
                    "eta": {"type": "number"},
                    "samples": {"type": "integer", "minimum": 1},
                    "delta": {"type": "number"},
                    "beta": {"type": "number"},
                },
            },
        },
        "sweep": {
            "type": "object",
            "required": ["gammas"],
            "properties": {
                "gammas": {"type": "array", "minItems": 1,
                           "items": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}},
        },
    },
}

_VALIDATOR = Draft202012Validator(CONFIG_SCHEMA)


def validate_config(cfg: dict) -> None:
    errors = sorted(_VALIDATOR.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config field {path}: {e.message}")


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    validate_config(cfg)
    return cfg


@dataclass
class Metrics:
    growth_rate: float
    terminal_wealth: float
    cvar: float
    max_drawdown: float
    days: int


def max_drawdown(wealth: np.ndarray) -> float:
    """Largest peak-to-trough fraction of the wealth path (start counts as a peak)."""
    peaks = np.maximum.accumulate(np.concatenate([[1.0], wealth]))
    return float(np.max(1.0 - np.concatenate([[1.0], wealth]) / peaks))


def metrics(returns: np.ndarray, alpha: float) -> Metrics:
    """Summary record of a daily return sequence."""
    returns = np.asarray(returns, dtype=float).ravel()
    if returns.size == 0:
        raise DataError("empty return sequence")
    bad = returns <= 0.0
    if bad.any():
        raise DataError(f"non-positive return on day {int(np.flatnonzero(bad)[0]) + 1}")
    logs = np.log(returns)
    return Metrics(
        growth_rate=float(logs.mean()),
        terminal_wealth=float(np.exp(logs.sum())),
        cvar=cvar_of_losses(-logs, alpha, M=np.inf).value,
        max_drawdown=max_drawdown(np.exp(np.cumsum(logs))),
        days=returns.size,
    )


@dataclass
class MarketData:
    markets: np.ndarray          # (T, n) relative prices, clipped
    mcfg: MarketConfig
    names: list[str]
    source: str
    states: np.ndarray | None = None


def build_market(cfg: dict, seed: int) -> MarketData:
    mkt = cfg["market"]
    B = mkt.get("B", 0.4)
    r = mkt.get("r", 0.000245)
    leverage = mkt.get("leverage")
    src = mkt["source"]
    kind = src["type"]
    if kind == "csv":
        if "path" not in src:
            raise ConfigError("market.source.path is required for csv sources")
        try:
            names, prices = load_prices(src["path"])
        except (FileNotFoundError, ValueError) as exc:
            raise DataError(str(exc)) from None
        markets = to_relative(prices, B)
        source = src["path"]
        states = None
    elif kind == "iid":
        if "assets" not in src or "T" not in src:
            raise ConfigError("market.source needs assets and T for iid sources")
        assets = tuple(AssetDist(tuple(a["values"]), tuple(a["probs"]))
                       for a in src["assets"])
        markets = gen_iid(assets, src["T"], seed, src.get("jitter", 0.0))
        markets = np.clip(markets, 1.0 - B, 1.0 + B)
        names = [f"A{i}" for i in range(len(assets))]
        source = "iid"
        states = None
    elif kind == "markov":
        if "transition" not in src or "emissions" not in src or "T" not in src:
            raise ConfigError(
                "market.source needs transition, emissions and T for markov sources")
        spec = markov_spec_from_config(src, seed)
        spec.validate_bounds(B)
        markets, states = gen_markov(spec, src["T"])
        markets = np.clip(markets, 1.0 - B, 1.0 + B)
        names = [f"A{i}" for i in range(spec.n_assets)]
        source = "markov"
    else:  # pragma: no cover - schema forbids
        raise ConfigError(f"unknown market source type {kind!r}")
    mcfg = MarketConfig(n=markets.shape[1], B=B, r=r, L=leverage)
    return MarketData(markets=markets, mcfg=mcfg, names=names, source=source,
                      states=states)


def markov_spec_from_config(src: dict, seed: int) -> MarkovMarketSpec:
    emissions = tuple(
        tuple(AssetDist(tuple(a["values"]), tuple(a["probs"])) for a in state)
        for state in src["emissions"]
    )
    return MarkovMarketSpec(
        transition=tuple(tuple(row) for row in src["transition"]),
        emissions=emissions, seed=seed, jitter=src.get("jitter", 0.0),
    )


@dataclass
class StrategyResult:
    name: str
    returns: np.ndarray | None
    metrics: Metrics | None
    error: str | None = None
    extras: dict = field(default_factory=dict)


def _pool_from_config(cfg: dict, mcfg: MarketConfig, rcfg: RiskConfig,
                      workers: int) -> ExpertPool:
    ex = cfg.get("experts", {})
    k_values = tuple(ex.get("k_values", [1, 2, 3, 4, 5]))
    h_values = tuple(ex.get("h_values", list(range(1, 11))))
    fractions = ex.get("p_fractions")
    schedule = (NeighborSchedule(tuple(fractions)) if fractions
                else NeighborSchedule.default(max(h_values)))
    sol = cfg.get("solver", {})
    params = SolverParams(tol=sol.get("tol", 1e-6),
                          max_iters=sol.get("max_iters", 5000))
    return ExpertPool(mcfg, rcfg, k_values=k_values, h_values=h_values,
                      schedule=schedule, params=params,
                      reg_scale=ex.get("reg_scale", 1.0), workers=workers)


def run_cann(cfg: dict, data: MarketData, gamma: float | None = None,
             workers: int = 1, keep_portfolios: bool = False):
    risk = cfg["risk"]
    rcfg = RiskConfig.from_market(data.mcfg, risk["alpha"],
                                  gamma if gamma is not None else risk["gamma"],
                                  risk.get("slater_delta"))
    pool = _pool_from_config(cfg, data.mcfg, rcfg, workers)
    priors = cfg.get("experts", {}).get("priors")
    if priors is not None:
        priors = np.asarray(priors, dtype=float)
        priors = priors / priors.sum()
    return cann_run(data.markets, pool, priors=priors,
                    keep_portfolios=keep_portfolios)


def run_strategy(spec: dict, cfg: dict, data: MarketData, seed: int,
                 workers: int) -> StrategyResult:
    name = spec["name"]
    markets = data.markets
    alpha = cfg["risk"]["alpha"]
    try:
        if name == "cann":
            rep = run_cann(cfg, data, workers=workers)
            returns = rep.returns
            extras = {"unconverged_days": rep.unconverged_days}
        elif name == "bcrp":
            b = bcrp(markets)
            returns = markets @ b
            extras = {"portfolio": [repr(float(v)) for v in b]}
        elif name == "up":
            wealth = up_approx(markets, spec.get("samples", 10_000), seed)
            returns = _wealth_to_returns(wealth)
            extras = {}
        elif name == "eg":
            wealth = eg_run(markets, spec.get("eta", 0.05))
            returns = _wealth_to_returns(wealth)
            extras = {}
        elif name == "ons":
            wealth = ons_run(markets, delta=spec.get("delta", 0.125),
                             beta=spec.get("beta", 1.0), eta=spec.get("eta", 0.0))
            returns = _wealth_to_returns(wealth)
            extras = {}
        elif name == "bnn":
            ex = cfg.get("experts", {})
            wealth = bnn_run(markets,
                             k_values=tuple(ex.get("k_values", [1, 2, 3, 4, 5])),
                             h_values=tuple(ex.get("h_values", list(range(1, 11)))))
            returns = _wealth_to_returns(wealth)
            extras = {}
        elif name == "bnn_leveraged":
            ex = cfg.get("experts", {})
            wealth = bnn_leveraged_run(
                markets, data.mcfg,
                k_values=tuple(ex.get("k_values", [1, 2, 3, 4, 5])),
                h_values=tuple(ex.get("h_values", list(range(1, 11)))))
            returns = _wealth_to_returns(wealth)
            extras = {}
        else:  # pragma: no cover - schema forbids
            raise ConfigError(f"unknown strategy {name!r}")
        return StrategyResult(name=name, returns=returns,
                              metrics=metrics(returns, alpha), extras=extras)
    except Exception as exc:  # isolate failures per strategy
        return StrategyResult(name=name, returns=None, metrics=None,
                              error=f"{type(exc).__name__}: {exc}")


def _wealth_to_returns(wealth: np.ndarray) -> np.ndarray:
    wealth = np.asarray(wealth, dtype=float)
    return wealth / np.concatenate([[1.0], wealth[:-1]])


def _sweep_point(args):
    cfg, data, gamma, workers = args
    rep = run_cann(cfg, data, gamma=gamma, workers=workers)
    m = metrics(rep.returns, cfg["risk"]["alpha"])
    return {
        "gamma": gamma,
        "cvar": m.cvar,
        "mean_daily_return": float(np.mean(rep.returns)),
        "growth_rate": m.growth_rate,
        "terminal_wealth": m.terminal_wealth,
    }


def run_sweep(cfg: dict, data: MarketData, gammas, workers: int = 1) -> list[dict]:
    jobs = [(cfg, data, float(g), 1) for g in gammas]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_point, jobs))
    return [_sweep_point(j) for j in jobs]


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def run_experiment(cfg: dict, out_dir: str | None = None,
                   seed: int | None = None, workers: int | None = None) -> dict:
    """Execute the full configured experiment; returns the report dict.

    Writes report.json, wealth_table.csv, returns.csv, return_histogram.csv
    and, when a sweep is configured, gamma_cvar.csv and
    mean_cvar_frontier.csv into the output directory.
    """
    validate_config(cfg)
    seed = seed if seed is not None else cfg.get("seed", 0)
    workers = workers if workers is not None else cfg.get("workers", 1)
    out_dir = out_dir or cfg.get("output", {}).get("dir", "out")

    data = build_market(cfg, seed)
    results = [run_strategy(s, cfg, data, seed, workers)
               for s in cfg["strategies"]]
    sweep_rows = []
    if "sweep" in cfg:
        sweep_rows = run_sweep(cfg, data, cfg["sweep"]["gammas"], workers)

    report = {
        "version": __version__,
        "seed": seed,
        "config_hash": config_hash(cfg),
        "market": {
            "source": data.source,
            "days": int(data.markets.shape[0]),
            "assets": int(data.markets.shape[1]),
            "B": data.mcfg.B,
            "r": data.mcfg.r,
            "leverage": data.mcfg.L,
        },
        "risk": cfg["risk"],
        "strategies": {
            res.name: (
                {
                    "growth_rate": res.metrics.growth_rate,
                    "terminal_wealth": res.metrics.terminal_wealth,
                    "cvar": res.metrics.cvar,
                    "max_drawdown": res.metrics.max_drawdown,
                    "days": res.metrics.days,
                    **res.extras,
                }
                if res.error is None else {"error": res.error}
            )
            for res in results
        },
        "sweep": sweep_rows,
    }

    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "report.json"), report)
    _write_wealth_table(os.path.join(out_dir, "wealth_table.csv"), results)
    _write_returns(os.path.join(out_dir, "returns.csv"), results)
    _write_histogram(os.path.join(out_dir, "return_histogram.csv"), results)
    if sweep_rows:
        _write_sweep(os.path.join(out_dir, "gamma_cvar.csv"), sweep_rows)
        _write_frontier(os.path.join(out_dir, "mean_cvar_frontier.csv"), sweep_rows)
    return report


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _csv_writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _write_wealth_table(path: str, results: list[StrategyResult]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(["strategy", "terminal_wealth", "growth_rate", "cvar",
                    "max_drawdown", "error"])
        for res in results:
            if res.error is None:
                m = res.metrics
                w.writerow([res.name, repr(m.terminal_wealth), repr(m.growth_rate),
                            repr(m.cvar), repr(m.max_drawdown), ""])
            else:
                w.writerow([res.name, "", "", "", "", res.error])


def _write_returns(path: str, results: list[StrategyResult]) -> None:
    ok = [r for r in results if r.error is None]
    with open(path, "w", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(["day"] + [r.name for r in ok])
        if not ok:
            return
        T = ok[0].returns.size
        for t in range(T):
            w.writerow([t + 1] + [repr(float(r.returns[t])) for r in ok])


def _write_histogram(path: str, results: list[StrategyResult],
                     bins: int = 200) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(["strategy", "bin_left", "bin_right", "count"])
        for res in results:
            if res.error is not None:
                continue
            counts, edges = np.histogram(res.returns, bins=bins)
            for i in range(bins):
                w.writerow([res.name, repr(float(edges[i])),
                            repr(float(edges[i + 1])), int(counts[i])])


def _write_sweep(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(["gamma", "cvar", "mean_daily_return", "growth_rate",
                    "terminal_wealth"])
        for row in rows:
            w.writerow([repr(float(row["gamma"])), repr(float(row["cvar"])),
                        repr(float(row["mean_daily_return"])),
                        repr(float(row["growth_rate"])),
                        repr(float(row["terminal_wealth"]))])


def _write_frontier(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(["gamma", "cvar", "mean_daily_return"])
        for row in rows:
            w.writerow([repr(float(row["gamma"])), repr(float(row["cvar"])),
                        repr(float(row["mean_daily_return"]))])
