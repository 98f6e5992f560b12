"""Command-line batch runner.

    cann run <config.json> [--out-dir D] [--seed S] [--workers W]
    cann sweep <config.json> --gamma 0.01,0.02,... [--out-dir D] [--seed S]
    cann gen <spec.json> --out prices.csv [--seed S]

Exit codes: 0 success, 1 config error, 2 data error, 3 partial strategy
failure (the report is still written for the strategies that ran).
"""

import argparse
import json
import sys

from .errors import ConfigError, DataError
from .market import prices_from_relatives, write_price_csv
from .report import (build_market, load_config, run_experiment)


def _parse_gammas(text: str) -> list[float]:
    try:
        gammas = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"bad --gamma list: {text!r}") from None
    if not gammas or any(g <= 0.0 for g in gammas):
        raise ConfigError(f"--gamma values must be positive: {text!r}")
    return gammas


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cann",
                                     description="risk-constrained portfolio backtester")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured strategies")
    p_run.add_argument("config")
    p_run.add_argument("--out-dir", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--workers", type=int, default=None)

    p_sweep = sub.add_parser("sweep", help="sweep the risk budget")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--gamma", required=True,
                         help="comma-separated risk budgets")
    p_sweep.add_argument("--out-dir", default=None)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--workers", type=int, default=None)

    p_gen = sub.add_parser("gen", help="export a synthetic market as a price CSV")
    p_gen.add_argument("spec")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, default=None)
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    report = run_experiment(cfg, out_dir=args.out_dir, seed=args.seed,
                            workers=args.workers)
    failed = [name for name, block in report["strategies"].items()
              if "error" in block]
    for name in failed:
        print(f"strategy {name} failed: {report['strategies'][name]['error']}",
              file=sys.stderr)
    return 3 if failed else 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    cfg["sweep"] = {"gammas": _parse_gammas(args.gamma)}
    cfg.setdefault("strategies", [{"name": "cann"}])
    report = run_experiment(cfg, out_dir=args.out_dir, seed=args.seed,
                            workers=args.workers)
    failed = [name for name, block in report["strategies"].items()
              if "error" in block]
    return 3 if failed else 0


def _cmd_gen(args) -> int:
    try:
        with open(args.spec, encoding="utf-8") as fh:
            spec = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"spec file not found: {args.spec}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec is not valid JSON: {exc}") from None
    if "market" in spec:
        mkt = spec["market"]
    elif "type" in spec:
        mkt = {"source": spec, "B": spec.get("B", 0.4), "r": spec.get("r", 0.000245)}
    else:
        raise ConfigError("gen spec needs a market section or a source type")
    seed = args.seed if args.seed is not None else spec.get("seed", 0)
    try:
        data = build_market({"market": mkt}, seed)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad market spec: {exc}") from None
    prices = prices_from_relatives(data.markets)
    write_price_csv(args.out, data.names, prices)
    print(f"wrote {prices.shape[0]} days x {prices.shape[1]} assets to {args.out}")
    return 0


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_gen(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
