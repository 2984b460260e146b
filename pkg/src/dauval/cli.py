"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .pipeline import (
    CONFIG_ENV,
    MANIFEST_NAME,
    StageError,
    ValidationError,
    emit_report,
    load_config,
    run_pipeline,
    value_artifacts,
)
from .timeseries import IngestError
from .valuation import ValuationConfig

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE = 0, 1, 2

STAGE_COMMANDS = {
    "ingest": "ingest",
    "fit-tails": "fit_tails",
    "diagnose-innovation": "diagnose_innovation",
    "simulate": "simulate",
    "fit-revenue": "fit_revenue",
    "value": "value",
    "run": "value",
}


def _parser() -> argparse.ArgumentParser:
    # suppressed defaults let global flags go before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help=f"INI config file (default: ${CONFIG_ENV}, else the bundled synthetic run)")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--quiet", action="store_true", help="only print errors")
    common.add_argument("--workers", type=int, help="threads for simulation and valuation")

    parser = argparse.ArgumentParser(prog="dauval", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"dauval {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", parents=[common], help="validate and normalise the input CSVs")
    sub.add_parser("fit-tails", parents=[common], help="power-law tails for the top-N games")
    p = sub.add_parser("diagnose-innovation", parents=[common], help="Poisson release-process diagnostics")
    p.add_argument("--max-lag", type=int)
    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo DAU scenarios")
    p.add_argument("--horizon", type=int, dest="horizon_days", help="horizon in days")
    p.add_argument("--scenarios", type=int, dest="n_scenarios", help="number of scenarios")
    p.add_argument("--lambda", type=float, dest="lambda_override", help="release rate override, games/day")
    p.add_argument("--full-csv", action="store_true", dest="full_scenario_csv", default=None,
                   help="also write every trajectory as (scenario_index, day, dau)")
    sub.add_parser("fit-revenue", parents=[common], help="logistic revenue-per-DAU fits")
    p = sub.add_parser("value", parents=[common], help="DCF valuation distribution")
    p.add_argument("--scenario-set", type=Path, help="directory written by `simulate`")
    p.add_argument("--revenue-fit", type=Path, help="revenue_fit.json written by `fit-revenue`")
    p.add_argument("--margin", type=float, dest="profit_margin")
    p.add_argument("--discount", type=float, dest="discount_rate_annual")
    p.add_argument("--shares", type=int, dest="shares_outstanding")
    p.add_argument("--horizon-years", type=float, dest="horizon_years")
    p = sub.add_parser("report", parents=[common], help="markdown summary of a completed run")
    p.add_argument("--manifest", type=Path, help=f"manifest path (default: <out>/{MANIFEST_NAME})")
    sub.add_parser("run", parents=[common], help="full pipeline plus report")
    return parser


def _config_path(args) -> Path | None:
    if args.config is not None:
        return args.config
    env = os.environ.get(CONFIG_ENV)
    if env:
        return Path(env)
    from .synthetic import bundled_paths

    return bundled_paths()[0].with_name("synthetic.ini")


def _overrides(args) -> dict:
    keys = ("horizon_days", "n_scenarios", "lambda_override", "full_scenario_csv", "max_lag",
            "profit_margin", "discount_rate_annual", "shares_outstanding", "horizon_years", "workers")
    out = {k: getattr(args, k, None) for k in keys}
    out["master_seed"] = args.seed
    out["output_dir"] = args.out
    return out


def _direct_value(args) -> int:
    if args.scenario_set is None or args.revenue_fit is None:
        raise ValidationError("--scenario-set and --revenue-fit must be given together")
    for path in (args.scenario_set / "trajectories.npy", args.revenue_fit):
        if not path.is_file():
            raise ValidationError(f"file not found: {path}")
    defaults = ValuationConfig()
    try:
        vcfg = ValuationConfig(
            *(
                getattr(args, k) if getattr(args, k) is not None else getattr(defaults, k)
                for k in ("profit_margin", "discount_rate_annual", "shares_outstanding", "horizon_years")
            )
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    out = args.out or Path("dauval-out") / "value"
    try:
        result = value_artifacts(args.scenario_set, args.revenue_fit, vcfg, out, args.workers or 1)
    except Exception as exc:
        raise StageError("value", exc) from exc
    _print_valuation(result, args.quiet)
    return EXIT_OK


def _print_valuation(result: dict, quiet: bool) -> None:
    if quiet:
        return
    for label, v in result["scenarios"].items():
        lo, hi = v["ci95"]
        print(f"{label:8s} mean {v['mean']:,.0f} USD  95% [{lo:,.0f}; {hi:,.0f}]  per share {v['per_share_mean']:.4f}")


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    for name in ("config", "seed", "out", "workers"):
        setattr(args, name, getattr(args, name, None))
    args.quiet = getattr(args, "quiet", False)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s")
    try:
        if args.command == "value" and (args.scenario_set or args.revenue_fit):
            return _direct_value(args)
        cfg = load_config(_config_path(args), _overrides(args))
        if args.command == "report":
            manifest = args.manifest or Path(cfg.output_dir) / MANIFEST_NAME
            if not manifest.is_file():
                raise ValidationError(f"manifest not found: {manifest}")
            try:
                path = emit_report(manifest)
            except ValueError as exc:
                raise ValidationError(str(exc)) from None
            if not args.quiet:
                print(path)
            return EXIT_OK
        manifest = run_pipeline(cfg, until=STAGE_COMMANDS[args.command])
        out = Path(cfg.output_dir)
        if args.command == "run":
            report = emit_report(out / MANIFEST_NAME)
            if not args.quiet:
                print(report.read_text(encoding="utf-8"))
        elif not args.quiet:
            for stage, info in manifest["stages"].items():
                print(f"{stage:20s} {'cached' if info['cache_hit'] else 'ran'}  {len(info['files'])} files")
    except ValidationError as exc:
        print(f"dauval: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        print(f"dauval: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except IngestError as exc:
        print(f"dauval: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
