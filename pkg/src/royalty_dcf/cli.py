"""Command-line entry point.

Exit codes: 0 success, 1 input error, 2 calibration did not converge,
3 pricing infeasible, 4 empty backtest cohort, 64 usage error.

Every command that writes files also writes a JSON manifest next to them
recording the argument vector and SHA-256 digests of inputs and outputs;
``royalty-dcf replay MANIFEST`` re-runs it and checks the outputs match.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

from . import __version__
from .backtest import (
    CostSchedule,
    SummaryTable,
    benchmark_compare,
    run_backtest,
    skip_report_csv,
    summarize,
)
from .calibration import CalibrationConfig, calibrate, report_csv
from .data_model import ContractTerm, PricingFeatures, Quarter, parse_deals, parse_revenues, serialize_deals, serialize_revenues
from .errors import (
    BenchmarkGridError,
    CalibrationError,
    DataError,
    EmptyCohortError,
    InvalidParametersError,
    PricingError,
)
from .pricing import ModelParams, curve, price
from .synthgen import SynthConfig, generate_dataset

log = logging.getLogger("royalty_dcf")

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_PRICING, EXIT_EMPTY_COHORT, EXIT_USAGE = 0, 1, 2, 3, 4, 64

HORIZONS = {"1y": 4, "5y": 20}
BUNDLED_PARAMS = ("reference-model1", "reference-model2", "reference-model3")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None


def _bundled(name: str) -> str:
    return resources.files("royalty_dcf").joinpath("data", name).read_text(encoding="utf-8")


def _load_params(spec: str) -> ModelParams:
    text = _bundled(spec.replace("-", "_") + ".json") if spec in BUNDLED_PARAMS else _read(spec)
    try:
        return ModelParams.from_json(text)
    except InvalidParametersError as exc:
        raise DataError(f"{spec}: {exc}") from None


def _digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write(path: str | Path, text: str) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")
    return str(path)


def _write_manifest(path: str | Path, args: argparse.Namespace, argv: Sequence[str], inputs, outputs) -> None:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "tool": "royalty-dcf",
        "version": __version__,
        "command": args.command,
        "argv": list(argv),
        "config": config,
        "seed": config.get("seed"),
        "inputs": {p: _digest(p) for p in inputs if p and Path(p).is_file()},
        "outputs": {p: _digest(p) for p in outputs},
    }
    _write(path, json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


# -- commands --------------------------------------------------------------


def cmd_calibrate(args, argv) -> int:
    revenues = parse_revenues(_read(args.revenues)) if args.revenues else None
    deals = parse_deals(_read(args.deals), revenues)
    if not deals:
        raise DataError(f"{args.deals} contains no deals")
    kwargs = {"objective_tolerance": args.tolerance, "max_iterations": args.max_iterations}
    if args.bounds:
        config = CalibrationConfig.from_bounds_json(args.model, _read(args.bounds), **kwargs)
    else:
        config = CalibrationConfig(args.model, **kwargs)
    result = calibrate(deals, config)
    report = report_csv([result])
    if args.out:
        report_path = args.report or str(Path(args.out).with_suffix(".report.csv"))
        outputs = [_write(args.out, result.params.to_json()), _write(report_path, report)]
        _write_manifest(args.out + ".manifest.json", args, argv, [args.deals, args.revenues, args.bounds], outputs)
    else:
        sys.stdout.write(result.params.to_json())
        if args.report:
            _write(args.report, report)
    sys.stderr.write(report)
    if not result.converged:
        log.warning("calibration stopped after %d evaluations without converging", result.iterations)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_price(args, argv) -> int:
    params = _load_params(args.params)
    features = PricingFeatures(args.ltm, args.lty, args.age, ContractTerm.parse(args.term))
    valuation = price(params, features)
    sys.stdout.write(json.dumps(valuation.to_dict(), indent=2) + "\n")
    return EXIT_OK


def _backtest_runs(args) -> list[tuple[int, int]]:
    years = args.entry_year
    if args.horizon == "all":
        if len(years) != 1:
            raise UsageError("--horizon all takes exactly one --entry-year")
        return [(years[0] + i, 4) for i in range(5)] + [(years[0], 20)]
    if args.horizon == "5y" and len(years) != 1:
        raise UsageError("--horizon 5y takes exactly one --entry-year")
    return [(y, HORIZONS[args.horizon]) for y in years]


def cmd_backtest(args, argv) -> int:
    runs_wanted = _backtest_runs(args)
    params = _load_params(args.params)
    revenues = parse_revenues(_read(args.revenues))
    deals = parse_deals(_read(args.deals), revenues)
    schedule = CostSchedule.from_json(_read(args.costs)) if args.costs else CostSchedule()
    benchmark = _read(args.benchmark) if args.benchmark else None
    out_dir = Path(args.out_dir)

    tables: dict[ContractTerm, SummaryTable] = {}
    skipped: list[tuple[str, str]] = []
    empty: list[str] = []
    for year, quarters in runs_wanted:
        tag = f"{year}/{quarters // 4}y"
        try:
            run = run_backtest(deals, revenues, params, year, quarters, schedule)
        except EmptyCohortError as exc:
            skipped.extend((a, f"{tag}: {reason}") for a, reason in exc.skipped)
            empty.append(tag)
            continue
        skipped.extend((a, f"{tag}: {reason}") for a, reason in run.skipped)
        for term, results in run.by_term().items():
            table = summarize(results)
            tables[term] = tables[term].merge(table) if term in tables else table

    outputs = [_write(out_dir / "skipped.csv", skip_report_csv(skipped))]
    for term in ContractTerm:
        if term not in tables:
            continue
        table = tables[term]
        outputs.append(_write(out_dir / f"summary_{term.value}.csv", table.to_csv()))
        text = table.to_text(f"{term.value} assets")
        outputs.append(_write(out_dir / f"summary_{term.value}.txt", text))
        sys.stdout.write(text + "\n")
        if benchmark is not None:
            comparison = benchmark_compare(table, benchmark)
            outputs.append(_write(out_dir / f"comparison_{term.value}.csv", comparison.to_csv()))
            outputs.append(_write(out_dir / f"comparison_{term.value}.txt", comparison.to_text()))
    _write_manifest(
        out_dir / "manifest.json", args, argv, [args.params, args.deals, args.revenues, args.costs, args.benchmark], outputs
    )
    if empty:
        log.error("no eligible assets for %s; see %s", ", ".join(empty), out_dir / "skipped.csv")
        return EXIT_EMPTY_COHORT
    return EXIT_OK


def _parse_range(text: str) -> tuple[float, float, float]:
    try:
        lo, hi, step = (float(p) for p in text.split(":"))
    except ValueError:
        raise UsageError(f"--range must look like LO:HI:STEP, got {text!r}") from None
    if not all(math.isfinite(v) for v in (lo, hi, step)) or hi < lo or step <= 0:
        raise UsageError(f"--range {text!r} is inverted or has a non-positive step")
    return lo, hi, step


def cmd_curves(args, argv) -> int:
    lo, hi, step = _parse_range(args.range)
    params = _load_params(args.params)
    points = curve(params, ContractTerm.parse(args.term), args.sweep, lo, hi, step, ratio=args.ratio, age=args.age)
    text = "x,multiplier\n" + "".join(f"{x!r},{m!r}\n" for x, m in points)
    if args.out:
        _write(args.out, text)
        _write_manifest(args.out + ".manifest.json", args, argv, [args.params], [args.out])
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_term_mix(text: str) -> dict[ContractTerm, float]:
    mix = {}
    for part in text.split(","):
        name, _, weight = part.partition("=")
        try:
            mix[ContractTerm.parse(name)] = float(weight)
        except (DataError, ValueError):
            raise UsageError(f"--term-mix must look like 10Y=1,30Y=1,LOR=1, got {text!r}") from None
    return mix


def cmd_synth(args, argv) -> int:
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    if args.noise < 0:
        raise UsageError("--noise must be non-negative")
    if not 0 <= args.seed < 2**64:
        raise UsageError("--seed must fit in 64 unsigned bits")
    theta = _load_params(args.theta)
    extra = {}
    if args.term_mix:
        extra["term_mix"] = _parse_term_mix(args.term_mix)
    config = SynthConfig(
        theta=theta,
        deal_count=args.n,
        noise_sigma=args.noise,
        seed=args.seed,
        trade_start=Quarter.parse(args.trade_start),
        trade_end=Quarter.parse(args.trade_end),
        revenue_end=Quarter.parse(args.revenue_end),
        revenue_growth=args.growth,
        revenue_noise=args.revenue_noise,
        **extra,
    )
    deals, revenues = generate_dataset(config)
    outputs = [_write(args.out_deals, serialize_deals(deals)), _write(args.out_revenues, serialize_revenues(revenues))]
    _write_manifest(args.out_deals + ".manifest.json", args, argv, [args.theta], outputs)
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    manifest = json.loads(_read(args.manifest))
    code = main(manifest["argv"])
    mismatched = [p for p, digest in manifest["outputs"].items() if not Path(p).is_file() or _digest(p) != digest]
    if mismatched:
        log.error("replay differs from manifest for: %s", ", ".join(mismatched))
        return EXIT_INPUT
    return code


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="royalty-dcf",
        description="Price, calibrate and backtest music royalty assets with discounted-cashflow models.",
        epilog=(
            "deals.csv: asset_id,trade_date,price,ltm,lty,age_years,term (term in 10Y|30Y|LOR; "
            "ltm/lty may be empty when --revenues is given). "
            "revenues.csv: asset_id,quarter,amount (quarter as YYYY-Qn). "
            'params JSON: {"model": 3, "r": 0.083, "a": 0.61, "k": 0.058, "b": 0.0098}; '
            f"--params also accepts the bundled names {', '.join(BUNDLED_PARAMS)}."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit a model to traded multipliers by least squares")
    p.add_argument("--model", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--deals", required=True, help="deals CSV")
    p.add_argument("--revenues", help="revenues CSV used to fill empty ltm/lty fields")
    p.add_argument("--bounds", help='JSON {"r": [lo, hi], "a": [...], "k": [...], "b": [...]}')
    p.add_argument("--out", help="params JSON output (default: standard output)")
    p.add_argument("--report", help="report CSV (default: next to --out with .report.csv)")
    p.add_argument("--tolerance", type=float, default=1e-10, help="objective tolerance")
    p.add_argument("--max-iterations", type=int, default=10000)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("price", help="value one asset and print JSON")
    p.add_argument("--params", required=True)
    p.add_argument("--ltm", type=float, required=True)
    p.add_argument("--lty", type=float, required=True)
    p.add_argument("--age", type=float, required=True)
    p.add_argument("--term", required=True, choices=[t.value for t in ContractTerm])
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("backtest", help="buy-and-hold backtest at model prices")
    p.add_argument("--params", required=True)
    p.add_argument("--deals", required=True)
    p.add_argument("--revenues", required=True)
    p.add_argument("--entry-year", type=int, action="append", required=True, help="repeatable for 1y runs")
    p.add_argument("--horizon", choices=("1y", "5y", "all"), required=True,
                   help="'all' runs five 1y cohorts from the entry year plus the 5y run")
    p.add_argument("--costs", help='JSON {"buyer_fee": 500, "seller_commission": 0.08}')
    p.add_argument("--benchmark", help="benchmark CSV metric,2017,...,total_5yr,annualized_5yr")
    p.add_argument("--out-dir", default="backtest_out")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("curves", help="model multiplier over a ratio or age sweep, as CSV")
    p.add_argument("--params", required=True)
    p.add_argument("--term", required=True, choices=[t.value for t in ContractTerm])
    p.add_argument("--sweep", required=True, choices=("ratio", "age"))
    p.add_argument("--range", required=True, metavar="LO:HI:STEP")
    p.add_argument("--ratio", type=float, default=1.0, help="LTM/LTY held fixed in an age sweep")
    p.add_argument("--age", type=float, default=10.0, help="age held fixed in a ratio sweep")
    p.add_argument("--out")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("synth", help="write synthetic deals and revenues generated from known parameters")
    p.add_argument("--theta", required=True, help="params JSON of the generating model")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.0, help="std of additive multiplier noise")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-deals", required=True)
    p.add_argument("--out-revenues", required=True)
    p.add_argument("--growth", type=float, default=0.0, help="annual revenue growth after the trade")
    p.add_argument("--revenue-noise", type=float, default=0.0, help="lognormal sigma of quarterly revenue")
    p.add_argument("--term-mix", help="weights like 10Y=1,30Y=1,LOR=1")
    p.add_argument("--trade-start", default="2016-Q1")
    p.add_argument("--trade-end", default="2017-Q4")
    p.add_argument("--revenue-end", default="2022-Q4")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("replay", help="re-run a manifest and verify its outputs")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"royalty-dcf: error: {exc}\n")
        return EXIT_USAGE
    except BenchmarkGridError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except PricingError as exc:
        log.error("pricing infeasible: %s", exc)
        return EXIT_PRICING
    except (DataError, CalibrationError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
