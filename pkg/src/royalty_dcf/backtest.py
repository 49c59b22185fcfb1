"""Buy-and-hold backtests at model-implied prices.

An investor buys at the model price given information up to the entry
quarter, collects the realized quarterly revenue while holding, and sells at
the model price recomputed from the revenue known at exit. Each holding's
return splits into dividend yield ``d``, capital gain ``e`` and cost drag
``f`` with ``r = d + e - f``.

Timing convention: features at quarter ``q`` use revenue up to and including
``q``. Buying at entry quarter ``E`` and holding ``H`` quarters collects the
revenue of quarters ``E+1 .. E+H`` and sells on the features as of ``E+H``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data_model import ContractTerm, DealRecord, Quarter, RevenueSeries, features_at
from .errors import BenchmarkGridError, DataError, EmptyCohortError, PricingError
from .pricing import ModelParams, price

METRICS = ("d", "e", "f", "r")
DEFAULT_PERCENTILES = (0.10, 0.50, 0.90)
BENCHMARK_COLUMNS = ["2017", "2018", "2019", "2020", "2021", "total_5yr", "annualized_5yr"]


@dataclass(frozen=True)
class CostSchedule:
    """Platform costs: fixed buyer fee plus a commission on the sale price."""

    buyer_fee: float = 500.0
    seller_commission: float = 0.08

    def __post_init__(self):
        if not (self.buyer_fee >= 0 and math.isfinite(self.buyer_fee)):
            raise DataError(f"buyer_fee must be non-negative, got {self.buyer_fee}")
        if not 0 <= self.seller_commission < 1:
            raise DataError(f"seller_commission must be in [0, 1), got {self.seller_commission}")

    @classmethod
    def from_json(cls, text: str) -> "CostSchedule":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"costs file is not valid JSON: {exc}") from None
        if not isinstance(data, dict) or set(data) - {"buyer_fee", "seller_commission"}:
            raise DataError('costs JSON must look like {"buyer_fee": 500, "seller_commission": 0.08}')
        return cls(**{k: float(v) for k, v in data.items()})


def transaction_cost(schedule: CostSchedule, sell_price: float) -> float:
    if sell_price < 0:
        raise DataError(f"sell price must be non-negative, got {sell_price}")
    return schedule.buyer_fee + schedule.seller_commission * sell_price


@dataclass(frozen=True)
class ReturnDecomposition:
    d: float
    e: float
    f: float
    r: float

    @classmethod
    def from_amounts(cls, p_buy: float, p_sell: float, cash: float, cost: float) -> "ReturnDecomposition":
        if not p_buy > 0:
            raise PricingError(f"buy price must be positive, got {p_buy}")
        return cls(
            d=cash / p_buy,
            e=(p_sell - p_buy) / p_buy,
            f=cost / p_buy,
            r=(p_sell + cash - p_buy - cost) / p_buy,
        )


@dataclass(frozen=True)
class HoldingResult:
    asset_id: str
    term: ContractTerm
    entry: Quarter
    exit: Quarter
    p_buy: float
    p_sell: float
    cash: float
    cost: float
    decomposition: ReturnDecomposition

    @property
    def quarters_held(self) -> int:
        return self.exit - self.entry


def _remaining(horizon: float, elapsed_years: float) -> float:
    return horizon if math.isinf(horizon) else max(horizon - elapsed_years, 0.0)


def hold(
    deal: DealRecord,
    series: RevenueSeries,
    params: ModelParams,
    entry: Quarter,
    quarters_held: int,
    schedule: CostSchedule = CostSchedule(),
) -> HoldingResult:
    """Buy ``deal``'s asset at ``entry``, hold ``quarters_held`` quarters, sell.

    Age and remaining term are rolled forward from the deal's trade quarter.
    A finite-term contract that expires by the exit is sold for nothing.
    """
    if quarters_held < 1:
        raise DataError(f"quarters_held must be positive, got {quarters_held}")
    elapsed = (entry - deal.trade_quarter) / 4.0
    if elapsed < 0:
        raise DataError(f"{deal.asset_id}: entry {entry} precedes trade quarter {deal.trade_quarter}")
    horizon = _remaining(deal.term.horizon, elapsed)
    if horizon <= 0:
        raise DataError(f"{deal.asset_id}: {deal.term.value} contract has expired by {entry}")
    age = deal.age + elapsed

    p_buy = price(params, features_at(series, entry, age, deal.term, horizon)).price
    exit_q = entry + quarters_held
    cash = math.fsum(series.between(entry + 1, exit_q))

    held_years = quarters_held / 4.0
    exit_horizon = _remaining(horizon, held_years)
    if exit_horizon == 0 or math.fsum(series.window(exit_q, 4)) == 0:
        p_sell = 0.0
    else:
        p_sell = price(params, features_at(series, exit_q, age + held_years, deal.term, exit_horizon)).price

    cost = transaction_cost(schedule, p_sell)
    return HoldingResult(
        asset_id=deal.asset_id,
        term=deal.term,
        entry=entry,
        exit=exit_q,
        p_buy=p_buy,
        p_sell=p_sell,
        cash=cash,
        cost=cost,
        decomposition=ReturnDecomposition.from_amounts(p_buy, p_sell, cash, cost),
    )


@dataclass
class BacktestRun:
    entry_year: int
    quarters_held: int
    results: list[HoldingResult]
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def by_term(self) -> dict[ContractTerm, list[HoldingResult]]:
        groups: dict[ContractTerm, list[HoldingResult]] = {}
        for res in self.results:
            groups.setdefault(res.term, []).append(res)
        return groups

    def skip_report_csv(self) -> str:
        return skip_report_csv(self.skipped)


def skip_report_csv(skipped: Iterable[tuple[str, str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["asset_id", "reason"])
    writer.writerows(skipped)
    return buf.getvalue()


def _originations(deals: Iterable[DealRecord]) -> dict[str, DealRecord]:
    first: dict[str, DealRecord] = {}
    for d in deals:
        if d.asset_id not in first or d.trade_date < first[d.asset_id].trade_date:
            first[d.asset_id] = d
    return first


def run_backtest(
    deals: Sequence[DealRecord],
    revenues: Mapping[str, RevenueSeries],
    params: ModelParams,
    entry_year: int,
    quarters_held: int,
    schedule: CostSchedule = CostSchedule(),
) -> BacktestRun:
    """One holding per asset, entered in the first workable quarter of ``entry_year``.

    An asset traded several times is held under its earliest deal, which fixes
    its term start and age. Assets that cannot be held are listed in
    ``skipped`` with the reasons; results and skips are sorted by asset id.
    """
    if quarters_held < 1:
        raise DataError(f"quarters_held must be positive, got {quarters_held}")
    results: list[HoldingResult] = []
    skipped: list[tuple[str, str]] = []
    for asset_id, deal in sorted(_originations(deals).items()):
        series = revenues.get(asset_id)
        if series is None or not series.amounts:
            skipped.append((asset_id, "no revenue series"))
            continue
        reasons: list[str] = []
        for index in range(1, 5):
            try:
                results.append(hold(deal, series, params, Quarter(entry_year, index), quarters_held, schedule))
                break
            except (DataError, PricingError) as exc:
                msg = str(exc).removeprefix(f"{asset_id}: ")
                if msg not in reasons:
                    reasons.append(msg)
        else:
            skipped.append((asset_id, "; ".join(reasons)))
    if not results:
        raise EmptyCohortError(
            f"no asset could be held for {quarters_held} quarters from {entry_year}", skipped=skipped
        )
    return BacktestRun(entry_year, quarters_held, results, skipped)


def annualize(total_return: float, years: float) -> float:
    """Constant yearly rate compounding to ``total_return`` over ``years``."""
    if not total_return > -1:
        raise ValueError(f"total return must exceed -100%, got {total_return}")
    if not years > 0:
        raise ValueError(f"years must be positive, got {years}")
    return (1.0 + total_return) ** (1.0 / years) - 1.0


def percentile(values: Sequence[float], p: float) -> float:
    """Linear interpolation between closest ranks, rank ``h = (n-1)p + 1``."""
    if len(values) == 0:
        raise ValueError("percentile of an empty sample")
    return float(np.quantile(np.asarray(values, dtype=float), p, method="linear"))


def stat_name(p: float) -> str:
    return "median" if p == 0.5 else f"p{round(p * 100):d}"


@dataclass
class SummaryTable:
    """Percentile cells keyed by ``(column, metric, stat)``.

    Columns are entry years for one-year runs, or ``total_Nyr`` and
    ``annualized_Nyr`` for an ``N``-year run. Annualized columns only carry
    ``r``.
    """

    columns: list[str] = field(default_factory=list)
    stats: tuple[str, ...] = tuple(stat_name(p) for p in DEFAULT_PERCENTILES)
    cells: dict[tuple[str, str, str], float] = field(default_factory=dict)

    def get(self, column: str, metric: str, stat: str) -> float | None:
        return self.cells.get((column, metric, stat))

    def merge(self, other: "SummaryTable") -> "SummaryTable":
        clash = set(self.columns) & set(other.columns)
        if clash:
            raise ValueError(f"columns present in both tables: {', '.join(sorted(clash))}")
        stats = self.stats + tuple(s for s in other.stats if s not in self.stats)
        return SummaryTable(self.columns + other.columns, stats, {**self.cells, **other.cells})

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", *self.columns])
        for metric in METRICS:
            for stat in self.stats:
                row = [self.get(c, metric, stat) for c in self.columns]
                writer.writerow([f"{metric}_{stat}", *("" if v is None else repr(v) for v in row)])
        return buf.getvalue()

    def to_text(self, title: str = "") -> str:
        labels = {"d": "d - Median Dividends", "e": "e - Median Capital Gains", "f": "f - Median TC"}
        rows: list[tuple[str, str, str]] = [(labels[m], m, "median") for m in ("d", "e", "f") if "median" in self.stats]
        for stat in sorted(self.stats, key=lambda s: (s != "median", -int(s[1:]) if s != "median" else 0)):
            name = "r - Median Return" if stat == "median" else f"{int(stat[1:])}th Percentile Return"
            rows.append((name, "r", stat))
        headers = ["Metric (%)", *self.columns]
        body = [[name, *(_pct(self.get(c, m, s)) for c in self.columns)] for name, m, s in rows]
        widths = [max(len(str(r[i])) for r in [headers, *body]) for i in range(len(headers))]
        fmt = lambda row: "  ".join(  # noqa: E731
            str(v).ljust(w) if i == 0 else str(v).rjust(w) for i, (v, w) in enumerate(zip(row, widths))
        )
        rule = "-" * len(fmt(headers))
        lines = ([title] if title else []) + [rule, fmt(headers), rule]
        for i, row in enumerate(body):
            if i == 3:
                lines.append(rule)
            lines.append(fmt(row))
        lines.append(rule)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_benchmark_csv(cls, text: str) -> "SummaryTable":
        """Read a benchmark return table (``metric`` rows median/p10/p90)."""
        columns, values = _read_benchmark(text)
        cells = {(col, "r", stat): v for (stat, col), v in values.items()}
        stats = tuple(dict.fromkeys(stat for stat, _ in values))
        return cls(columns, stats, cells)


def _pct(value: float | None) -> str:
    return "" if value is None else f"{100 * value:.1f}%"


def summarize(
    results: Sequence[HoldingResult],
    percentiles: Sequence[float] = DEFAULT_PERCENTILES,
    *,
    label: str | None = None,
) -> SummaryTable:
    """Percentiles of d, e, f and r across holdings.

    A one-year run yields one column named after the entry year (or
    ``label``). Longer runs yield a ``total_Nyr`` column plus an
    ``annualized_Nyr`` column of annualized return percentiles.
    """
    if not results:
        raise ValueError("cannot summarize an empty result list")
    held = {r.quarters_held for r in results}
    if len(held) != 1:
        raise ValueError(f"results mix holding periods: {sorted(held)}")
    years = held.pop() / 4.0
    stats = tuple(stat_name(p) for p in percentiles)
    samples = {m: [getattr(r.decomposition, m) for r in results] for m in METRICS}

    if years == 1:
        total_col = label or str(results[0].entry.year)
        annual_col = None
    else:
        span = f"{years:g}yr"
        total_col = label or f"total_{span}"
        annual_col = f"annualized_{span}"

    cells: dict[tuple[str, str, str], float] = {}
    for metric, values in samples.items():
        for p, stat in zip(percentiles, stats):
            cells[(total_col, metric, stat)] = percentile(values, p)
    columns = [total_col]
    if annual_col is not None:
        for stat in stats:
            cells[(annual_col, "r", stat)] = annualize(cells[(total_col, "r", stat)], years)
        columns.append(annual_col)
    return SummaryTable(columns, stats, cells)


def _read_benchmark(text: str) -> tuple[list[str], dict[tuple[str, str], float]]:
    reader = csv.reader(io.StringIO(text.lstrip("\ufeff")))
    rows = [row for row in reader if row and any(c.strip() for c in row)]
    if not rows or rows[0][0].strip() != "metric":
        raise DataError("benchmark CSV must start with a 'metric,...' header", line=1)
    columns = [c.strip() for c in rows[0][1:]]
    values: dict[tuple[str, str], float] = {}
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(columns) + 1:
            raise DataError(f"expected {len(columns) + 1} fields, got {len(row)}", line=line)
        stat = row[0].strip()
        for col, cell in zip(columns, row[1:]):
            cell = cell.strip()
            if not cell:
                continue
            try:
                values[(stat, col)] = float(cell)
            except ValueError:
                raise DataError(f"{stat}/{col}: not a number: {cell!r}", line=line) from None
    return columns, values


@dataclass(frozen=True)
class ComparisonRow:
    column: str
    stat: str
    asset: float
    benchmark: float

    @property
    def difference(self) -> float:
        return self.asset - self.benchmark


@dataclass
class Comparison:
    rows: list[ComparisonRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["column", "stat", "asset", "benchmark", "difference"])
        for r in self.rows:
            writer.writerow([r.column, r.stat, repr(r.asset), repr(r.benchmark), repr(r.difference)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'column':<16}{'stat':<8}{'asset':>10}{'benchmark':>11}{'diff (pp)':>11}"]
        for r in self.rows:
            lines.append(
                f"{r.column:<16}{r.stat:<8}{_pct(r.asset):>10}{_pct(r.benchmark):>11}{100 * r.difference:>+11.1f}"
            )
        return "\n".join(lines) + "\n"


def benchmark_compare(summary: SummaryTable, benchmark_csv: str) -> Comparison:
    """Total-return percentiles of ``summary`` next to a benchmark table.

    Every return cell the summary has must exist in the benchmark; missing
    ones are all reported together as ``stat@column``.
    """
    _, values = _read_benchmark(benchmark_csv)
    rows: list[ComparisonRow] = []
    missing: list[str] = []
    for column in summary.columns:
        for stat in summary.stats:
            asset = summary.get(column, "r", stat)
            if asset is None:
                continue
            bench = values.get((stat, column))
            if bench is None:
                missing.append(f"{stat}@{column}")
                continue
            rows.append(ComparisonRow(column, stat, asset, bench))
    if missing:
        raise BenchmarkGridError(missing)
    return Comparison(rows)
