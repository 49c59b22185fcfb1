"""Deal and revenue records, CSV ingestion, and derived pricing features."""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping

from .errors import DataError, InsufficientHistoryError

DEALS_HEADER = ["asset_id", "trade_date", "price", "ltm", "lty", "age_years", "term"]
REVENUES_HEADER = ["asset_id", "quarter", "amount"]

# Relative disagreement allowed between a deal row's LTM/LTY and the value
# recomputed from its revenue series.
FEATURE_TOLERANCE = 0.005

_QUARTER_RE = re.compile(r"^(\d{4})-Q([1-4])$")


class ContractTerm(Enum):
    TEN_YEAR = "10Y"
    THIRTY_YEAR = "30Y"
    LIFE_OF_RIGHTS = "LOR"

    @property
    def horizon(self) -> float:
        """Contract length in years; ``math.inf`` for life of rights."""
        return _HORIZONS[self]

    @classmethod
    def parse(cls, token: str) -> "ContractTerm":
        try:
            return cls(token.strip().upper())
        except ValueError:
            raise DataError(f"unknown term {token!r}; expected one of 10Y, 30Y, LOR", field="term") from None


_HORIZONS = {
    ContractTerm.TEN_YEAR: 10.0,
    ContractTerm.THIRTY_YEAR: 30.0,
    ContractTerm.LIFE_OF_RIGHTS: math.inf,
}


@dataclass(frozen=True, order=True)
class Quarter:
    """A calendar quarter, ``index`` in 1..4."""

    year: int
    index: int

    def __post_init__(self):
        if not 1 <= self.index <= 4:
            raise DataError(f"quarter index must be in 1..4, got {self.index}")

    @classmethod
    def parse(cls, token: str) -> "Quarter":
        m = _QUARTER_RE.match(token.strip())
        if m is None:
            raise DataError(f"unparseable quarter {token!r}; expected YYYY-Qn", field="quarter")
        return cls(int(m.group(1)), int(m.group(2)))

    @classmethod
    def from_date(cls, date: dt.date) -> "Quarter":
        return cls(date.year, (date.month - 1) // 3 + 1)

    @property
    def ordinal(self) -> int:
        return self.year * 4 + self.index - 1

    @classmethod
    def from_ordinal(cls, ordinal: int) -> "Quarter":
        return cls(ordinal // 4, ordinal % 4 + 1)

    def first_day(self) -> dt.date:
        return dt.date(self.year, 3 * self.index - 2, 1)

    def __add__(self, quarters: int) -> "Quarter":
        if not isinstance(quarters, int):
            return NotImplemented
        return Quarter.from_ordinal(self.ordinal + quarters)

    def __sub__(self, other):
        if isinstance(other, Quarter):
            return self.ordinal - other.ordinal
        if isinstance(other, int):
            return Quarter.from_ordinal(self.ordinal - other)
        return NotImplemented

    def __str__(self) -> str:
        return f"{self.year}-Q{self.index}"


@dataclass(frozen=True)
class PricingFeatures:
    """Inputs the models price from.

    ``horizon`` defaults to the contract's full term; a backtest passes the
    remaining life of a finite-term contract instead.
    """

    ltm: float
    lty: float
    age: float
    term: ContractTerm
    horizon: float | None = None
    ratio: float = field(init=False)

    def __post_init__(self):
        if not (self.ltm > 0 and math.isfinite(self.ltm)):
            raise DataError(f"ltm must be positive, got {self.ltm}", field="ltm")
        if not (self.lty > 0 and math.isfinite(self.lty)):
            raise DataError(f"lty must be positive, got {self.lty}", field="lty")
        if not (self.age >= 0 and math.isfinite(self.age)):
            raise DataError(f"age must be non-negative, got {self.age}", field="age_years")
        if self.horizon is None:
            object.__setattr__(self, "horizon", self.term.horizon)
        elif not self.horizon >= 0:
            raise DataError(f"horizon must be non-negative, got {self.horizon}")
        object.__setattr__(self, "ratio", self.ltm / self.lty)


@dataclass(frozen=True)
class DealRecord:
    asset_id: str
    trade_date: dt.date
    price: float
    ltm: float
    lty: float
    age: float
    term: ContractTerm
    multiplier: float = field(init=False)

    def __post_init__(self):
        for name in ("price", "ltm", "lty"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise DataError(f"{name} must be positive, got {value}", field=name)
        if not (self.age >= 0 and math.isfinite(self.age)):
            raise DataError(f"age_years must be non-negative, got {self.age}", field="age_years")
        object.__setattr__(self, "multiplier", self.price / self.ltm)

    @property
    def trade_quarter(self) -> Quarter:
        return Quarter.from_date(self.trade_date)

    @property
    def features(self) -> PricingFeatures:
        return PricingFeatures(self.ltm, self.lty, self.age, self.term)


@dataclass(frozen=True)
class RevenueSeries:
    """Contiguous quarterly royalty amounts starting at ``start``."""

    asset_id: str
    start: Quarter
    amounts: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "amounts", tuple(float(a) for a in self.amounts))
        for i, a in enumerate(self.amounts):
            if not (a >= 0 and math.isfinite(a)):
                raise DataError(f"{self.asset_id} {self.start + i}: amount must be non-negative, got {a}")

    @property
    def end(self) -> Quarter:
        """Last quarter covered (inclusive). Undefined for an empty series."""
        return self.start + (len(self.amounts) - 1)

    def covers(self, first: Quarter, last: Quarter) -> bool:
        return bool(self.amounts) and self.start <= first and last <= self.end

    def window(self, last: Quarter, n: int) -> tuple[float, ...]:
        """The ``n`` amounts ending at ``last`` inclusive."""
        offset = last - self.start
        if offset < n - 1 or offset >= len(self.amounts):
            raise InsufficientHistoryError(
                f"{self.asset_id}: need {n} quarters ending {last}, "
                f"series covers {self.start}..{self.end if self.amounts else '(empty)'}"
            )
        return self.amounts[offset - n + 1 : offset + 1]

    def between(self, first: Quarter, last: Quarter) -> tuple[float, ...]:
        return self.window(last, last - first + 1)


def compute_ltm(series: RevenueSeries, as_of: Quarter) -> float:
    """Trailing twelve-month revenue: the four quarters ending at ``as_of``."""
    return math.fsum(series.window(as_of, 4))


def compute_lty(series: RevenueSeries, as_of: Quarter) -> float:
    """Trailing three-year revenue, annualized (twelve quarters / 3).

    Evaluated exactly and rounded once, so a flat series gives LTY == LTM.
    """
    return float(sum(map(Fraction, series.window(as_of, 12))) / 3)


def features_at(
    series: RevenueSeries, as_of: Quarter, age: float, term: ContractTerm, horizon: float | None = None
) -> PricingFeatures:
    return PricingFeatures(compute_ltm(series, as_of), compute_lty(series, as_of), age, term, horizon)


# -- CSV ------------------------------------------------------------------


def _rows(csv_text: str, header: list[str]) -> Iterable[tuple[int, list[str]]]:
    reader = csv.reader(io.StringIO(csv_text.lstrip("\ufeff")))
    seen_header = False
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if not seen_header:
            got = [c.strip() for c in row]
            if got != header:
                raise DataError(f"expected header {','.join(header)}, got {','.join(got)}", line=line)
            seen_header = True
            continue
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, got {len(row)}", line=line)
        yield line, [c.strip() for c in row]


def _number(token: str, name: str, line: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"{name}: not a number: {token!r}", line=line, field=name) from None
    if not math.isfinite(value):
        raise DataError(f"{name}: not finite: {token!r}", line=line, field=name)
    return value


def _positive(token: str, name: str, line: int) -> float:
    value = _number(token, name, line)
    if value <= 0:
        raise DataError(f"{name} must be positive, got {token}", line=line, field=name)
    return value


def _resolve_feature(
    name: str, token: str, derived: float | None, line: int
) -> float:
    if token:
        value = _positive(token, name, line)
        if derived is not None and abs(value - derived) > FEATURE_TOLERANCE * abs(derived):
            raise DataError(
                f"{name}={value} disagrees with revenue-derived {derived:.6g} by more than "
                f"{FEATURE_TOLERANCE:.1%}",
                line=line,
                field=name,
            )
        return value
    if derived is None:
        raise DataError(f"{name} is empty and no revenue history is available to derive it", line=line, field=name)
    return derived


def parse_deals(csv_text: str, revenues: Mapping[str, RevenueSeries] | None = None) -> list[DealRecord]:
    """Parse a deals CSV into validated records, preserving row order.

    Empty ``ltm``/``lty`` fields are derived from ``revenues`` at the trade
    quarter. When both are available they must agree within 0.5% relative.
    Exact duplicate ``(asset_id, trade_date)`` pairs are rejected.
    """
    revenues = revenues or {}
    deals: list[DealRecord] = []
    seen: dict[tuple[str, dt.date], int] = {}
    for line, (asset_id, date_s, price_s, ltm_s, lty_s, age_s, term_s) in _rows(csv_text, DEALS_HEADER):
        if not asset_id:
            raise DataError("asset_id is empty", line=line, field="asset_id")
        try:
            trade_date = dt.date.fromisoformat(date_s)
        except ValueError:
            raise DataError(f"trade_date: expected YYYY-MM-DD, got {date_s!r}", line=line, field="trade_date") from None
        key = (asset_id, trade_date)
        if key in seen:
            raise DataError(f"duplicate deal {asset_id} on {trade_date} (first at line {seen[key]})", line=line)
        seen[key] = line

        price = _positive(price_s, "price", line)
        age = _number(age_s, "age_years", line)
        if age < 0:
            raise DataError(f"age_years must be non-negative, got {age_s}", line=line, field="age_years")
        try:
            term = ContractTerm.parse(term_s)
        except DataError as exc:
            raise DataError(str(exc), line=line, field="term") from None

        ltm_derived = lty_derived = None
        series = revenues.get(asset_id)
        if series is not None:
            as_of = Quarter.from_date(trade_date)
            try:
                ltm_derived = compute_ltm(series, as_of)
                lty_derived = compute_lty(series, as_of)
            except InsufficientHistoryError:
                pass
        ltm = _resolve_feature("ltm", ltm_s, ltm_derived, line)
        lty = _resolve_feature("lty", lty_s, lty_derived, line)
        try:
            deals.append(DealRecord(asset_id, trade_date, price, ltm, lty, age, term))
        except DataError as exc:
            raise DataError(str(exc), line=line, field=exc.field) from None
    return deals


def parse_revenues(csv_text: str) -> dict[str, RevenueSeries]:
    """Parse a revenues CSV into one contiguous series per asset.

    Rows may come in any order; an interior missing quarter is an error.
    """
    by_asset: dict[str, dict[Quarter, tuple[float, int]]] = {}
    for line, (asset_id, quarter_s, amount_s) in _rows(csv_text, REVENUES_HEADER):
        if not asset_id:
            raise DataError("asset_id is empty", line=line, field="asset_id")
        try:
            quarter = Quarter.parse(quarter_s)
        except DataError as exc:
            raise DataError(str(exc), line=line, field="quarter") from None
        amount = _number(amount_s, "amount", line)
        if amount < 0:
            raise DataError(f"amount must be non-negative, got {amount_s}", line=line, field="amount")
        quarters = by_asset.setdefault(asset_id, {})
        if quarter in quarters:
            raise DataError(
                f"duplicate quarter {quarter} for {asset_id} (first at line {quarters[quarter][1]})", line=line
            )
        quarters[quarter] = (amount, line)

    result: dict[str, RevenueSeries] = {}
    for asset_id, quarters in by_asset.items():
        ordered = sorted(quarters)
        start = ordered[0]
        for expected_offset, q in enumerate(ordered):
            if q - start != expected_offset:
                missing = start + expected_offset
                raise DataError(f"gap in revenues for {asset_id}: missing {missing}", field="quarter")
        result[asset_id] = RevenueSeries(asset_id, start, tuple(quarters[q][0] for q in ordered))
    return result


def _fmt(value: float) -> str:
    return repr(float(value))


def serialize_deals(deals: Iterable[DealRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DEALS_HEADER)
    for d in deals:
        writer.writerow(
            [d.asset_id, d.trade_date.isoformat(), _fmt(d.price), _fmt(d.ltm), _fmt(d.lty), _fmt(d.age), d.term.value]
        )
    return buf.getvalue()


def serialize_revenues(revenues: Mapping[str, RevenueSeries] | Iterable[RevenueSeries]) -> str:
    series_list = revenues.values() if isinstance(revenues, Mapping) else revenues
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REVENUES_HEADER)
    for s in series_list:
        for i, amount in enumerate(s.amounts):
            writer.writerow([s.asset_id, str(s.start + i), _fmt(amount)])
    return buf.getvalue()
