"""Synthetic deals and revenue histories generated from known parameters.

Randomness comes from NumPy's ``PCG64`` bit generator seeded through
``SeedSequence``; deal features and per-asset revenue noise use separate
spawned child sequences so each stream is stable on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data_model import ContractTerm, DealRecord, PricingFeatures, Quarter, RevenueSeries
from .errors import DataError
from .pricing import FeatureArrays, ModelParams, multiplier_array

# Pre-trade revenue is split into 8 older quarters and the 4 LTM quarters;
# the older quarters stay non-negative only while LTM/LTY <= 3.
MAX_RATIO = 3.0


def _equal_mix() -> dict[ContractTerm, float]:
    return {t: 1.0 for t in ContractTerm}


@dataclass(frozen=True)
class SynthConfig:
    theta: ModelParams
    deal_count: int
    noise_sigma: float = 0.0
    ltm_range: tuple[float, float] = (10_000.0, 250_000.0)
    ratio_range: tuple[float, float] = (0.5, 1.5)
    age_range: tuple[float, float] = (0.0, 40.0)
    term_mix: Mapping[ContractTerm, float] = field(default_factory=_equal_mix)
    seed: int = 0
    trade_start: Quarter = Quarter(2016, 1)
    trade_end: Quarter = Quarter(2017, 4)
    revenue_end: Quarter = Quarter(2022, 4)
    revenue_growth: float = 0.0
    revenue_noise: float = 0.0

    def __post_init__(self):
        if self.deal_count < 1:
            raise DataError(f"deal_count must be positive, got {self.deal_count}")
        if not (self.noise_sigma >= 0 and math.isfinite(self.noise_sigma)):
            raise DataError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if not (self.revenue_noise >= 0 and math.isfinite(self.revenue_noise)):
            raise DataError(f"revenue_noise must be non-negative, got {self.revenue_noise}")
        if not self.revenue_growth > -1:
            raise DataError(f"revenue_growth must exceed -1, got {self.revenue_growth}")
        for name, lowest in (("ltm_range", 0.0), ("ratio_range", 0.0), ("age_range", None)):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise DataError(f"degenerate {name}: [{lo}, {hi}]")
            if lowest is not None and lo <= lowest:
                raise DataError(f"{name} must stay above {lowest}, got [{lo}, {hi}]")
        if self.age_range[0] < 0:
            raise DataError(f"age_range must be non-negative, got {self.age_range}")
        if self.ratio_range[1] > MAX_RATIO:
            raise DataError(f"ratio_range upper end must be at most {MAX_RATIO}")
        weights = [self.term_mix.get(t, 0.0) for t in ContractTerm]
        if any(w < 0 or not math.isfinite(w) for w in weights) or sum(weights) <= 0:
            raise DataError(f"term_mix weights must be non-negative and not all zero, got {dict(self.term_mix)}")
        if self.trade_end < self.trade_start or self.revenue_end < self.trade_end:
            raise DataError("need trade_start <= trade_end <= revenue_end")
        if not 0 <= self.seed < 2**64:
            raise DataError(f"seed must fit in 64 unsigned bits, got {self.seed}")


def _streams(seed: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    deals, revenues = np.random.SeedSequence(seed).spawn(2)
    return deals, revenues


def _draw_features(config: SynthConfig, rng: np.random.Generator):
    n = config.deal_count
    ltm = rng.uniform(*config.ltm_range, size=n)
    ratio = rng.uniform(*config.ratio_range, size=n)
    age = rng.uniform(*config.age_range, size=n)
    terms = list(ContractTerm)
    weights = np.array([config.term_mix.get(t, 0.0) for t in terms], dtype=float)
    term_idx = rng.choice(len(terms), size=n, p=weights / weights.sum())
    quarter_ord = rng.integers(config.trade_start.ordinal, config.trade_end.ordinal + 1, size=n)
    return ltm, ltm / ratio, age, [terms[i] for i in term_idx], quarter_ord


def generate_deals(config: SynthConfig) -> list[DealRecord]:
    """Deals whose traded multipliers are the model's plus Gaussian noise.

    Noisy multipliers that come out non-positive are redrawn.
    """
    deal_seq, _ = _streams(config.seed)
    rng = np.random.Generator(np.random.PCG64(deal_seq))
    ltm, lty, age, terms, quarter_ord = _draw_features(config, rng)
    n = config.deal_count
    features = [PricingFeatures(float(ltm[i]), float(lty[i]), float(age[i]), terms[i]) for i in range(n)]
    model_m = multiplier_array(config.theta, FeatureArrays.from_features(features))

    traded = model_m.copy()
    if config.noise_sigma > 0:
        noise = rng.normal(0.0, config.noise_sigma, size=n)
        bad = model_m + noise <= 0
        while bad.any():
            noise[bad] = rng.normal(0.0, config.noise_sigma, size=int(bad.sum()))
            bad = model_m + noise <= 0
        traded = model_m + noise

    width = max(5, len(str(n)))
    deals = []
    for i, f in enumerate(features):
        deals.append(
            DealRecord(
                asset_id=f"SYN{i + 1:0{width}d}",
                trade_date=Quarter.from_ordinal(int(quarter_ord[i])).first_day(),
                price=float(traded[i]) * f.ltm,
                ltm=f.ltm,
                lty=f.lty,
                age=f.age,
                term=f.term,
            )
        )
    return deals


def generate_revenue_series(
    growth: float,
    level: float,
    quarters: int,
    seed: int | np.random.SeedSequence,
    *,
    noise_sigma: float = 0.0,
    asset_id: str = "SYN",
    start: Quarter = Quarter(2014, 1),
) -> RevenueSeries:
    """Quarterly amounts ``level * (1+growth)**(i/4)`` times mean-one lognormal noise.

    ``growth`` is the annual rate and may be negative.
    """
    if not level > 0:
        raise DataError(f"level must be positive, got {level}")
    if quarters < 12:
        raise DataError(f"need at least 12 quarters, got {quarters}")
    if not growth > -1:
        raise DataError(f"growth must exceed -1, got {growth}")
    if noise_sigma < 0:
        raise DataError(f"noise_sigma must be non-negative, got {noise_sigma}")
    trend = level * (1.0 + growth) ** (np.arange(quarters) / 4.0)
    if noise_sigma > 0:
        rng = np.random.Generator(np.random.PCG64(seed))
        z = rng.standard_normal(quarters)
        trend = trend * np.exp(noise_sigma * z - 0.5 * noise_sigma**2)
    return RevenueSeries(asset_id, start, tuple(trend.tolist()))


def revenue_history(deal: DealRecord, config: SynthConfig, seed: np.random.SeedSequence) -> RevenueSeries:
    """Twelve pre-trade quarters matching the deal's LTM and LTY, then simulated revenue.

    The last four pre-trade quarters (ending at the trade quarter) each pay
    LTM/4; the eight before them share the rest of 3*LTY. After the trade the
    series continues from LTM/4 with ``config.revenue_growth`` and noise up to
    ``config.revenue_end``.
    """
    trade_q = deal.trade_quarter
    recent = deal.ltm / 4.0
    older = (3.0 * deal.lty - deal.ltm) / 8.0
    after = config.revenue_end - trade_q
    amounts = [older] * 8 + [recent] * 4
    if after > 0:
        future = generate_revenue_series(
            config.revenue_growth,
            recent,
            max(after + 1, 12),
            seed,
            noise_sigma=config.revenue_noise,
        )
        amounts.extend(future.amounts[1 : after + 1])
    return RevenueSeries(deal.asset_id, trade_q - 11, tuple(amounts))


def generate_dataset(config: SynthConfig) -> tuple[list[DealRecord], dict[str, RevenueSeries]]:
    """Deals plus a consistent revenue history for each of them."""
    deals = generate_deals(config)
    _, revenue_seq = _streams(config.seed)
    children = revenue_seq.spawn(len(deals))
    revenues = {d.asset_id: revenue_history(d, config, child) for d, child in zip(deals, children)}
    return deals, revenues
