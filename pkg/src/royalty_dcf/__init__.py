"""Discounted-cashflow pricing, calibration and backtesting of music royalty assets."""

from .backtest import (
    CostSchedule,
    HoldingResult,
    ReturnDecomposition,
    SummaryTable,
    annualize,
    benchmark_compare,
    hold,
    run_backtest,
    summarize,
    transaction_cost,
)
from .calibration import CalibrationConfig, CalibrationResult, calibrate, mse, residuals
from .data_model import (
    ContractTerm,
    DealRecord,
    PricingFeatures,
    Quarter,
    RevenueSeries,
    compute_ltm,
    compute_lty,
    parse_deals,
    parse_revenues,
)
from .pricing import ModelParams, Valuation, annuity_factor, curve, multiplier, price
from .synthgen import SynthConfig, generate_dataset, generate_deals, generate_revenue_series

__version__ = "0.1.0"
