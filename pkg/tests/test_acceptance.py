"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import csv
import io
import time
from contextlib import redirect_stdout
from importlib import resources

import numpy as np
import pytest

from royalty_dcf import cli
from royalty_dcf.backtest import (
    CostSchedule,
    ReturnDecomposition,
    SummaryTable,
    annualize,
    benchmark_compare,
    hold,
    run_backtest,
    transaction_cost,
)
from royalty_dcf.calibration import CalibrationConfig, calibrate
from royalty_dcf.data_model import ContractTerm, PricingFeatures, Quarter
from royalty_dcf.errors import EmptyCohortError
from royalty_dcf.pricing import annuity_factor, annuity_factor_by_summation, multiplier
from royalty_dcf.synthgen import SynthConfig, generate_dataset, generate_deals

from conftest import REFERENCE, deal, flat_series


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail

    return emit


def test_criterion_01_annuity(report):
    start = time.perf_counter()
    worst = 0.0
    for i in range(1, 1001):
        rate = i / 1000
        for n in range(1, 31):
            oracle = annuity_factor_by_summation(rate, n)
            worst = max(worst, abs(annuity_factor(rate, n) - oracle) / oracle)
    elapsed = time.perf_counter() - start
    report(1, worst <= 1e-12 and elapsed < 1.0, f"max relative error {worst:.2e} over 30000 points in {elapsed:.2f}s")


def test_criterion_02_spot_checks(report):
    ten = multiplier(REFERENCE[1], PricingFeatures(100.0, 100.0, 10.0, ContractTerm.TEN_YEAR))
    lor = multiplier(REFERENCE[3], PricingFeatures(100.0, 100.0, 20.0, ContractTerm.LIFE_OF_RIGHTS))
    ok = abs(ten - 5.216) <= 1e-3 and abs(lor - 9.711) <= 1e-3
    report(2, ok, f"model 1 10Y multiplier {ten:.4f}, model 3 LOR multiplier {lor:.4f}")


@pytest.mark.parametrize("model", [1, 2, 3])
def test_criterion_03_recovery(report, model):
    theta = REFERENCE[model]
    deals = generate_deals(SynthConfig(theta, 1000, seed=100 + model))
    start = time.perf_counter()
    fit = calibrate(deals, CalibrationConfig(model))
    elapsed = time.perf_counter() - start
    err = max(abs(a - b) for a, b in zip(fit.params.vector(), theta.vector()))
    ok = err <= 1e-3 and fit.mse <= 1e-10 and elapsed < 10.0
    report(3, ok, f"model {model}: max parameter error {err:.1e}, mse {fit.mse:.1e}, {elapsed:.2f}s")


@pytest.mark.parametrize("sigma", [0.1, 0.5, 1.0])
def test_criterion_04_dominance(report, sigma):
    lines, ok = [], True
    for seed in range(3):
        for gen in (1, 3):
            deals = generate_deals(SynthConfig(REFERENCE[gen], 500, noise_sigma=sigma, seed=seed))
            m1, m2, m3 = (calibrate(deals, CalibrationConfig(m)).mse for m in (1, 2, 3))
            ok &= m3 <= m2 <= m1 + 1e-9
            lines.append(f"{m1:.4f}>={m2:.4f}>={m3:.4f}")
    report(4, ok, f"sigma {sigma}: " + ", ".join(lines))


def test_criterion_05_noise_floor(report):
    deals = generate_deals(SynthConfig(REFERENCE[3], 10_000, noise_sigma=0.5, seed=5))
    fit = calibrate(deals, CalibrationConfig(3))
    report(5, 0.225 <= fit.mse <= 0.275, f"mse {fit.mse:.4f} at N=10000, sigma=0.5")


def test_criterion_06_return_identity(report):
    worst, runs, holdings = 0.0, 0, 0
    for model in (1, 2, 3):
        config = SynthConfig(REFERENCE[model], 150, noise_sigma=0.3, seed=model, revenue_growth=0.03, revenue_noise=0.25)
        deals, revenues = generate_dataset(config)
        for schedule in (CostSchedule(), CostSchedule(0.0, 0.0), CostSchedule(2500.0, 0.2)):
            for year, quarters in [(y, 4) for y in range(2016, 2022)] + [(2016, 20), (2017, 20)]:
                try:
                    run = run_backtest(deals, revenues, REFERENCE[model], year, quarters, schedule)
                except EmptyCohortError:
                    continue
                runs += 1
                for h in run.results:
                    dec = h.decomposition
                    worst = max(worst, abs(dec.r - (dec.d + dec.e - dec.f)))
                    holdings += 1
    report(6, runs > 0 and worst <= 1e-12, f"max |r-(d+e-f)| {worst:.1e} over {runs} runs, {holdings} holdings")


def test_criterion_07_annualization(report):
    cases = [(0.8264, 0.128), (0.425, 0.073), (2.797, 0.306)]
    got = [annualize(total, 5) for total, _ in cases]
    ok = all(abs(g - want) <= 1e-3 for g, (_, want) in zip(got, cases))
    report(7, ok, ", ".join(f"{t} -> {g:.2%}" for g, (t, _) in zip(got, cases)))


def test_criterion_08_horizon_decay(report):
    free = CostSchedule(0.0, 0.0)
    ten = hold(deal(term="10Y"), flat_series(), REFERENCE[1], Quarter(2017, 1), 4, free).decomposition.e
    lor = hold(deal(term="LOR"), flat_series(), REFERENCE[1], Quarter(2017, 1), 4, free).decomposition.e
    ok = abs(ten - (-0.0517)) <= 2e-4 and lor == 0.0
    report(8, ok, f"10Y e {ten:.4%}, LOR e {lor!r}")


def test_criterion_09_costs(report):
    cost = transaction_cost(CostSchedule(), 105000)
    dec = ReturnDecomposition.from_amounts(100000, 105000, 12000, cost)
    ok = (dec.r, dec.d, dec.e, dec.f) == (0.081, 0.12, 0.05, 0.089)
    report(9, ok, f"r={dec.r!r} d={dec.d!r} e={dec.e!r} f={dec.f!r}")


def _curve(*args):
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = cli.main(["curves", "--params", "reference-model3", "--term", "LOR", *args])
    assert code == 0
    rows = list(csv.DictReader(buf.getvalue().splitlines()))
    return [float(r["x"]) for r in rows], [float(r["multiplier"]) for r in rows]


def test_criterion_10_curve_shapes(report):
    xs, ms = _curve("--sweep", "ratio", "--range", "0.2:2.0:0.01")
    peak = xs[int(np.argmax(ms))]
    _, ages = _curve("--sweep", "age", "--range", "0:60:0.5")
    increasing = all(b > a for a, b in zip(ages, ages[1:]))
    report(10, peak == 1.0 and increasing, f"ratio sweep peaks at {peak}, age sweep strictly increasing: {increasing}")


def test_criterion_11_benchmark_round_trip(report):
    text = resources.files("royalty_dcf").joinpath("data", "sp500_benchmark.csv").read_text()
    table = SummaryTable.from_benchmark_csv(text)
    comparison = benchmark_compare(table, text)
    worst = max(abs(row.difference) for row in comparison.rows)
    ok = len(comparison.rows) == 21 and worst == 0.0
    report(11, ok, f"{len(comparison.rows)} benchmark cells, max self-difference {worst}")
