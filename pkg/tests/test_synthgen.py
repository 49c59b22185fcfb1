import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from royalty_dcf.calibration import CalibrationConfig, calibrate, residuals
from royalty_dcf.data_model import (
    ContractTerm,
    Quarter,
    compute_lty,
    compute_ltm,
    parse_deals,
    parse_revenues,
    serialize_deals,
    serialize_revenues,
)
from royalty_dcf.errors import DataError
from royalty_dcf.synthgen import SynthConfig, generate_dataset, generate_deals, generate_revenue_series

from conftest import REFERENCE


def test_same_seed_same_deals():
    cfg = SynthConfig(REFERENCE[3], 200, noise_sigma=0.3, seed=11)
    assert generate_deals(cfg) == generate_deals(cfg)
    other = generate_deals(SynthConfig(REFERENCE[3], 200, noise_sigma=0.3, seed=12))
    assert other != generate_deals(cfg)


def test_revenue_noise_does_not_disturb_deals():
    quiet = SynthConfig(REFERENCE[2], 50, noise_sigma=0.2, seed=3)
    noisy = SynthConfig(REFERENCE[2], 50, noise_sigma=0.2, seed=3, revenue_noise=0.2, revenue_growth=0.05)
    assert generate_dataset(quiet)[0] == generate_dataset(noisy)[0]


@pytest.mark.parametrize("model", [1, 2, 3])
def test_noiseless_deals_sit_on_the_model(model):
    deals = generate_deals(SynthConfig(REFERENCE[model], 500, seed=model))
    assert np.max(np.abs(residuals(REFERENCE[model], deals))) <= 1e-12


def test_features_respect_ranges():
    cfg = SynthConfig(REFERENCE[1], 400, seed=5, term_mix={ContractTerm.LIFE_OF_RIGHTS: 1.0})
    deals = generate_deals(cfg)
    assert {d.term for d in deals} == {ContractTerm.LIFE_OF_RIGHTS}
    for d in deals:
        assert 1e4 <= d.ltm <= 2.5e5
        assert 0.5 <= d.ltm / d.lty <= 1.5
        assert 0 <= d.age <= 40
        assert Quarter(2016, 1) <= d.trade_quarter <= Quarter(2017, 4)


def test_noise_floor():
    deals = generate_deals(SynthConfig(REFERENCE[3], 10_000, noise_sigma=0.5, seed=2024))
    fit = calibrate(deals, CalibrationConfig(3))
    assert 0.225 <= fit.mse <= 0.275


def test_flat_series_has_unit_ratio():
    series = generate_revenue_series(0.0, 100.0, 16, seed=0)
    assert set(series.amounts) == {100.0}
    last = series.end
    assert compute_ltm(series, last) / compute_lty(series, last) == 1.0


def test_declining_series_has_low_ratio():
    series = generate_revenue_series(-0.10, 100.0, 16, seed=0)
    assert compute_ltm(series, series.end) / compute_lty(series, series.end) < 1.0


def test_revenue_noise_is_mean_one():
    series = generate_revenue_series(0.0, 1.0, 200_000, seed=9, noise_sigma=0.3)
    assert np.mean(series.amounts) == pytest.approx(1.0, abs=5e-3)


def test_revenue_series_validation():
    with pytest.raises(DataError):
        generate_revenue_series(0.0, 100.0, 11, seed=0)
    with pytest.raises(DataError):
        generate_revenue_series(-1.0, 100.0, 16, seed=0)
    with pytest.raises(DataError):
        generate_revenue_series(0.0, 0.0, 16, seed=0)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"deal_count": 0},
        {"noise_sigma": -0.1},
        {"ltm_range": (5.0, 1.0)},
        {"ratio_range": (0.5, 4.0)},
        {"age_range": (-1.0, 3.0)},
        {"term_mix": {ContractTerm.LIFE_OF_RIGHTS: 0.0}},
        {"seed": -1},
    ],
)
def test_config_validation(kwargs):
    base = {"theta": REFERENCE[1], "deal_count": 10}
    base.update(kwargs)
    with pytest.raises(DataError):
        SynthConfig(**base)


@settings(max_examples=15, deadline=None)
@given(
    seed=st.integers(0, 2**32),
    model=st.sampled_from([1, 2, 3]),
    growth=st.floats(-0.3, 0.3),
    rnoise=st.floats(0, 0.5),
)
def test_dataset_round_trips_and_derives_features(seed, model, growth, rnoise):
    cfg = SynthConfig(REFERENCE[model], 25, noise_sigma=0.2, seed=seed, revenue_growth=growth, revenue_noise=rnoise)
    deals, revenues = generate_dataset(cfg)
    parsed_rev = parse_revenues(serialize_revenues(revenues))
    assert parsed_rev == revenues
    assert parse_deals(serialize_deals(deals), parsed_rev) == deals
    for d in deals:
        series = revenues[d.asset_id]
        assert series.end == Quarter(2022, 4)
        assert min(series.amounts) >= 0
        assert math.isclose(compute_ltm(series, d.trade_quarter), d.ltm, rel_tol=1e-12)
        assert math.isclose(compute_lty(series, d.trade_quarter), d.lty, rel_tol=1e-12)
