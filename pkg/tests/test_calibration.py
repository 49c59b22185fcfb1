import dataclasses
import datetime as dt

import numpy as np
import pytest

from royalty_dcf.calibration import (
    CalibrationConfig,
    calibrate,
    calibrate_multipliers,
    mse,
    report_csv,
    residuals,
)
from royalty_dcf.data_model import ContractTerm, DealRecord, PricingFeatures
from royalty_dcf.errors import CalibrationError
from royalty_dcf.pricing import ModelParams
from royalty_dcf.synthgen import SynthConfig, generate_deals

from conftest import REFERENCE, deal


def _bisect_rate(target, n, lo=1e-9, hi=5.0):
    """Rate at which a level n-year annuity is worth ``target``, by plain bisection on the summed series."""
    value = lambda rate: sum((1 + rate) ** -i for i in range(1, n + 1))  # noqa: E731
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if value(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _with_multiplier(m, term="LOR", asset="A", ltm=1.0, ratio=1.0, age=5.0, day=1):
    return DealRecord(asset, dt.date(2017, 1, day), m * ltm, ltm, ltm / ratio, age, ContractTerm(term))


def test_residuals_zero_on_noiseless_synthetic():
    deals = generate_deals(SynthConfig(REFERENCE[3], 500, seed=4))
    res = residuals(REFERENCE[3], deals)
    assert res.shape == (500,)
    # price = multiplier * ltm is rounded once, so recovery is exact to a few ulp.
    assert np.max(np.abs(res)) <= 1e-12


def test_residual_examples():
    (res,) = residuals(REFERENCE[1], [_with_multiplier(6.0, "10Y")])
    assert res == pytest.approx(0.7839, abs=1e-4)
    assert residuals(REFERENCE[1], []).size == 0


def test_mse_examples():
    flat = ModelParams(1, r=0.2)
    assert mse(flat, [_with_multiplier(5.0)]) == 0.0
    assert mse(flat, [_with_multiplier(6.0, day=1), _with_multiplier(4.0, day=2)]) == 1.0
    pair = [_with_multiplier(6.0, "10Y", day=1), _with_multiplier(1 / 0.14, "LOR", day=2)]
    assert mse(REFERENCE[1], pair) == pytest.approx(0.3073, abs=1e-4)
    with pytest.raises(CalibrationError):
        mse(REFERENCE[1], [])


@pytest.mark.parametrize("model", [1, 2, 3])
def test_recovers_generator_parameters(model):
    deals = generate_deals(SynthConfig(REFERENCE[model], 1000, seed=model))
    result = calibrate(deals, CalibrationConfig(model))
    assert result.converged
    assert result.mse <= 1e-10
    np.testing.assert_allclose(result.params.vector(), REFERENCE[model].vector(), atol=1e-3, rtol=0)
    assert len(result.residuals) == 1000


def test_inverts_annuity_like_bisection():
    target = 5.2161
    deals = [_with_multiplier(target, "10Y", asset=f"A{i}", age=i) for i in range(20)]
    result = calibrate(deals, CalibrationConfig(1))
    oracle = _bisect_rate(target, 10)
    assert result.params.r == pytest.approx(oracle, abs=1e-9)
    assert result.params.r == pytest.approx(0.14, abs=1e-6)


def test_one_year_horizon_single_deal():
    one_year = PricingFeatures(100.0, 100.0, 0.0, ContractTerm.TEN_YEAR, horizon=1.0)
    # 1/(1+r) = 0.5 needs r = 1, outside the default r bounds.
    config = CalibrationConfig(1, bounds={"r": (0.005, 2.0)})
    result = calibrate_multipliers([0.5], [one_year], config)
    assert result.params.r == pytest.approx(1.0, abs=1e-9)
    assert _bisect_rate(0.5, 1) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("sigma, seed", [(0.1, 1), (0.5, 2), (1.0, 3), (0.5, 9)])
def test_nested_models_never_fit_worse(sigma, seed):
    deals = generate_deals(SynthConfig(REFERENCE[3], 400, noise_sigma=sigma, seed=seed))
    m1, m2, m3 = (calibrate(deals, CalibrationConfig(m)).mse for m in (1, 2, 3))
    assert m3 <= m2 <= m1


def test_dominance_when_data_come_from_simpler_model():
    deals = generate_deals(SynthConfig(REFERENCE[1], 300, noise_sigma=0.3, seed=12))
    m1, m2, m3 = (calibrate(deals, CalibrationConfig(m)).mse for m in (1, 2, 3))
    assert m3 <= m2 <= m1


def _scaled(deals, c):
    return [dataclasses.replace(d, price=d.price * c, ltm=d.ltm * c, lty=d.lty * c) for d in deals]


def test_scale_invariance():
    deals = generate_deals(SynthConfig(REFERENCE[3], 300, noise_sigma=0.4, seed=8))
    base = calibrate(deals, CalibrationConfig(3))
    exact = calibrate(_scaled(deals, 1024.0), CalibrationConfig(3))
    assert exact == base
    approx = calibrate(_scaled(deals, 3.7), CalibrationConfig(3))
    np.testing.assert_allclose(approx.params.vector(), base.params.vector(), rtol=1e-8)
    assert approx.mse == pytest.approx(base.mse, rel=1e-10)


def test_deterministic():
    deals = generate_deals(SynthConfig(REFERENCE[3], 300, noise_sigma=0.5, seed=21))
    assert calibrate(deals, CalibrationConfig(3)) == calibrate(deals, CalibrationConfig(3))


def test_never_worse_than_seed():
    deals = generate_deals(SynthConfig(REFERENCE[2], 300, noise_sigma=0.5, seed=5))
    guess = ModelParams(3, 0.2, 0.5, 0.2, 0.02)
    result = calibrate(deals, CalibrationConfig(3, initial_guess=guess))
    assert result.mse <= mse(guess, deals)


def test_budget_exhaustion_reports_not_converged():
    deals = generate_deals(SynthConfig(REFERENCE[3], 200, noise_sigma=0.5, seed=2))
    result = calibrate(deals, CalibrationConfig(3, max_iterations=2))
    assert result.converged is False
    assert result.mse < float("inf")


@pytest.mark.parametrize(
    "bounds",
    [{"r": (0.0, 0.5)}, {"r": (0.5, 0.1)}, {"a": (-1.0, 1.0)}, {"k": (-0.1, 1.0)}, {"q": (0, 1)}],
)
def test_infeasible_bounds(bounds):
    with pytest.raises(CalibrationError):
        CalibrationConfig(3, bounds=bounds)


def test_bounds_json():
    config = CalibrationConfig.from_bounds_json(2, '{"r": [0.01, 0.3], "k": [0, 0.5]}')
    assert config.bounds["r"] == (0.01, 0.3)
    assert config.bounds["a"] == (0.05, 2.0)
    with pytest.raises(CalibrationError):
        CalibrationConfig.from_bounds_json(2, '{"r": 0.1}')


def test_bounds_are_respected():
    deals = generate_deals(SynthConfig(REFERENCE[3], 200, seed=3))
    result = calibrate(deals, CalibrationConfig(3, bounds={"r": (0.1, 0.3)}))
    assert 0.1 <= result.params.r <= 0.3
    assert result.params.r == pytest.approx(0.1)


def test_needs_enough_deals():
    with pytest.raises(CalibrationError):
        calibrate([deal(asset_id=f"A{i}") for i in range(3)], CalibrationConfig(3))
    with pytest.raises(CalibrationError):
        calibrate([], CalibrationConfig(1))


def test_report_layout():
    deals = generate_deals(SynthConfig(REFERENCE[2], 100, seed=1))
    text = report_csv([calibrate(deals, CalibrationConfig(2))])
    header, row = text.strip().split("\n")
    assert header == "model,mse,r,a,k,b,iterations,converged"
    fields = row.split(",")
    assert fields[0] == "2" and fields[5] == "" and fields[7] == "true"
