import datetime as dt

import pytest

from royalty_dcf.data_model import ContractTerm, DealRecord, Quarter, RevenueSeries
from royalty_dcf.pricing import ModelParams

# Fitted parameters reported for the three models.
REFERENCE = {
    1: ModelParams(1, r=0.14),
    2: ModelParams(2, r=0.076, a=0.69, k=0.071),
    3: ModelParams(3, r=0.083, a=0.61, k=0.058, b=0.0098),
}


@pytest.fixture
def reference():
    return dict(REFERENCE)


def flat_series(asset_id="A1", start=Quarter(2014, 1), amount=25.0, quarters=40):
    return RevenueSeries(asset_id, start, (amount,) * quarters)


def deal(asset_id="A1", date=dt.date(2017, 1, 15), price=500.0, ltm=100.0, lty=100.0, age=10.0, term="LOR"):
    return DealRecord(asset_id, date, price, ltm, lty, age, ContractTerm(term))
