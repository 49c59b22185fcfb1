"""Discounted-cashflow multipliers for royalty assets.

A contract of ``n`` years paying an expected yearly cashflow ``C`` at the end
of each year, discounted at ``R``, is worth ``C * A(R, n)`` where ``A`` is the
annuity factor. Dividing by LTM gives the multiplier the market quotes.

The three models differ only in how ``C`` and ``R`` depend on the features:

======  ===========================  ==============================
model   cashflow level ``C / LTM``   discount rate ``R``
======  ===========================  ==============================
1       1                            r
2       a                            r + k * |LTM/LTY - 1|
3       a + b * age                  r + k * |LTM/LTY - 1|
======  ===========================  ==============================

Life-of-rights contracts are priced as perpetuities (``A = 1/R``).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Any, Mapping

import numpy as np

from .data_model import ContractTerm, PricingFeatures
from .errors import DivergentPerpetuityError, InvalidParametersError, PricingError

PARAMETER_NAMES = ("r", "a", "k", "b")
FREE_PARAMETERS = {1: ("r",), 2: ("r", "a", "k"), 3: ("r", "a", "k", "b")}
FIXED_VALUES = {"a": 1.0, "k": 0.0, "b": 0.0}


@dataclass(frozen=True)
class ModelParams:
    """Parameters of one pricing model.

    Fields a model does not use must sit at their fixed values
    (``a=1, k=0, b=0``), which is what makes the models nest exactly.
    """

    model: int
    r: float
    a: float = 1.0
    k: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if isinstance(self.model, bool) or not isinstance(self.model, int) or self.model not in FREE_PARAMETERS:
            raise InvalidParametersError(f"model must be 1, 2 or 3, got {self.model!r}")
        for name in PARAMETER_NAMES:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise InvalidParametersError(f"{name} must be a finite number, got {value!r}")
            object.__setattr__(self, name, float(value))
        free = FREE_PARAMETERS[self.model]
        for name, fixed in FIXED_VALUES.items():
            if name not in free and getattr(self, name) != fixed:
                raise InvalidParametersError(f"model {self.model} fixes {name}={fixed}, got {getattr(self, name)}")
        if self.r <= -1:
            raise InvalidParametersError(f"r must exceed -1, got {self.r}")
        if self.k < 0:
            raise InvalidParametersError(f"k must be non-negative, got {self.k}")
        if self.b < 0:
            raise InvalidParametersError(f"b must be non-negative, got {self.b}")

    @property
    def free_names(self) -> tuple[str, ...]:
        return FREE_PARAMETERS[self.model]

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.free_names], dtype=float)

    @classmethod
    def from_vector(cls, model: int, x) -> "ModelParams":
        return cls(model, **{n: float(v) for n, v in zip(FREE_PARAMETERS[model], x)})

    def embed(self, model: int) -> "ModelParams":
        """The same pricing function expressed as a richer model."""
        if model < self.model:
            raise InvalidParametersError(f"cannot embed model {self.model} into model {model}")
        return ModelParams(model, self.r, self.a, self.k, self.b)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"model": self.model}
        out.update({n: getattr(self, n) for n in self.free_names})
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelParams":
        unknown = set(data) - {"model", *PARAMETER_NAMES}
        if unknown:
            raise InvalidParametersError(f"unknown parameter fields: {', '.join(sorted(unknown))}")
        if "model" not in data or "r" not in data:
            raise InvalidParametersError("params need at least 'model' and 'r'")
        return cls(**{k: v for k, v in data.items()})

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidParametersError(f"params file is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise InvalidParametersError("params JSON must be an object")
        return cls.from_dict(data)


@dataclass(frozen=True)
class Valuation:
    price: float
    multiplier: float
    discount_rate: float
    expected_cashflow: float
    horizon: float

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        if math.isinf(self.horizon):
            d["horizon"] = None
        return d


def discount_rate(params: ModelParams, ratio: float) -> float:
    if not ratio > 0:
        raise PricingError(f"LTM/LTY ratio must be positive, got {ratio}")
    return params.r + params.k * abs(ratio - 1.0)


def _cashflow_level(params: ModelParams, age: float) -> float:
    level = params.a + params.b * age
    if level <= 0:
        raise InvalidParametersError(
            f"expected cashflow level a + b*age = {level} is not positive (a={params.a}, b={params.b}, age={age})"
        )
    return level


def expected_cashflow(params: ModelParams, ltm: float, age: float) -> float:
    """Expected yearly cashflow; LTM scaled by the model's cashflow level."""
    if not ltm > 0:
        raise PricingError(f"ltm must be positive, got {ltm}")
    if not age >= 0:
        raise PricingError(f"age must be non-negative, got {age}")
    return ltm * _cashflow_level(params, age)


def annuity_factor(rate: float, horizon: float) -> float:
    """Present value of 1 per year for ``horizon`` years, paid at year ends.

    ``horizon`` may be fractional (a part-elapsed term contract) or
    ``math.inf`` for a perpetuity. Zero horizon is worth nothing.
    """
    if not rate > -1:
        raise PricingError(f"discount rate must exceed -1, got {rate}")
    if not horizon >= 0:
        raise PricingError(f"horizon must be non-negative, got {horizon}")
    if math.isinf(horizon):
        if rate <= 0:
            raise DivergentPerpetuityError(f"perpetuity diverges at discount rate {rate}")
        return 1.0 / rate
    if horizon == 0:
        return 0.0
    if rate == 0:
        return float(horizon)
    return -math.expm1(-horizon * math.log1p(rate)) / rate


def annuity_factor_by_summation(rate: float, n: int) -> float:
    """Term-by-term evaluation of the discount sum for an integer horizon.

    Kept deliberately naive; it is the reference the closed form is checked
    against.
    """
    if n < 0 or int(n) != n:
        raise PricingError(f"summation needs a non-negative integer horizon, got {n}")
    return math.fsum(1.0 / (1.0 + rate) ** i for i in range(1, int(n) + 1))


def _multiplier(params: ModelParams, ratio: float, age: float, horizon: float) -> tuple[float, float, float]:
    rate = discount_rate(params, ratio)
    level = _cashflow_level(params, age)
    return level * annuity_factor(rate, horizon), rate, level


def multiplier(params: ModelParams, features: PricingFeatures) -> float:
    return _multiplier(params, features.ratio, features.age, features.horizon)[0]


def price(params: ModelParams, features: PricingFeatures) -> Valuation:
    m, rate, level = _multiplier(params, features.ratio, features.age, features.horizon)
    return Valuation(
        price=m * features.ltm,
        multiplier=m,
        discount_rate=rate,
        expected_cashflow=features.ltm * level,
        horizon=features.horizon,
    )


def sweep_grid(lo: float, hi: float, step: float) -> list[float]:
    """Evenly spaced points ``lo, lo+step, ...`` up to ``hi`` inclusive."""
    if not (math.isfinite(lo) and math.isfinite(hi) and step > 0 and math.isfinite(step)):
        raise PricingError(f"invalid sweep {lo}:{hi}:{step}")
    if hi < lo:
        raise PricingError(f"sweep range is inverted: {lo} > {hi}")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 12) for i in range(count)]


def curve(
    params: ModelParams,
    term: ContractTerm,
    sweep: str,
    lo: float,
    hi: float,
    step: float,
    *,
    ratio: float = 1.0,
    age: float = 10.0,
) -> list[tuple[float, float]]:
    """Model multiplier over a grid of LTM/LTY ratios or catalog ages.

    The feature not being swept is held at ``ratio`` or ``age``.
    """
    xs = sweep_grid(lo, hi, step)
    if sweep == "ratio":
        if lo <= 0:
            raise PricingError("ratio sweep must start above zero")
        return [(x, _multiplier(params, x, age, term.horizon)[0]) for x in xs]
    if sweep == "age":
        if lo < 0:
            raise PricingError("age sweep must start at or above zero")
        return [(x, _multiplier(params, ratio, x, term.horizon)[0]) for x in xs]
    raise PricingError(f"sweep must be 'ratio' or 'age', got {sweep!r}")


# -- vectorized evaluation used by calibration -----------------------------


def annuity_factor_array(rate: np.ndarray, horizon: np.ndarray) -> np.ndarray:
    """Elementwise :func:`annuity_factor` without error checks.

    Relies on ``-expm1(-inf) == 1`` so infinite horizons reduce to ``1/R``.
    Entries with ``R == 0`` return the horizon.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(rate == 0.0, 1.0, rate)
        out = -np.expm1(-horizon * np.log1p(safe)) / safe
    out = np.where(rate == 0.0, horizon, out)
    return np.where(horizon == 0.0, 0.0, out)


def _annuity_derivative_array(rate: np.ndarray, horizon: np.ndarray, factor: np.ndarray) -> np.ndarray:
    # d/dR of (1 - (1+R)^-n) / R  =  (n (1+R)^-(n+1) - A) / R
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        finite_n = np.where(np.isinf(horizon), 0.0, horizon)
        tail = finite_n * np.exp(-(finite_n + 1.0) * np.log1p(rate))
        safe = np.where(rate == 0.0, 1.0, rate)
        out = (tail - factor) / safe
    out = np.where(rate == 0.0, -horizon * (horizon + 1.0) / 2.0, out)
    return np.where(horizon == 0.0, 0.0, out)


@dataclass(frozen=True)
class FeatureArrays:
    """Column view of many deals' features for vectorized pricing."""

    ratio: np.ndarray
    age: np.ndarray
    horizon: np.ndarray

    @classmethod
    def from_features(cls, features) -> "FeatureArrays":
        feats = list(features)
        return cls(
            ratio=np.array([f.ratio for f in feats], dtype=float),
            age=np.array([f.age for f in feats], dtype=float),
            horizon=np.array([f.horizon for f in feats], dtype=float),
        )

    def __len__(self) -> int:
        return len(self.ratio)


def multiplier_array(params: ModelParams, x: FeatureArrays) -> np.ndarray:
    """Model multipliers for every row of ``x``.

    Raises if any row is unpriceable (non-positive cashflow level or a
    perpetuity at a non-positive rate).
    """
    rate = params.r + params.k * np.abs(x.ratio - 1.0)
    level = params.a + params.b * x.age
    if np.any(level <= 0):
        raise InvalidParametersError(f"non-positive cashflow level for {params}")
    if np.any(rate <= -1) or np.any(np.isinf(x.horizon) & (rate <= 0)):
        raise DivergentPerpetuityError(f"discount rate not admissible for {params}")
    return level * annuity_factor_array(rate, x.horizon)


def multiplier_jacobian(params: ModelParams, x: FeatureArrays) -> np.ndarray:
    """Partial derivatives of :func:`multiplier_array` w.r.t. the free parameters.

    Shape ``(len(x), number of free parameters)``, columns in
    ``params.free_names`` order.
    """
    spread = np.abs(x.ratio - 1.0)
    rate = params.r + params.k * spread
    level = params.a + params.b * x.age
    factor = annuity_factor_array(rate, x.horizon)
    d_rate = level * _annuity_derivative_array(rate, x.horizon, factor)
    columns = {"r": d_rate, "a": factor, "k": d_rate * spread, "b": x.age * factor}
    return np.column_stack([columns[n] for n in params.free_names])
