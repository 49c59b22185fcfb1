"""Least-squares calibration of model parameters to traded multipliers.

The objective is the mean squared difference between traded and model
multipliers over all deals, each deal priced at its own contract horizon.
Richer models are seeded with the embedded optimum of the next simpler model
so the fitted error never increases with model complexity.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from .data_model import DealRecord, PricingFeatures
from .errors import CalibrationError, PricingError
from .pricing import (
    FREE_PARAMETERS,
    PARAMETER_NAMES,
    FeatureArrays,
    ModelParams,
    multiplier_array,
    multiplier_jacobian,
)

DEFAULT_BOUNDS: dict[str, tuple[float, float]] = {
    "r": (0.005, 0.60),
    "a": (0.05, 2.0),
    "k": (0.0, 1.0),
    "b": (0.0, 0.10),
}
DEFAULT_SEED = {"r": 0.10, "a": 1.0, "k": 0.05, "b": 0.005}

# Residual magnitude substituted when a trial point cannot be priced.
_INFEASIBLE_RESIDUAL = 1e6
_INNER_TOL = 1e-12

REPORT_HEADER = ["model", "mse", "r", "a", "k", "b", "iterations", "converged"]


@dataclass(frozen=True)
class CalibrationConfig:
    model: int
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    initial_guess: ModelParams | None = None
    objective_tolerance: float = 1e-10
    max_iterations: int = 10000

    def __post_init__(self):
        if self.model not in FREE_PARAMETERS:
            raise CalibrationError(f"model must be 1, 2 or 3, got {self.model!r}")
        merged = dict(DEFAULT_BOUNDS)
        for name, pair in self.bounds.items():
            if name not in PARAMETER_NAMES:
                raise CalibrationError(f"unknown bound {name!r}")
            lo, hi = (float(v) for v in pair)
            merged[name] = (lo, hi)
        object.__setattr__(self, "bounds", merged)
        for name in FREE_PARAMETERS[self.model]:
            lo, hi = merged[name]
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise CalibrationError(f"infeasible bounds for {name}: [{lo}, {hi}]")
        if merged["r"][0] <= 0 or merged["a"][0] <= 0 or merged["k"][0] < 0 or merged["b"][0] < 0:
            raise CalibrationError(
                "bounds must keep r > 0, a > 0, k >= 0, b >= 0 over the whole interval, got "
                + ", ".join(f"{n}=[{lo}, {hi}]" for n, (lo, hi) in merged.items())
            )
        if not self.objective_tolerance > 0:
            raise CalibrationError("objective_tolerance must be positive")
        if self.max_iterations < 1:
            raise CalibrationError("max_iterations must be at least 1")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.bounds[n][0] for n in FREE_PARAMETERS[self.model]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.bounds[n][1] for n in FREE_PARAMETERS[self.model]])

    @classmethod
    def from_bounds_json(cls, model: int, text: str, **kwargs) -> "CalibrationConfig":
        """Build a config from a ``{"r": [lo, hi], ...}`` JSON document."""
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CalibrationError(f"bounds file is not valid JSON: {exc}") from None
        if not isinstance(data, dict) or not all(isinstance(v, list) and len(v) == 2 for v in data.values()):
            raise CalibrationError('bounds JSON must look like {"r": [lo, hi], ...}')
        return cls(model, bounds={k: tuple(v) for k, v in data.items()}, **kwargs)


@dataclass(frozen=True)
class CalibrationResult:
    params: ModelParams
    mse: float
    iterations: int
    converged: bool
    residuals: tuple[float, ...]

    def report_row(self) -> dict[str, str]:
        row = {"model": str(self.params.model), "mse": repr(self.mse)}
        for name in PARAMETER_NAMES:
            row[name] = repr(getattr(self.params, name)) if name in self.params.free_names else ""
        row["iterations"] = str(self.iterations)
        row["converged"] = str(self.converged).lower()
        return row


def report_csv(results: Iterable[CalibrationResult]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_HEADER, lineterminator="\n")
    writer.writeheader()
    for res in results:
        writer.writerow(res.report_row())
    return buf.getvalue()


class _Problem:
    def __init__(self, traded: Sequence[float], features: Iterable[PricingFeatures]):
        self.traded = np.asarray(traded, dtype=float)
        self.x = FeatureArrays.from_features(features)
        if len(self.traded) != len(self.x):
            raise CalibrationError("traded multipliers and features differ in length")

    @classmethod
    def from_deals(cls, deals: Sequence[DealRecord]) -> "_Problem":
        return cls([d.multiplier for d in deals], [d.features for d in deals])

    def residuals(self, params: ModelParams) -> np.ndarray:
        return self.traded - multiplier_array(params, self.x)

    def mse(self, params: ModelParams) -> float:
        try:
            res = self.residuals(params)
        except PricingError:
            return math.inf
        return _mean_square(res)


def _mean_square(res: np.ndarray) -> float:
    # fsum is exact, so the result cannot depend on reduction order.
    return math.fsum((res * res).tolist()) / len(res)


def residuals(params: ModelParams, deals: Sequence[DealRecord]) -> np.ndarray:
    """Traded minus model multiplier for every deal, in input order."""
    if not deals:
        return np.empty(0)
    return _Problem.from_deals(deals).residuals(params)


def mse(params: ModelParams, deals: Sequence[DealRecord]) -> float:
    if not deals:
        raise CalibrationError("mse of an empty deal list is undefined")
    return _mean_square(residuals(params, deals))


def _clip(params: ModelParams, config: CalibrationConfig) -> ModelParams:
    x = np.clip(params.embed(config.model).vector(), config.lower, config.upper)
    return ModelParams.from_vector(config.model, x)


def _default_seed(config: CalibrationConfig) -> ModelParams:
    values = {n: DEFAULT_SEED[n] for n in FREE_PARAMETERS[config.model]}
    return _clip(ModelParams(config.model, **values), config)


@dataclass
class _Run:
    params: ModelParams
    mse: float
    nfev: int
    converged: bool


def _local_search(problem: _Problem, seed: ModelParams, config: CalibrationConfig, budget: int) -> _Run:
    model = config.model
    lower, upper = config.lower, config.upper

    def fun(x):
        try:
            return problem.residuals(ModelParams.from_vector(model, x))
        except PricingError:
            return np.full(len(problem.traded), _INFEASIBLE_RESIDUAL)

    def jac(x):
        try:
            return -multiplier_jacobian(ModelParams.from_vector(model, x), problem.x)
        except PricingError:
            return np.zeros((len(problem.traded), len(x)))

    best = seed
    best_mse = problem.mse(seed)
    nfev = 0
    while True:
        remaining = budget - nfev
        if remaining <= 0:
            return _Run(best, best_mse, nfev, False)
        fit = least_squares(
            fun,
            best.vector(),
            jac=jac,
            bounds=(lower, upper),
            method="trf",
            x_scale="jac",
            ftol=_INNER_TOL,
            xtol=_INNER_TOL,
            gtol=_INNER_TOL,
            max_nfev=remaining,
        )
        nfev += fit.nfev
        candidate = ModelParams.from_vector(model, np.clip(fit.x, lower, upper))
        candidate_mse = problem.mse(candidate)
        improvement = best_mse - candidate_mse
        if candidate_mse < best_mse:
            best, best_mse = candidate, candidate_mse
        if not improvement >= config.objective_tolerance:
            return _Run(best, best_mse, nfev, fit.status > 0)


def calibrate_multipliers(
    traded: Sequence[float], features: Sequence[PricingFeatures], config: CalibrationConfig
) -> CalibrationResult:
    """Fit ``config.model`` to traded multipliers observed at ``features``.

    Multi-start: the default seed, the optional initial guess, and (for
    models 2 and 3) the embedded solution of the next simpler model. The
    returned parameters never have a higher MSE than any seed.
    """
    problem = _Problem(traded, features)
    n_free = len(FREE_PARAMETERS[config.model])
    if len(problem.traded) < n_free:
        raise CalibrationError(
            f"model {config.model} has {n_free} free parameters but only {len(problem.traded)} deals were given"
        )

    iterations = 0
    seeds = [_default_seed(config)]
    if config.initial_guess is not None:
        seeds.append(_clip(config.initial_guess, config))
    if config.model > 1:
        simpler = calibrate_multipliers(
            traded, features, replace(config, model=config.model - 1, initial_guess=None)
        )
        iterations += simpler.iterations
        seeds.append(_clip(simpler.params, config))

    best: _Run | None = None
    for seed in seeds:
        run = _local_search(problem, seed, config, max(config.max_iterations - iterations, 0))
        iterations += run.nfev
        if best is None or run.mse < best.mse:
            best = run
    assert best is not None
    if not math.isfinite(best.mse):
        raise CalibrationError("no feasible parameters found inside the bounds")
    res = problem.residuals(best.params)
    return CalibrationResult(
        params=best.params,
        mse=best.mse,
        iterations=iterations,
        converged=best.converged,
        residuals=tuple(res.tolist()),
    )


def calibrate(deals: Sequence[DealRecord], config: CalibrationConfig) -> CalibrationResult:
    """Least-squares fit of ``config.model`` to the deals' traded multipliers."""
    if not deals:
        raise CalibrationError("cannot calibrate on an empty deal list")
    return calibrate_multipliers([d.multiplier for d in deals], [d.features for d in deals], config)

