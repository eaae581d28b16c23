"""Factor dynamics, forecasting and rolling out-of-sample evaluation.

The extracted factors follow a VAR(d) with intercept, fitted by least
squares equation by equation. Forecasts of the observed panel are
rebuilt from three pieces: the trend and seasonal terms extrapolated from
the fitted coefficients, and the factor forecasts mapped back to the
irregular scale (the white-noise variates forecast to zero).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import cca, detrend
from .detrend import Decomposition, OrderSpec
from .errors import AllEigenvaluesFloored, InputError, InsufficientSample
from .numerics import qr_least_squares
from .panel import TimePanel

VARIANTS = ("GT1", "GT2", "VEC")


class StationarityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class VarModel:
    order: int
    coefficients: tuple[np.ndarray, ...]
    intercept: np.ndarray
    innovation_cov: np.ndarray
    spectral_radius: float

    @property
    def dim(self) -> int:
        return self.intercept.shape[0]

    @property
    def nonstationary(self) -> bool:
        return self.spectral_radius >= 1.0

    def companion(self) -> np.ndarray:
        return _companion(self.coefficients)

    def unconditional_mean(self) -> np.ndarray:
        A = np.eye(self.dim) - sum(self.coefficients, np.zeros((self.dim, self.dim)))
        return np.linalg.solve(A, self.intercept)


def _companion(coefs) -> np.ndarray:
    d = len(coefs)
    r = coefs[0].shape[0] if d else 0
    C = np.zeros((r * d, r * d))
    if r == 0:
        return C
    C[:r] = np.hstack(coefs)
    C[r:, :-r] = np.eye(r * (d - 1))
    return C


def fit_var(factors, order: int = 1) -> VarModel:
    f = np.atleast_2d(np.asarray(factors, dtype=float))
    r, T = f.shape
    if order < 1:
        raise InputError(f"VAR order must be >= 1, got {order}")
    if r == 0:
        return VarModel(order, tuple(np.zeros((0, 0)) for _ in range(order)),
                        np.zeros(0), np.zeros((0, 0)), 0.0)
    if T <= r * order + 1:
        raise InsufficientSample(f"VAR({order}) on {r} series needs T > {r * order + 1}, got {T}")
    X = np.hstack([np.ones((T - order, 1))] + [f[:, order - i:T - i].T for i in range(1, order + 1)])
    Y = f[:, order:].T
    coef, resid, _ = qr_least_squares(X, Y)
    intercept = coef[0]
    coefs = tuple(coef[1 + (i - 1) * r:1 + i * r].T for i in range(1, order + 1))
    sigma = resid.T @ resid / (T - order)
    radius = float(np.max(np.abs(np.linalg.eigvals(_companion(coefs)))))
    if radius >= 1.0:
        warnings.warn(f"fitted VAR is not stationary (companion spectral radius {radius:.4f})",
                      StationarityWarning, stacklevel=2)
    return VarModel(order, coefs, intercept, 0.5 * (sigma + sigma.T), radius)


def var_forecast(model: VarModel, history, h: int) -> np.ndarray:
    """Iterate the VAR h steps past the end of ``history`` (r x T); returns r x h."""
    f = np.atleast_2d(np.asarray(history, dtype=float))
    r = model.dim
    if r == 0:
        return np.zeros((0, h))
    d = model.order
    if f.shape[1] < d:
        raise InsufficientSample(f"need {d} observations to start a VAR({d}) forecast")
    path = [f[:, -i] for i in range(d, 0, -1)]
    out = np.empty((r, h))
    for tau in range(h):
        nxt = model.intercept.copy()
        for i, phi in enumerate(model.coefficients, start=1):
            nxt = nxt + phi @ path[-i]
        path.append(nxt)
        out[:, tau] = nxt
    return out


@dataclass(frozen=True)
class ForecastResult:
    horizon: int
    panel_forecast: np.ndarray
    factor_forecast: np.ndarray
    trend: np.ndarray
    seasonal: np.ndarray
    irregular_forecast: np.ndarray


def forecast(model: VarModel, factors, decomposition: Decomposition,
             factor_model: cca.FactorModel | None, h: int) -> ForecastResult:
    if h < 1:
        raise InputError(f"horizon must be >= 1, got {h}")
    T = decomposition.T
    t_future = np.arange(T + 1, T + h + 1)
    trend, seasonal = decomposition.extrapolate(t_future)
    f_hat = var_forecast(model, factors, h)
    p = decomposition.theta.shape[0]
    if factor_model is None or factor_model.r == 0:
        eta_hat = np.zeros((p, h))
    else:
        eta_hat = factor_model.factors_to_irregular(f_hat) + factor_model.mean[:, None]
    return ForecastResult(h, trend + seasonal + eta_hat, f_hat, trend, seasonal, eta_hat)


@dataclass(frozen=True)
class PipelineFit:
    """Everything fitted on one training window."""

    variant: str
    decomposition: Decomposition | None
    bic: detrend.BicTable | None
    factor_fit: cca.FactorFit | None
    var_model: VarModel
    history: np.ndarray

    def forecast(self, h: int) -> ForecastResult:
        if self.variant == "VEC":
            y_hat = var_forecast(self.var_model, self.history, h)
            zeros = np.zeros_like(y_hat)
            return ForecastResult(h, y_hat, y_hat, zeros, zeros, y_hat)
        model = self.factor_fit.model if self.factor_fit is not None else None
        return forecast(self.var_model, self.history, self.decomposition, model, h)


def fit_pipeline(panel: TimePanel, variant: str = "GT2", var_order: int = 1,
                 order: OrderSpec | None = None, r: int | None = None, m: int = 2,
                 alpha: float = 0.05, regime: str = "auto", k_max: int | None = None,
                 d_max: int = 2, c_T: float | None = None, floor_rel: float = 1e-10) -> PipelineFit:
    """Fit one of the forecasting pipelines.

    GT2 removes trend and seasonal terms, GT1 removes the trend only (k=0),
    VEC fits the VAR to the observed panel directly. Orders and the factor
    count are estimated unless given.
    """
    if variant not in VARIANTS:
        raise InputError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant == "VEC":
        return PipelineFit(variant, None, None, None, fit_var(panel.values, var_order), panel.values)

    table = None
    if variant == "GT1":
        if order is None:
            table = detrend.select_orders(panel, k_max=0, d_max=d_max, c_T=c_T)
            order = OrderSpec(table.selected[1], 0, panel.periodicity_s)
        else:
            order = OrderSpec(order.d, 0, panel.periodicity_s)
    elif order is None:
        table = detrend.select_orders(panel, k_max=k_max, d_max=d_max, c_T=c_T)
        order = OrderSpec(table.selected[1], table.selected[0], panel.periodicity_s)
    dec = detrend.fit(panel, order)
    try:
        ffit = cca.fit_factors(dec.irregular, m=m, r=r, alpha=alpha, regime=regime, floor_rel=floor_rel)
    except AllEigenvaluesFloored:
        # irregular part identically zero: nothing left to model
        ffit = None
    if ffit is None or ffit.model.r == 0:
        factors = np.zeros((0, panel.T))
    else:
        factors = ffit.model.factors
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StationarityWarning)
        var_model = fit_var(factors, var_order)
    return PipelineFit(variant, dec, table, ffit, var_model, factors)


@dataclass(frozen=True)
class EvaluationResult:
    variant: str
    h: int
    fe: float
    std_error: float | None
    origins: tuple[int, ...]
    errors: tuple[float, ...]

    def to_report(self) -> dict:
        return {
            "variant": self.variant,
            "h": self.h,
            "FE_h": self.fe,
            "std_error": self.std_error,
            "n_origins": len(self.origins),
            "origins": list(self.origins),
            "errors": list(self.errors),
        }


def forecast_error(y_hat, y) -> float:
    y_hat = np.asarray(y_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.linalg.norm(y_hat - y) / math.sqrt(y.size))


def rolling_evaluate(panel: TimePanel, h: int = 1, tau0: int | None = None,
                     train_fraction: float | None = None, variant: str = "GT2",
                     var_order: int = 1, **pipeline_kw) -> EvaluationResult:
    """Refit on [1, tau] for tau = tau0..T-h and score the h-step forecast of y_{tau+h}.

    ``FE_h`` averages over the origins actually used; ``std_error`` is the
    standard deviation of the per-origin errors.
    """
    T = panel.T
    if h < 1:
        raise InputError(f"horizon must be >= 1, got {h}")
    if tau0 is None:
        if train_fraction is None:
            raise InputError("give either tau0 or train_fraction")
        if not 0.0 < train_fraction < 1.0:
            raise InputError(f"train_fraction must lie in (0, 1), got {train_fraction}")
        tau0 = int(math.floor(train_fraction * T))
    if tau0 < 2 or tau0 + h > T:
        raise InsufficientSample(f"need 2 <= tau0 and tau0 + h <= T; got tau0={tau0}, h={h}, T={T}")
    origins, errors = [], []
    for tau in range(tau0, T - h + 1):
        try:
            fitted = fit_pipeline(panel.head(tau), variant, var_order, **pipeline_kw)
        except InsufficientSample as exc:
            raise InsufficientSample(f"origin tau={tau}: {exc}", origin=tau) from exc
        y_hat = fitted.forecast(h).panel_forecast[:, h - 1]
        origins.append(tau)
        errors.append(forecast_error(y_hat, panel.values[:, tau + h - 1]))
    errs = np.array(errors)
    sd = float(errs.std(ddof=1)) if errs.size > 1 else None
    return EvaluationResult(variant, h, float(errs.mean()), sd, tuple(origins), tuple(errors))
