"""Deterministic trend and harmonic seasonal extraction.

Each series is regressed on the same design: powers of t up to degree d and
k cosine/sine pairs at the Fourier frequencies 2*pi*j/s. Orders are chosen
per series by a BIC whose penalty grows like C_T*log(max(p, T))/T, and the
panel takes the component-wise maximum of the per-series choices.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidOrder
from .numerics import qr_least_squares
from .panel import TimePanel

logger = logging.getLogger(__name__)

EXACT_FIT_REL = 1e-12


def max_harmonics(s: int) -> int:
    """Largest usable number of harmonic pairs for period ``s``."""
    return math.ceil(s / 2) - 1


def default_c_T(T: int) -> float:
    return math.log(math.log(T))


@dataclass(frozen=True)
class OrderSpec:
    d: int
    k: int
    s: int = 2

    def __post_init__(self):
        if self.d < 0 or self.k < 0:
            raise InvalidOrder(f"orders must be nonnegative, got d={self.d}, k={self.k}")
        if self.k >= 1:
            if self.s < 2:
                raise InvalidOrder(f"period must be >= 2 when k >= 1, got s={self.s}")
            if self.k > max_harmonics(self.s):
                raise InvalidOrder(
                    f"k={self.k} exceeds ceil(s/2)-1={max_harmonics(self.s)} for s={self.s}"
                )

    @property
    def ncols(self) -> int:
        return self.d + 1 + 2 * self.k

    def column_names(self) -> list[str]:
        return ([f"alpha{j}" for j in range(self.d + 1)]
                + [f"beta{j}" for j in range(1, self.k + 1)]
                + [f"gamma{j}" for j in range(1, self.k + 1)])


def design_at(t, order: OrderSpec) -> np.ndarray:
    """Design rows for arbitrary integer time points ``t`` (1-based)."""
    t = np.asarray(t, dtype=np.int64)
    tf = t.astype(float)
    cols = [tf**j for j in range(order.d + 1)]
    if order.k:
        j = np.arange(1, order.k + 1)
        # reduce j*t modulo s in integers so the angle stays in [0, 2*pi)
        phase = np.mod(np.outer(t, j), order.s) * (2.0 * np.pi / order.s)
        return np.column_stack(cols + [np.cos(phase), np.sin(phase)])
    return np.column_stack(cols)


def build_design(T: int, order: OrderSpec) -> np.ndarray:
    if order.ncols > T:
        raise InvalidOrder(f"design needs {order.ncols} columns but only T={T} rows")
    return design_at(np.arange(1, T + 1), order)


@dataclass(frozen=True)
class Decomposition:
    theta: np.ndarray
    trend: np.ndarray
    seasonal: np.ndarray
    irregular: np.ndarray
    order: OrderSpec

    @property
    def T(self) -> int:
        return self.irregular.shape[1]

    def extrapolate(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Trend and seasonal components (each p x len(t)) at time points ``t``."""
        D = design_at(t, self.order)
        nd = self.order.d + 1
        trend = self.theta[:, :nd] @ D[:, :nd].T
        seasonal = self.theta[:, nd:] @ D[:, nd:].T
        return trend, seasonal


def fit(panel: TimePanel, order: OrderSpec) -> Decomposition:
    """Equation-by-equation least squares of every series on the shared design."""
    if order.k and order.s != panel.periodicity_s:
        order = OrderSpec(order.d, order.k, panel.periodicity_s)
    D = build_design(panel.T, order)
    coef, resid, _ = qr_least_squares(D, panel.values.T)
    theta = coef.T
    nd = order.d + 1
    trend = theta[:, :nd] @ D[:, :nd].T
    seasonal = theta[:, nd:] @ D[:, nd:].T
    return Decomposition(theta, trend, seasonal, resid.T, order)


def bic_value(rss: float, T: int, k: int, d: int, p: int, c_T: float | None = None) -> float:
    if not rss > 0:
        raise DomainError(f"BIC undefined for rss={rss}")
    if c_T is None:
        c_T = default_c_T(T)
    return math.log(rss / T) + (d + k) / T * c_T * math.log(max(p, T))


@dataclass(frozen=True)
class BicTable:
    """BIC over the (d, k) grid for every series.

    ``values[a, b, i]`` is the BIC of series i at ``d = d_values[a]`` and
    ``k = k_values[b]``.
    """

    values: np.ndarray
    d_values: tuple[int, ...]
    k_values: tuple[int, ...]
    selected_per_series: tuple[tuple[int, int], ...]
    selected: tuple[int, int]
    c_T: float

    def to_report(self, series_names=None) -> dict:
        p = self.values.shape[2]
        names = list(series_names) if series_names is not None else [f"y{i + 1}" for i in range(p)]
        per_series = []
        for i, (k_i, d_i) in enumerate(self.selected_per_series):
            a = self.d_values.index(d_i)
            b = self.k_values.index(k_i)
            per_series.append({
                "series": names[i],
                "k": k_i,
                "d": d_i,
                "bic_min": _json_float(self.values[a, b, i]),
            })
        return {
            "selected": {"k": self.selected[0], "d": self.selected[1]},
            "c_T": self.c_T,
            "d_grid": list(self.d_values),
            "k_grid": list(self.k_values),
            "per_series": per_series,
        }


def _json_float(x: float):
    return None if not math.isfinite(x) else float(x)


def rss_grid(panel: TimePanel, d_values, k_values) -> np.ndarray:
    """RSS of every series for every (d, k) pair; shape (len(d), len(k), p)."""
    s = panel.periodicity_s
    out = np.empty((len(d_values), len(k_values), panel.p))
    Y = panel.values.T
    for a, d in enumerate(d_values):
        for b, k in enumerate(k_values):
            D = build_design(panel.T, OrderSpec(d, k, s))
            _, _, rss = qr_least_squares(D, Y)
            out[a, b] = rss
    return out


def select_orders(
    panel: TimePanel,
    k_max: int | None = None,
    d_max: int = 2,
    c_T: float | None = None,
    d_fixed: int | None = None,
) -> BicTable:
    """Per-series BIC minimisation followed by the component-wise max rule.

    With ``d_fixed`` the trend degree is held at that value and only k is
    searched. Ties go to the smaller k, then the smaller d.
    """
    s = panel.periodicity_s
    if k_max is None:
        k_max = max_harmonics(s)
    if k_max < 0 or k_max > max_harmonics(s):
        raise InvalidOrder(f"k_max={k_max} outside [0, {max_harmonics(s)}] for s={s}")
    if d_fixed is not None:
        if d_fixed < 0:
            raise InvalidOrder(f"d_fixed must be >= 0, got {d_fixed}")
        d_values = (int(d_fixed),)
    else:
        if d_max < 0:
            raise InvalidOrder(f"d_max must be >= 0, got {d_max}")
        d_values = tuple(range(d_max + 1))
    k_values = tuple(range(k_max + 1))
    if max(d_values) + 1 + 2 * k_max > panel.T:
        raise InvalidOrder(f"largest design ({max(d_values) + 1 + 2 * k_max} columns) exceeds T={panel.T}")
    if c_T is None:
        c_T = default_c_T(panel.T)

    T, p = panel.T, panel.p
    rss = rss_grid(panel, d_values, k_values)
    dd = np.array(d_values)[:, None, None]
    kk = np.array(k_values)[None, :, None]
    penalty = (dd + kk) / T * c_T * math.log(max(p, T))
    # residual norm below 1e-12 of the series norm counts as an exact fit
    exact = rss <= EXACT_FIT_REL**2 * np.sum(panel.values**2, axis=1)
    with np.errstate(divide="ignore"):
        bic = np.where(exact, -np.inf, np.log(np.where(exact, 1.0, rss) / T) + penalty)
    if np.any(np.isneginf(bic)):
        logger.warning("exact fit (rss=0) in BIC grid; selecting the first exact order")

    picks = []
    # k-major order so argmin's first hit honours the tie rule
    by_k = np.transpose(bic, (1, 0, 2)).reshape(len(k_values) * len(d_values), p)
    first = np.argmin(by_k, axis=0)
    for i in range(p):
        b, a = divmod(int(first[i]), len(d_values))
        picks.append((k_values[b], d_values[a]))
    selected = (max(k for k, _ in picks), max(d for _, d in picks))
    return BicTable(bic, d_values, k_values, tuple(picks), selected, float(c_T))


def decompose(panel: TimePanel, k_max=None, d_max=2, c_T=None, d_fixed=None) -> tuple[Decomposition, BicTable]:
    """Select orders by BIC, then fit the panel at the selected orders."""
    table = select_orders(panel, k_max=k_max, d_max=d_max, c_T=c_T, d_fixed=d_fixed)
    k, d = table.selected
    return fit(panel, OrderSpec(d, k, panel.periodicity_s)), table

