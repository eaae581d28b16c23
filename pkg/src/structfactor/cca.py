"""Canonical-correlation factor analysis of an irregular (detrended) panel.

The irregular series are whitened, and the squared canonical correlations
between eta_t and its stacked lags (eta_{t-1}, ..., eta_{t-m}) are the
eigenvalues of

    M = S_eta^{-1/2} S_{eta,lags} S_lags^{-1} S_{lags,eta} S_eta^{-1/2}.

Eigenvectors with large eigenvalues load the serially dependent factors;
those with (near) zero eigenvalues pick out white-noise combinations. The
number of zero canonical correlations is chosen by a sequential likelihood
ratio test, with an eigenvalue-ratio rule available for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DegenerateSpectrum, DomainError, InputError, InsufficientSample, NonFiniteInput
from .numerics import inv_spd, inv_sqrt_spd, sqrt_spd, sym_eig

CLAMP_MAX = 1.0 - 1e-12
REGIMES = ("auto", "chi2", "normal")


@dataclass(frozen=True)
class LaggedCov:
    sigma_eta: np.ndarray
    sigma_eta_etam: np.ndarray
    sigma_etam: np.ndarray
    m: int
    T: int


def stack_lags(x: np.ndarray, m: int) -> np.ndarray:
    """(m*p) x T matrix whose j-th block row is x lagged by j, zero before the sample."""
    p, T = x.shape
    z = np.zeros((m * p, T))
    for j in range(1, m + 1):
        z[(j - 1) * p:j * p, j:] = x[:, :T - j]
    return z


def lagged_covariances(irregular, m: int = 2) -> LaggedCov:
    """Sample covariances of eta_t and its stacked lags, divisor T.

    The panel is centred at its grand mean first; lagged values that fall
    before the first observation are set to zero.
    """
    x = np.asarray(irregular, dtype=float)
    if x.ndim != 2:
        raise InputError(f"irregular panel must be 2-D, got shape {x.shape}")
    if m < 1:
        raise InputError(f"lag depth m must be >= 1, got {m}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("irregular panel contains NaN or infinite values")
    p, T = x.shape
    if T <= m * p + p:
        raise InsufficientSample(f"T={T} too short for p={p}, m={m}; need T > {m * p + p}")
    x = x - x.mean(axis=1, keepdims=True)
    z = stack_lags(x, m)
    s_eta = x @ x.T / T
    s_cross = x @ z.T / T
    s_lags = z @ z.T / T
    return LaggedCov(0.5 * (s_eta + s_eta.T), s_cross, 0.5 * (s_lags + s_lags.T), m, T)


def build_m_hat(cov: LaggedCov, floor_rel: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Return (M_hat, whitener)."""
    W = inv_sqrt_spd(cov.sigma_eta, floor_rel)
    B = inv_spd(cov.sigma_etam, floor_rel)
    A = W @ cov.sigma_eta_etam
    M = A @ B @ A.T
    return 0.5 * (M + M.T), W


@dataclass(frozen=True)
class FactorModel:
    """Fitted transformation: xi_t = loadings.T @ whitener @ (eta_t - mean).

    The first ``r`` variates are the factors, the rest the white-noise
    variates. ``unwhitener`` is S_eta^{1/2} with the same eigenvalue floor,
    so ``unwhitener @ whitener`` is the identity.
    """

    whitener: np.ndarray
    unwhitener: np.ndarray
    loadings: np.ndarray
    eigenvalues: np.ndarray
    r: int
    factors: np.ndarray
    noise_variates: np.ndarray
    mean: np.ndarray
    m: int = 2
    raw_eigenvalues: np.ndarray = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return self.loadings.shape[0]

    @property
    def factor_loadings(self) -> np.ndarray:
        return self.loadings[:, :self.r]

    def variates(self, irregular) -> np.ndarray:
        x = np.asarray(irregular, dtype=float) - self.mean[:, None]
        return self.loadings.T @ self.whitener @ x

    def factors_to_irregular(self, factors) -> np.ndarray:
        """Map factor values back to the irregular scale (noise variates at zero)."""
        return self.unwhitener @ self.factor_loadings @ np.asarray(factors, dtype=float)


def estimate_loadings(m_hat, whitener, irregular, r: int, floor_rel: float = 1e-10,
                      m: int = 2, sigma_eta=None) -> FactorModel:
    x = np.asarray(irregular, dtype=float)
    p = x.shape[0]
    if not 0 <= r <= p:
        raise InputError(f"factor count r={r} outside [0, {p}]")
    eig = sym_eig(m_hat)
    L = eig.eigenvectors
    mean = x.mean(axis=1)
    xi = L.T @ whitener @ (x - mean[:, None])
    if sigma_eta is None:
        xc = x - mean[:, None]
        sigma_eta = xc @ xc.T / x.shape[1]
    return FactorModel(
        whitener=whitener,
        unwhitener=sqrt_spd(sigma_eta, floor_rel),
        loadings=L,
        eigenvalues=np.clip(eig.eigenvalues, 0.0, 1.0),
        r=int(r),
        factors=xi[:r],
        noise_variates=xi[r:],
        mean=mean,
        m=m,
        raw_eigenvalues=eig.eigenvalues,
    )


def _clamped_descending(eigenvalues) -> np.ndarray:
    lam = np.sort(np.asarray(eigenvalues, dtype=float))[::-1]
    if not np.all(np.isfinite(lam)):
        raise NonFiniteInput("eigenvalues contain NaN or infinite values")
    return np.clip(lam, 0.0, CLAMP_MAX)


def degrees_of_freedom(v: int, p: int, m: int) -> int:
    return v * ((m - 1) * p + v)


def s_t_statistic(eigenvalues, v: int, T: int, m: int) -> tuple[float, int]:
    """Likelihood-ratio statistic on the ``v`` smallest squared canonical correlations."""
    lam = _clamped_descending(eigenvalues)
    p = lam.size
    if not 1 <= v <= p:
        raise InputError(f"v={v} outside [1, {p}]")
    smallest = lam[p - v:]
    if np.any(smallest >= 1.0):
        raise DomainError("squared canonical correlation >= 1 after clamping")
    s_t = -(T - m + 1) * float(np.sum(np.log1p(-smallest)))
    return s_t, degrees_of_freedom(v, p, m)


def c_t_statistic(s_t: float, df: int) -> float:
    return (s_t - df) / math.sqrt(2.0 * df)


@dataclass(frozen=True)
class TestReport:
    v: tuple[int, ...]
    s_t: tuple[float, ...]
    df: tuple[int, ...]
    chi2_p_value: tuple[float, ...]
    c_t: tuple[float, ...]
    normal_p_value: tuple[float, ...]
    selected_v: int
    selected_r: int
    alpha: float
    regime: str

    __test__ = False

    def to_report(self) -> dict:
        rows = [
            {"v": v, "S_T": s, "df": df, "chi2_p_value": pc, "C_T": c, "normal_p_value": pn}
            for v, s, df, pc, c, pn in zip(self.v, self.s_t, self.df, self.chi2_p_value,
                                           self.c_t, self.normal_p_value)
        ]
        return {
            "alpha": self.alpha,
            "regime": self.regime,
            "selected_v": self.selected_v,
            "selected_r": self.selected_r,
            "tests": rows,
        }


def resolve_regime(regime: str, p: int, p_threshold: int = 10) -> str:
    if regime not in REGIMES:
        raise InputError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    if regime == "auto":
        return "chi2" if p <= p_threshold else "normal"
    return regime


def select_num_factors(eigenvalues, T: int, m: int = 2, alpha: float = 0.05,
                       regime: str = "auto", p_threshold: int = 10) -> TestReport:
    """Test v = 1, 2, ... zero canonical correlations until the first rejection.

    The selected v is the last one not rejected (0 when v = 1 already
    rejects), and r = p - v.
    """
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    lam = _clamped_descending(eigenvalues)
    p = lam.size
    used = resolve_regime(regime, p, p_threshold)
    # cumulative sums over the smallest eigenvalues give S_T(v) for every v at once
    logs = np.log1p(-lam[::-1])
    s_all = -(T - m + 1) * np.cumsum(logs)
    vs = np.arange(1, p + 1)
    dfs = vs * ((m - 1) * p + vs)
    c_all = (s_all - dfs) / np.sqrt(2.0 * dfs)
    p_chi = stats.chi2.sf(s_all, dfs)
    p_norm = stats.norm.sf(c_all)
    p_used = p_chi if used == "chi2" else p_norm
    v_hat = 0
    for v in vs:
        if p_used[v - 1] < alpha:
            break
        v_hat = int(v)
    return TestReport(
        v=tuple(int(v) for v in vs),
        s_t=tuple(float(x) for x in s_all),
        df=tuple(int(x) for x in dfs),
        chi2_p_value=tuple(float(x) for x in p_chi),
        c_t=tuple(float(x) for x in c_all),
        normal_p_value=tuple(float(x) for x in p_norm),
        selected_v=v_hat,
        selected_r=p - v_hat,
        alpha=float(alpha),
        regime=used,
    )


def ratio_estimator(eigenvalues) -> int:
    """Eigenvalue-ratio factor count, on canonical correlations (square roots)."""
    lam2 = np.sort(np.asarray(eigenvalues, dtype=float))[::-1]
    if lam2.size < 2:
        raise InputError("ratio estimator needs at least two eigenvalues")
    if np.all(lam2 <= 1e-14):
        raise DegenerateSpectrum("all eigenvalues are numerically zero")
    lam = np.sqrt(np.clip(lam2, 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(lam[:-1] > 0, lam[1:] / np.where(lam[:-1] > 0, lam[:-1], 1.0), np.inf)
    return int(np.argmin(ratios)) + 1


@dataclass(frozen=True)
class FactorFit:
    model: FactorModel
    report: TestReport
    m_hat: np.ndarray
    cov: LaggedCov


def fit_factors(irregular, m: int = 2, r: int | None = None, alpha: float = 0.05,
                regime: str = "auto", p_threshold: int = 10,
                floor_rel: float = 1e-10) -> FactorFit:
    """Full factor step: covariances, M_hat, test for r (unless given), loadings."""
    cov = lagged_covariances(irregular, m)
    m_hat, W = build_m_hat(cov, floor_rel)
    lam = sym_eig(m_hat).eigenvalues
    report = select_num_factors(lam, cov.T, m, alpha, regime, p_threshold)
    r_used = report.selected_r if r is None else r
    model = estimate_loadings(m_hat, W, irregular, r_used, floor_rel, m, cov.sigma_eta)
    return FactorFit(model, report, m_hat, cov)
