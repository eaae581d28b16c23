"""Simulation lab: synthetic structural-factor panels and Monte Carlo tables.

Random numbers come from numpy's PCG64 bit generator. A replication's seed
is derived from the master seed with ``SeedSequence(master,
spawn_key=(cell, rep))``, so every replication's draws are fixed by
(master, cell, rep) alone and the results do not depend on how the work is
scheduled across processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal

from . import cca, detrend
from .detrend import OrderSpec, max_harmonics
from .errors import DegenerateDraw, InputError, NotOrthonormal, RankDeficient, StructFactorError
from .numerics import inv_sqrt_spd
from .panel import TimePanel

BURN_IN = 200
MAX_COND = 1e8
MAX_REDRAWS = 100


@dataclass(frozen=True)
class DgpConfig:
    p: int
    T: int
    r: int = 3
    k0: int = 5
    d0: int = 1
    s: int = 30
    phi_range: tuple[float, float] = (0.2, 0.9)
    coef_range: tuple[float, float] = (-2.0, 2.0)
    seed: int = 0

    def __post_init__(self):
        if self.p < 1 or self.T < 2:
            raise InputError(f"need p >= 1 and T >= 2, got p={self.p}, T={self.T}")
        if not 0 <= self.r <= self.p:
            raise InputError(f"r={self.r} outside [0, p={self.p}]")
        if self.k0 < 0 or self.d0 < 0:
            raise InputError("k0 and d0 must be nonnegative")
        if self.k0 > max_harmonics(self.s):
            raise InputError(f"k0={self.k0} exceeds ceil(s/2)-1 for s={self.s}")
        for lo, hi in (self.phi_range, self.coef_range):
            if not lo < hi:
                raise InputError(f"range ({lo}, {hi}) is not ordered")

    @property
    def order(self) -> OrderSpec:
        return OrderSpec(self.d0, self.k0, self.s)


@dataclass(frozen=True)
class DgpInstance:
    panel: TimePanel
    theta_true: np.ndarray
    l_tilde_true: np.ndarray
    l1_true_whitened: np.ndarray
    phi_true: np.ndarray
    factors_true: np.ndarray
    eta_true: np.ndarray
    config: DgpConfig


def generate(config: DgpConfig) -> DgpInstance:
    """Draw one panel. Draw order: Theta, L~ (redrawn while ill-conditioned), Phi, u, eps."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    p, T, r = config.p, config.T, config.r
    lo, hi = config.coef_range
    theta = rng.uniform(lo, hi, size=(p, config.order.ncols))
    for _ in range(MAX_REDRAWS):
        l_tilde = rng.uniform(lo, hi, size=(p, p))
        if np.linalg.cond(l_tilde) <= MAX_COND:
            break
    else:
        raise DegenerateDraw(f"no well-conditioned loading matrix in {MAX_REDRAWS} draws")
    phi = rng.uniform(*config.phi_range, size=r)
    u = rng.standard_normal((BURN_IN + T, r))
    eps = rng.standard_normal((T, p - r))

    # diagonal VAR(1) from a zero state: one AR(1) filter per factor
    f = np.array([signal.lfilter([1.0], [1.0, -phi[i]], u[:, i]) for i in range(r)])
    f = f.reshape(r, BURN_IN + T)[:, BURN_IN:]
    eta = l_tilde @ np.vstack([f, eps.T])

    D = detrend.build_design(T, config.order)
    y = theta @ D.T + eta
    if r:
        xc = eta - eta.mean(axis=1, keepdims=True)
        l1 = inv_sqrt_spd(xc @ xc.T / T) @ l_tilde[:, :r]
    else:
        l1 = np.zeros((p, 0))
    panel = TimePanel.from_array(y, periodicity_s=config.s)
    return DgpInstance(panel, theta, l_tilde, l1, np.diag(phi), f, eta, config)


# --- subspace discrepancies -------------------------------------------------

def _orthonormal(H, tol: float = 1e-8) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    err = np.max(np.abs(H.T @ H - np.eye(H.shape[1]))) if H.size else 0.0
    if err > tol:
        raise NotOrthonormal(f"columns deviate from orthonormality by {err:.3g}")
    return H


def _trace_term(H1, H2) -> float:
    # tr(H1 H1' H2 H2') = ||H1' H2||_F^2
    return float(np.sum((H1.T @ H2) ** 2))


def _from_trace(tr: float, dim: int) -> float:
    return math.sqrt(min(max(1.0 - tr / dim, 0.0), 1.0))


def discrepancy_d(H1, H2) -> float:
    H1, H2 = _orthonormal(H1), _orthonormal(H2)
    if H1.shape != H2.shape:
        raise InputError(f"shapes differ: {H1.shape} vs {H2.shape}")
    return _from_trace(_trace_term(H1, H2), H1.shape[1])


def discrepancy_d_tilde(H1, H2) -> float:
    H1, H2 = _orthonormal(H1), _orthonormal(H2)
    return _from_trace(_trace_term(H1, H2), min(H1.shape[1], H2.shape[1]))


def _column_basis(H, tol: float = 1e-10) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    scale = np.linalg.norm(H, axis=0)
    if np.any(scale == 0):
        raise RankDeficient(int(np.sum(scale > 0)), H.shape[1])
    Q, R = np.linalg.qr(H / scale)
    rank = int(np.sum(np.abs(np.diag(R)) > tol * max(np.linalg.norm(H / scale, 2), 1.0)))
    if rank < H.shape[1]:
        raise RankDeficient(rank, H.shape[1])
    return Q


def discrepancy_d_bar(H1, H2) -> float:
    """Projector discrepancy for full-column-rank (not necessarily orthonormal) bases."""
    Q1, Q2 = _column_basis(H1), _column_basis(H2)
    return _from_trace(_trace_term(Q1, Q2), min(Q1.shape[1], Q2.shape[1]))


# --- Monte Carlo harness ------------------------------------------------------

EXPERIMENTS = ("table1", "table2", "theta_error", "loading_discrepancy", "null_calibration")

CELL_DEFAULTS = {
    "table1": dict(r=3, d0=1, s=30),
    "table2": dict(r=3, k0=5, d0=1, s=30, m=2, alpha=0.05, regime="auto", k_known=1),
    "theta_error": dict(r=3, k0=5, d0=1, s=30),
    "loading_discrepancy": dict(r=3, k0=5, d0=1, s=30, m=2, r_known=1),
    "null_calibration": dict(r=0, k0=5, d0=1, s=30, m=2, alpha=0.05, regime="auto"),
}

_CONFIG_KEYS = {"p", "T", "r", "k0", "d0", "s"}


def replication_seed(master_seed: int, cell_index: int, rep: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(cell_index, rep))
    return int(ss.generate_state(1, np.uint64)[0])


def parse_cell(text: str) -> dict:
    """``"p=10,k0=5,T=500"`` -> ``{"p": 10, "k0": 5, "T": 500}``."""
    cell = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        key, sep, value = part.partition("=")
        if not sep:
            raise InputError(f"cell entry {part!r} is not key=value")
        key = key.strip()
        value = value.strip()
        try:
            cell[key] = int(value)
        except ValueError:
            try:
                cell[key] = float(value)
            except ValueError:
                cell[key] = value
    return cell


def _full_cell(experiment: str, cell: dict) -> dict:
    if experiment not in EXPERIMENTS:
        raise InputError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")
    full = {**CELL_DEFAULTS[experiment], **cell}
    if "p" not in full or "T" not in full:
        raise InputError(f"cell {cell} must set p and T")
    if "k0" not in full:
        raise InputError(f"cell {cell} must set k0")
    return full


def _config(cell: dict, seed: int) -> DgpConfig:
    return DgpConfig(**{k: int(v) for k, v in cell.items() if k in _CONFIG_KEYS}, seed=seed)


def _replicate(experiment: str, cell: dict, seed: int) -> dict:
    cfg = _config(cell, seed)
    inst = generate(cfg)
    panel = inst.panel

    if experiment == "table1":
        table = detrend.select_orders(panel, k_max=cell.get("k_max"), d_fixed=cfg.d0)
        return {"hit": float(table.selected[0] == cfg.k0)}

    if experiment == "theta_error":
        dec = detrend.fit(panel, cfg.order)
        err = dec.theta - inst.theta_true
        return {
            "theta_error": float(np.linalg.norm(err) / math.sqrt(cfg.p)),
            "slope_error": float(np.median(np.abs(err[:, 1]))) if cfg.d0 >= 1 else float("nan"),
        }

    m = int(cell.get("m", 2))
    if experiment == "table2" and not cell.get("k_known", 1):
        k_hat = detrend.select_orders(panel, k_max=cell.get("k_max"), d_fixed=cfg.d0).selected[0]
        order = OrderSpec(cfg.d0, k_hat, cfg.s)
    else:
        order = cfg.order
    dec = detrend.fit(panel, order)
    cov = cca.lagged_covariances(dec.irregular, m)
    m_hat, W = cca.build_m_hat(cov)
    lam = cca.sym_eig(m_hat).eigenvalues

    if experiment == "table2":
        report = cca.select_num_factors(lam, cfg.T, m, cell["alpha"], cell["regime"])
        return {
            "test": float(report.selected_r == cfg.r),
            "ratio": float(cca.ratio_estimator(lam) == cfg.r),
        }

    if experiment == "loading_discrepancy":
        if cell.get("r_known", 1):
            r_used = cfg.r
        else:
            r_used = cca.select_num_factors(lam, cfg.T, m).selected_r
        model = cca.estimate_loadings(m_hat, W, dec.irregular, r_used, m=m, sigma_eta=cov.sigma_eta)
        if r_used == 0 or cfg.r == 0:
            return {"d_bar": 1.0 if r_used != cfg.r else 0.0}
        return {"d_bar": discrepancy_d_bar(model.factor_loadings, inst.l1_true_whitened)}

    # null_calibration: the all-noise hypothesis v = p
    p = cfg.p
    s_t, df = cca.s_t_statistic(lam, p, cfg.T, m)
    c_t = cca.c_t_statistic(s_t, df)
    report = cca.select_num_factors(lam, cfg.T, m, cell["alpha"], cell["regime"])
    regime = report.regime
    p_value = report.chi2_p_value[-1] if regime == "chi2" else report.normal_p_value[-1]
    return {
        "s_t": s_t,
        "c_t": c_t,
        "reject_full": float(p_value < cell["alpha"]),
        "r_hat_zero": float(report.selected_r == 0),
    }


def _safe_replicate(args) -> dict | None:
    experiment, cell, seed = args
    try:
        return _replicate(experiment, cell, seed)
    except StructFactorError:
        return None


def _summarise(name: str, values: np.ndarray, binary: bool) -> dict:
    n = values.size
    if binary:
        est = float(values.mean())
        se = math.sqrt(est * (1 - est) / n) if n > 1 else None
        return {"metric": name, "estimate": est, "se": se, "n": n}
    out = {
        "metric": name,
        "median": float(np.median(values)),
        "q1": float(np.quantile(values, 0.25)),
        "q3": float(np.quantile(values, 0.75)),
        "mean": float(values.mean()),
        "var": float(values.var(ddof=1)) if n > 1 else None,
        "n": n,
    }
    if n > 1:
        sd = float(values.std(ddof=1))
        out["se_mean"] = sd / math.sqrt(n)
        out["se_median"] = 1.2533 * sd / math.sqrt(n)
    else:
        out["se_mean"] = out["se_median"] = None
    return out


BINARY_METRICS = {"hit", "test", "ratio", "reject_full", "r_hat_zero"}


def run_table(experiment: str, grid: list[dict], replications: int = 500, seed: int = 0,
              workers: int = 1, keep_samples: bool = False) -> list[dict]:
    """Run ``replications`` draws for every cell of ``grid``.

    Each result row carries the cell parameters, counts of successful and
    failed replications, and one summary per metric. A cell is marked
    ``failed`` when more than 1% of its replications raised.
    """
    if replications < 1:
        raise InputError("replications must be >= 1")
    cells = [_full_cell(experiment, c) for c in grid]
    jobs = [(experiment, cell, replication_seed(seed, ci, rep))
            for ci, cell in enumerate(cells) for rep in range(replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_safe_replicate, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        outcomes = [_safe_replicate(job) for job in jobs]

    results = []
    for ci, cell in enumerate(cells):
        chunk = outcomes[ci * replications:(ci + 1) * replications]
        ok = [o for o in chunk if o is not None]
        n_failed = replications - len(ok)
        row = {
            "experiment": experiment,
            "cell": cell,
            "replications": replications,
            "n_ok": len(ok),
            "n_failed": n_failed,
            "status": "failed" if n_failed > 0.01 * replications else "ok",
            "metrics": [],
        }
        if ok:
            for name in ok[0]:
                vals = np.array([o[name] for o in ok], dtype=float)
                vals = vals[np.isfinite(vals)]
                if vals.size == 0:
                    continue
                row["metrics"].append(_summarise(name, vals, name in BINARY_METRICS))
                if keep_samples:
                    row.setdefault("samples", {})[name] = vals.tolist()
        results.append(row)
    return results


def metric(row: dict, name: str) -> dict:
    for entry in row["metrics"]:
        if entry["metric"] == name:
            return entry
    raise KeyError(name)


def config_dict(cfg: DgpConfig) -> dict:
    return asdict(cfg)
