import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg, stats

from structfactor import cca, simlab
from structfactor.detrend import OrderSpec, fit
from structfactor.errors import DegenerateSpectrum, InsufficientSample
from structfactor.numerics import sym_eig


def brute_force_cov(x, m):
    """Entry-by-entry loops; out-of-sample lags contribute zero."""
    p, T = x.shape
    mu = [sum(x[i, t] for t in range(T)) / T for i in range(p)]
    c = [[x[i, t] - mu[i] for t in range(T)] for i in range(p)]

    def lagged(i, j, t):  # component i of eta_{t-j}
        return c[i][t - j] if t - j >= 0 else 0.0

    s_eta = np.zeros((p, p))
    s_cross = np.zeros((p, m * p))
    s_lags = np.zeros((m * p, m * p))
    for a in range(p):
        for b in range(p):
            s_eta[a, b] = sum(c[a][t] * c[b][t] for t in range(T)) / T
    for a in range(p):
        for jb in range(1, m + 1):
            for b in range(p):
                s_cross[a, (jb - 1) * p + b] = sum(c[a][t] * lagged(b, jb, t) for t in range(T)) / T
    for ja in range(1, m + 1):
        for a in range(p):
            for jb in range(1, m + 1):
                for b in range(p):
                    s_lags[(ja - 1) * p + a, (jb - 1) * p + b] = sum(
                        lagged(a, ja, t) * lagged(b, jb, t) for t in range(T)) / T
    return s_eta, s_cross, s_lags


@pytest.mark.parametrize("m", [1, 2, 3])
def test_covariances_match_brute_force(rng, m):
    x = rng.standard_normal((3, 50)) + 2.0
    cov = cca.lagged_covariances(x, m)
    s_eta, s_cross, s_lags = brute_force_cov(x, m)
    np.testing.assert_allclose(cov.sigma_eta, s_eta, atol=1e-12)
    np.testing.assert_allclose(cov.sigma_eta_etam, s_cross, atol=1e-12)
    np.testing.assert_allclose(cov.sigma_etam, s_lags, atol=1e-12)


def test_m1_lag_block_is_truncated_lag0(rng):
    x = rng.standard_normal((3, 40))
    cov = cca.lagged_covariances(x, 1)
    c = x - x.mean(axis=1, keepdims=True)
    np.testing.assert_allclose(cov.sigma_etam, c[:, :-1] @ c[:, :-1].T / 40, atol=1e-13)
    assert np.max(np.abs(cov.sigma_eta - cov.sigma_eta.T)) <= 1e-10
    assert np.max(np.abs(cov.sigma_etam - cov.sigma_etam.T)) <= 1e-10


def test_whitened_input_has_identity_covariance(rng):
    x = rng.standard_normal((4, 200))
    c = x - x.mean(axis=1, keepdims=True)
    w = linalg.inv(linalg.sqrtm(c @ c.T / 200).real) @ c
    cov = cca.lagged_covariances(w, 2)
    np.testing.assert_allclose(cov.sigma_eta, np.eye(4), atol=1e-12)


def test_constant_series_zero_covariance():
    cov = cca.lagged_covariances(np.full((2, 30), 7.0), 2)
    np.testing.assert_array_equal(cov.sigma_eta, np.zeros((2, 2)))


def test_insufficient_sample():
    with pytest.raises(InsufficientSample):
        cca.lagged_covariances(np.random.default_rng(0).standard_normal((5, 15)), 2)


def _oracle_eigs(cov):
    W = linalg.inv(linalg.sqrtm(cov.sigma_eta).real)
    B = linalg.inv(linalg.sqrtm(cov.sigma_etam).real)
    sv = linalg.svd(W @ cov.sigma_eta_etam @ B, compute_uv=False)
    return np.sort(sv**2)[::-1]


def test_m_hat_matches_svd_oracle():
    rng = np.random.default_rng(5)
    for _ in range(25):
        p = int(rng.integers(1, 6))
        m = int(rng.integers(1, 4))
        T = int(rng.integers(m * p + p + 10, 120))
        x = rng.standard_normal((p, T))
        x[:, 1:] += 0.5 * x[:, :-1]
        cov = cca.lagged_covariances(x, m)
        m_hat, _ = cca.build_m_hat(cov)
        ours = sym_eig(m_hat).eigenvalues
        oracle = _oracle_eigs(cov)
        np.testing.assert_allclose(ours[:oracle.size], oracle, atol=1e-8)
        assert np.max(np.abs(m_hat - m_hat.T)) <= 1e-14
        assert ours.min() >= -1e-10 and ours.max() <= 1 + 1e-10


def test_white_noise_eigenvalues_near_zero():
    rng = np.random.default_rng(9)
    small = 0
    for _ in range(40):
        cov = cca.lagged_covariances(rng.standard_normal((4, 5000)), 2)
        m_hat, _ = cca.build_m_hat(cov)
        small += sym_eig(m_hat).eigenvalues[0] <= 0.02
    assert small / 40 >= 0.95


def test_three_strong_factors_give_three_large_eigenvalues():
    for seed in range(10):
        cfg = simlab.DgpConfig(p=10, T=2000, r=3, phi_range=(0.5, 0.9), seed=seed)
        inst = simlab.generate(cfg)
        dec = fit(inst.panel, cfg.order)
        m_hat, _ = cca.build_m_hat(cca.lagged_covariances(dec.irregular, 2))
        lam = sym_eig(m_hat).eigenvalues
        assert int(np.sum(lam > 0.1)) == 3


def _fitted(seed=1, p=8, T=600, r=3):
    inst = simlab.generate(simlab.DgpConfig(p=p, T=T, r=r, seed=seed))
    dec = fit(inst.panel, inst.config.order)
    return cca.fit_factors(dec.irregular, m=2, r=r), dec


def test_loadings_orthonormal_and_variates_white():
    ffit, dec = _fitted()
    model = ffit.model
    assert np.max(np.abs(model.loadings.T @ model.loadings - np.eye(model.p))) <= 1e-8
    xi = np.vstack([model.factors, model.noise_variates])
    xc = xi - xi.mean(axis=1, keepdims=True)
    np.testing.assert_allclose(xc @ xc.T / xi.shape[1], np.eye(model.p), atol=1e-6)
    np.testing.assert_allclose(model.variates(dec.irregular), xi, atol=1e-10)
    assert np.all((model.eigenvalues >= 0) & (model.eigenvalues <= 1))


@pytest.mark.parametrize("r", [0, 8])
def test_loading_boundaries(r):
    _, dec = _fitted()
    cov = cca.lagged_covariances(dec.irregular, 2)
    m_hat, W = cca.build_m_hat(cov)
    model = cca.estimate_loadings(m_hat, W, dec.irregular, r)
    assert model.factors.shape == (r, dec.T)
    assert model.noise_variates.shape == (8 - r, dec.T)


def test_factors_back_to_irregular():
    # with r = p, the inverse map recovers the centred irregular panel exactly
    _, dec = _fitted()
    cov = cca.lagged_covariances(dec.irregular, 2)
    m_hat, W = cca.build_m_hat(cov)
    model = cca.estimate_loadings(m_hat, W, dec.irregular, 8, sigma_eta=cov.sigma_eta)
    back = model.factors_to_irregular(model.factors) + model.mean[:, None]
    np.testing.assert_allclose(back, dec.irregular, atol=1e-8)


def test_s_t_zero_eigenvalues():
    s, df = cca.s_t_statistic(np.zeros(5), 3, 100, 2)
    assert s == 0.0 and df == 3 * (5 + 3)


def test_s_t_single_value():
    lam = np.array([0.9, 0.8, 0.7, 0.6, 0.55, 0.5])
    s, df = cca.s_t_statistic(lam, 1, 101, 2)
    assert s == pytest.approx(-100 * np.log(0.5), abs=1e-4)
    assert s == pytest.approx(69.3147, abs=1e-4)
    assert df == 7


def test_s_t_clamps_values_above_one():
    s, _ = cca.s_t_statistic(np.array([1.0 + 1e-13, 0.2]), 2, 50, 2)
    assert np.isfinite(s)


def test_c_t_examples():
    assert cca.c_t_statistic(32.0, 32) == 0.0
    df = 20
    assert cca.c_t_statistic(df + 2 * np.sqrt(2 * df), df) == pytest.approx(2.0)


def _eigs_with_statistics(targets, p, T, m):
    """Eigenvalues whose cumulative S_T over the smallest ones hit ``targets``."""
    n = T - m + 1
    increments = np.diff(np.concatenate([[0.0], targets]))
    smallest = 1 - np.exp(-increments / n)
    big = np.linspace(0.9, 0.5, p - len(targets))
    return np.concatenate([big, smallest[::-1]])


def test_sequential_rule_on_fifteen_series_statistics():
    # four cumulative statistics for a 15-series panel, with their chi-square p-values
    lam = _eigs_with_statistics(np.array([12.43, 36.11, 72.09, 154.17]), p=15, T=520, m=2)
    rep = cca.select_num_factors(lam, 520, 2, alpha=0.05, regime="chi2")
    np.testing.assert_allclose(rep.s_t[:4], [12.43, 36.11, 72.09, 154.17], atol=1e-8)
    assert rep.df[:4] == (16, 34, 54, 76)
    np.testing.assert_allclose(rep.chi2_p_value[:4], [0.71, 0.37, 0.051, 0.00], atol=0.006)
    assert rep.selected_v == 3 and rep.selected_r == 12
    assert rep.regime == "chi2"


def test_all_zero_eigenvalues_select_no_factors():
    rep = cca.select_num_factors(np.zeros(6), 500, 2)
    assert all(s == 0 for s in rep.s_t)
    assert rep.selected_v == 6 and rep.selected_r == 0


def test_immediate_rejection_means_all_factors():
    rep = cca.select_num_factors(np.full(4, 0.5), 500, 2)
    assert rep.selected_v == 0 and rep.selected_r == 4


def test_regime_switch():
    assert cca.select_num_factors(np.zeros(10), 500).regime == "chi2"
    assert cca.select_num_factors(np.zeros(11), 500).regime == "normal"
    assert cca.select_num_factors(np.zeros(11), 500, p_threshold=20).regime == "chi2"


def test_report_p_values_consistent():
    lam = np.array([0.5, 0.2, 0.01, 0.004, 0.001])
    rep = cca.select_num_factors(lam, 400, 2)
    for s, df, pc, c, pn in zip(rep.s_t, rep.df, rep.chi2_p_value, rep.c_t, rep.normal_p_value):
        assert pc == pytest.approx(stats.chi2.sf(s, df))
        assert c == pytest.approx(cca.c_t_statistic(s, df))
        assert pn == pytest.approx(stats.norm.sf(c))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=12),
       st.integers(50, 5000), st.integers(1, 4))
def test_s_t_monotone_in_v(lam, T, m):
    rep = cca.select_num_factors(np.array(lam), T, m)
    assert np.all(np.diff(rep.s_t) >= 0)
    for v in range(1, len(lam) + 1):
        s, df = cca.s_t_statistic(np.array(lam), v, T, m)
        assert s == pytest.approx(rep.s_t[v - 1], rel=1e-12, abs=1e-12)


def test_ratio_examples():
    assert cca.ratio_estimator(np.array([4, 2, 1, 0.01, 0.005]) ** 2) == 3
    assert cca.ratio_estimator(np.full(6, 0.3)) == 1


def test_ratio_skips_zero_denominators():
    assert cca.ratio_estimator(np.array([0.64, 0.16, 0.0, 0.0])) == 2


def test_ratio_degenerate():
    with pytest.raises(DegenerateSpectrum):
        cca.ratio_estimator(np.zeros(5))


@pytest.mark.slow
def test_loading_discrepancy_decreases_with_T():
    rows = simlab.run_table("loading_discrepancy", [dict(p=10, T=500), dict(p=10, T=2000)], 100, seed=21)
    med = [simlab.metric(r, "d_bar")["median"] for r in rows]
    assert med[1] < med[0]


@pytest.mark.slow
def test_test_is_consistent_against_too_many_zeros():
    # under r = 3, p = 10 the hypothesis of v = 8 zero correlations must be rejected
    rejections = 0
    n = 100
    for rep in range(n):
        inst = simlab.generate(simlab.DgpConfig(p=10, T=3000, seed=simlab.replication_seed(77, 0, rep)))
        dec = fit(inst.panel, OrderSpec(1, 5, 30))
        m_hat, _ = cca.build_m_hat(cca.lagged_covariances(dec.irregular, 2))
        lam = sym_eig(m_hat).eigenvalues
        rej = cca.select_num_factors(lam, 3000, 2)
        rejections += rej.chi2_p_value[7] < 0.05
    assert rejections / n > 0.95
