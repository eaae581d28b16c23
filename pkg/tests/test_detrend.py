import math

import numpy as np
import pytest

from structfactor import simlab
from structfactor.detrend import (OrderSpec, bic_value, build_design, decompose, default_c_T, fit,
                                  max_harmonics, rss_grid, select_orders)
from structfactor.errors import DomainError, InvalidOrder
from structfactor.panel import TimePanel


def test_design_constant_only():
    np.testing.assert_array_equal(build_design(4, OrderSpec(0, 0)), np.ones((4, 1)))


def test_design_exact_trig_rows():
    D = build_design(4, OrderSpec(1, 1, 4))
    np.testing.assert_allclose(D[:2], [[1, 1, 0, 1], [1, 2, -1, 0]], atol=1e-15)


def test_design_width_for_simulation_setting():
    assert build_design(100, OrderSpec(1, 5, 30)).shape == (100, 12)


def test_design_column_order():
    D = build_design(10, OrderSpec(2, 2, 12))
    t = np.arange(1, 11)
    rho = 2 * np.pi / 12
    expected = np.column_stack([np.ones(10), t, t**2, np.cos(rho * t), np.cos(2 * rho * t),
                                np.sin(rho * t), np.sin(2 * rho * t)])
    np.testing.assert_allclose(D, expected, atol=1e-12)


@pytest.mark.parametrize("s, k_ok, k_bad", [(4, 1, 2), (5, 2, 3), (12, 5, 6), (30, 14, 15)])
def test_harmonic_bound(s, k_ok, k_bad):
    assert max_harmonics(s) == k_ok
    OrderSpec(0, k_ok, s)
    with pytest.raises(InvalidOrder):
        OrderSpec(0, k_bad, s)


def test_design_too_wide():
    with pytest.raises(InvalidOrder):
        build_design(4, OrderSpec(1, 2, 12))


def test_fit_recovers_noise_free_coefficients():
    T, s = 60, 12
    t = np.arange(1, T + 1)
    y = 2 + 0.5 * t + 3 * np.cos(2 * np.pi * t / s)
    dec = fit(TimePanel.from_array(y, periodicity_s=s), OrderSpec(1, 1, s))
    np.testing.assert_allclose(dec.theta[0], [2, 0.5, 3, 0], atol=1e-8)
    np.testing.assert_allclose(dec.trend[0], 2 + 0.5 * t, atol=1e-8)
    np.testing.assert_allclose(dec.seasonal[0], 3 * np.cos(2 * np.pi * t / s), atol=1e-8)


def _dgp_panel(seed, p=10, T=500, k0=5, d0=1):
    return simlab.generate(simlab.DgpConfig(p=p, T=T, k0=k0, d0=d0, seed=seed))


def test_irregular_orthogonal_to_design():
    inst = _dgp_panel(3)
    order = OrderSpec(1, 5, 30)
    dec = fit(inst.panel, order)
    D = build_design(inst.panel.T, order)
    for i in range(inst.panel.p):
        e = dec.irregular[i]
        scale = np.linalg.norm(D, axis=0) * np.linalg.norm(e)
        assert np.max(np.abs(D.T @ e) / scale) <= 1e-6


@pytest.mark.parametrize("order", [OrderSpec(0, 0, 30), OrderSpec(2, 7, 30), OrderSpec(1, 14, 30)])
def test_reconstruction_identity(order):
    inst = _dgp_panel(4, T=3000)
    y = inst.panel.values
    dec = fit(inst.panel, order)
    err = np.max(np.abs(dec.trend + dec.seasonal + dec.irregular - y))
    assert err <= 1e-8 * (1 + np.max(np.abs(y)))


def test_extrapolate_matches_in_sample():
    inst = _dgp_panel(5, T=200)
    dec = fit(inst.panel, OrderSpec(1, 5, 30))
    trend, seasonal = dec.extrapolate(np.arange(1, 201))
    np.testing.assert_allclose(trend, dec.trend, atol=1e-9)
    np.testing.assert_allclose(seasonal, dec.seasonal, atol=1e-9)


def test_bic_direct_formula():
    assert bic_value(100.0, 100, k=2, d=1, p=10, c_T=1.0) == pytest.approx(3 / 100 * math.log(100), abs=1e-6)
    assert bic_value(100.0, 100, k=2, d=1, p=10, c_T=1.0) == pytest.approx(0.138155, abs=1e-6)


def test_bic_default_constant():
    assert default_c_T(1000) == pytest.approx(1.932645, abs=1e-6)
    assert bic_value(1000.0, 1000, 1, 0, 5) == pytest.approx(1.932645 * math.log(1000) / 1000, rel=1e-6)


def test_bic_penalty_monotone():
    vals_k = [bic_value(5.0, 200, k, 1, 10) for k in range(6)]
    vals_d = [bic_value(5.0, 200, 2, d, 10) for d in range(4)]
    assert np.all(np.diff(vals_k) > 0) and np.all(np.diff(vals_d) > 0)


def test_bic_rejects_zero_rss():
    with pytest.raises(DomainError):
        bic_value(0.0, 100, 1, 1, 1)


def test_max_rule_over_series():
    rng = np.random.default_rng(0)
    T, s = 600, 24
    t = np.arange(1, T + 1)
    rows = []
    for top in (2, 5, 3):
        y = 1.0 + 0.01 * t + 0.1 * rng.standard_normal(T)
        for j in range(1, top + 1):
            y = y + 2.0 * np.cos(2 * np.pi * j * t / s)
        rows.append(y)
    table = select_orders(TimePanel.from_array(np.array(rows), periodicity_s=s), k_max=8)
    assert [k for k, _ in table.selected_per_series] == [2, 5, 3]
    assert table.selected[0] == 5
    assert table.selected[1] == max(d for _, d in table.selected_per_series)


def test_tie_breaking_prefers_smaller_orders():
    # constant series: every design fits exactly (rss at rounding level)
    panel = TimePanel.from_array(np.full((1, 40), 3.0), periodicity_s=12)
    table = select_orders(panel, k_max=3, d_max=2)
    assert table.selected == (0, 0)


def test_grid_bounds_checked():
    panel = TimePanel.from_array(np.random.default_rng(1).standard_normal((2, 100)), periodicity_s=12)
    with pytest.raises(InvalidOrder):
        select_orders(panel, k_max=6)


def test_rss_monotone_over_grid():
    inst = _dgp_panel(8, T=400)
    rss = rss_grid(inst.panel, range(4), range(15))
    assert np.all(np.diff(rss, axis=0) <= 1e-9 * rss[:-1])
    assert np.all(np.diff(rss, axis=1) <= 1e-9 * rss[:, :-1])


def test_bic_table_report_shape():
    inst = _dgp_panel(9, T=300)
    table = select_orders(inst.panel, k_max=7)
    assert table.values.shape == (3, 8, 10)
    rep = table.to_report(inst.panel.series_names)
    assert rep["selected"] == {"k": table.selected[0], "d": table.selected[1]}
    assert len(rep["per_series"]) == 10


def test_decompose_uses_selected_orders():
    inst = _dgp_panel(10, T=1000)
    dec, table = decompose(inst.panel, d_max=2)
    assert (dec.order.k, dec.order.d) == table.selected == (5, 1)


def test_white_noise_selects_no_structure():
    # Monte Carlo oracle under the null: no trend, no seasonality
    rng = np.random.default_rng(42)
    hits = 0
    n = 100
    for _ in range(n):
        panel = TimePanel.from_array(rng.standard_normal((10, 1000)), periodicity_s=12)
        hits += select_orders(panel).selected == (0, 0)
    assert hits / n >= 0.95


@pytest.mark.slow
def test_theta_error_shrinks_with_T():
    err = {}
    for T in (500, 2000):
        vals = []
        for rep in range(100):
            inst = _dgp_panel(1000 + rep, T=T)
            dec = fit(inst.panel, OrderSpec(1, 5, 30))
            vals.append(np.linalg.norm(dec.theta - inst.theta_true) / math.sqrt(10))
        err[T] = np.median(vals)
    assert err[2000] < err[500]


@pytest.mark.slow
def test_selection_consistency_in_T():
    rows = simlab.run_table("table1", [dict(p=10, k0=5, T=T) for T in (200, 500, 1000)], 200, seed=11)
    probs = [simlab.metric(r, "hit")["estimate"] for r in rows]
    assert probs[1] >= probs[0] - 0.03
    assert probs[2] >= probs[1] - 0.03


@pytest.mark.slow
def test_slope_error_rate():
    rows = simlab.run_table("theta_error", [dict(p=10, T=500), dict(p=10, T=2000)], 100, seed=12)
    med = [simlab.metric(r, "slope_error")["median"] for r in rows]
    assert med[1] / med[0] <= 0.5
