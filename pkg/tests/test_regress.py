import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import gammaln

from shapegrowth.errors import (DegenerateData, DegenerateFeatureWarning, DimensionMismatch,
                                InvalidParams, UnknownFeature, UnknownMode)
from shapegrowth.pls import PLS1Regression, fit_pls, pls_predict
from shapegrowth.regress import (CvReport, FeatureTable, anova_f, equal_width_bins, f_sf,
                                 ftest_details, ftest_feature, ftest_rank, log_grid, loo_cv,
                                 partial_dependence, regression_surface, tune_svr)
from shapegrowth.svr import EpsilonSVR, SvrHyper, fit_svr, svr_predict


def f_density(x, d1, d2):
    logc = gammaln((d1 + d2) / 2) - gammaln(d1 / 2) - gammaln(d2 / 2) + (d1 / 2) * math.log(d1 / d2)
    return math.exp(logc + (d1 / 2 - 1) * math.log(x) - (d1 + d2) / 2 * math.log1p(d1 * x / d2))


def table(seed=0, n=40):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = 0.1 + 0.05 * X[:, 0] + 0.01 * rng.normal(size=n)
    return FeatureTable(("a", "b", "c"), X, y)


@pytest.mark.parametrize("F,d1,d2", [(4.96, 1, 10), (2.5, 3, 20), (0.7, 9, 60), (12.0, 2, 5)])
def test_f_tail_against_integration(F, d1, d2):
    oracle = quad(f_density, F, np.inf, args=(d1, d2), epsabs=1e-13, epsrel=1e-12)[0]
    assert f_sf(F, d1, d2) == pytest.approx(oracle, abs=1e-9)


def test_reference_p_value():
    p = f_sf(4.96, 1, 10)
    assert p == pytest.approx(0.050, abs=0.001)


def test_constant_feature_flagged():
    with pytest.warns(DegenerateFeatureWarning):
        r = ftest_feature(np.ones(20), np.arange(20.0), "flat")
    assert r.FS == 0.0 and r.degenerate


def test_identical_response_per_bin():
    x = np.repeat(np.arange(10.0), 3)
    r = ftest_feature(x, np.full(30, 0.2))
    assert r.F == 0.0 and r.p == 1.0 and r.FS == 0.0


def test_perfect_separation_hits_floor():
    x = np.repeat([0.0, 1.0], 10)
    y = np.repeat([0.1, 0.3], 10)
    r = ftest_feature(x, y)
    assert math.isinf(r.F)
    assert r.FS == pytest.approx(-math.log(1e-300))
    assert r.FS == pytest.approx(690.7755, abs=1e-3)


def test_all_singleton_bins():
    with pytest.warns(DegenerateFeatureWarning):
        r = ftest_feature(np.arange(5.0), np.arange(5.0) ** 2)
    assert r.FS == 0.0 and r.degenerate


def test_anova_matches_scipy():
    from scipy.stats import f_oneway
    rng = np.random.default_rng(1)
    groups = [rng.normal(m, 1.0, size=k) for m, k in ((0, 5), (0.5, 7), (1.2, 4))]
    F, d1, d2 = anova_f(groups)
    ref = f_oneway(*groups)
    assert F == pytest.approx(ref.statistic, rel=1e-12)
    assert f_sf(F, d1, d2) == pytest.approx(ref.pvalue, rel=1e-9)


def test_bins():
    b = equal_width_bins(np.array([0.0, 0.05, 0.5, 0.99, 1.0]), 10)
    assert b.tolist() == [0, 0, 5, 9, 9]


def test_rank_order_and_affine_invariance():
    t = table()
    ranked = ftest_rank(t)
    assert ranked[0][0] == "a"
    assert all(ranked[k][1] >= ranked[k + 1][1] for k in range(2))
    X2 = t.X * np.array([3.0, 0.5, 10.0]) + np.array([7.0, -2.0, 1.0])
    moved = ftest_rank(FeatureTable(t.names, X2, t.y))
    assert [n for n, _ in moved] == [n for n, _ in ranked]
    np.testing.assert_allclose([v for _, v in moved], [v for _, v in ranked], rtol=1e-9)


def test_ftest_bins_validated():
    with pytest.raises(InvalidParams):
        ftest_details(table(), n_bins=1)


def test_feature_table_checks(tmp_path):
    with pytest.raises(DegenerateData):
        FeatureTable(("a",), np.zeros((3, 1)), np.zeros(3))
    with pytest.raises(InvalidParams):
        FeatureTable(("a", "a"), np.zeros((5, 2)), np.zeros(5))
    with pytest.raises(InvalidParams):
        FeatureTable(("a",), np.array([[1.0], [np.nan], [0], [1]]), np.zeros(4))
    with pytest.raises(DimensionMismatch):
        FeatureTable(("a", "b"), np.zeros((5, 1)), np.zeros(5))
    t = table()
    with pytest.raises(UnknownFeature):
        t.column("zzz")
    t.to_csv(tmp_path / "t.csv")
    back = FeatureTable.from_csv(tmp_path / "t.csv")
    assert back.names == t.names and back.ids == t.ids
    assert np.array_equal(back.X, t.X) and np.array_equal(back.y, t.y)


def test_loo_pls_matches_refit_oracle():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(12, 20))
    y = X[:, 0] - 0.5 * X[:, 3] + 0.1 * rng.normal(size=12)
    t = FeatureTable(tuple(f"x{i}" for i in range(20)), X, y)
    rep = loo_cv(t, PLS1Regression(3))
    for i in range(12):
        keep = np.arange(12) != i
        oracle = pls_predict(fit_pls(X[keep], y[keep], 3), X[i])
        assert rep.y_pred[i] == pytest.approx(oracle, abs=1e-9)
    assert rep.rmse == pytest.approx(np.sqrt(np.mean((rep.y_pred - y) ** 2)))
    assert len(rep.per_fold) == 12


def test_loo_constant_target():
    X = np.random.default_rng(3).normal(size=(8, 2))
    t = FeatureTable(("a", "b"), X, np.full(8, 0.1))
    rep = loo_cv(t, EpsilonSVR(1.0, 1.0, 0.01))
    assert rep.rmse == pytest.approx(0.0, abs=1e-15)
    assert rep.r2 == 1.0
    np.testing.assert_allclose(rep.y_pred, 0.1, atol=1e-15)


def test_r2_properties():
    y = np.array([0.1, 0.2, 0.3, 0.4])
    assert CvReport(list("abcd"), y, y.copy()).r2 == 1.0
    r = CvReport(list("abcd"), y, y + np.array([0.01, -0.02, 0.0, 0.01])).r2
    assert r < 1.0
    assert CvReport(list("abcd"), y, np.full(4, 5.0)).r2 < 0
    flat = np.full(4, 0.2)
    assert math.isnan(CvReport(list("abcd"), flat, flat + 0.1).r2)


def test_failed_fold_recorded():
    t = table(4, 10)

    def fitter(X, y):
        if len(X) and X[0, 0] == t.X[1, 0]:  # row 0 held out
            raise RuntimeError("boom")
        return lambda Z: np.full(len(Z), y.mean())

    rep = loo_cv(t, fitter)
    assert rep.partial and list(rep.failed) == [t.ids[0]]
    assert np.isnan(rep.y_pred[0]) and np.isfinite(rep.rmse)


def test_cv_report_round_trip(tmp_path):
    rep = loo_cv(table(5, 10), EpsilonSVR(), label="pca_svr")
    rep.save(tmp_path)
    back = CvReport.load(tmp_path, "pca_svr")
    assert np.array_equal(back.y_pred, rep.y_pred)
    assert back.ids == rep.ids and back.rmse == rep.rmse


def test_tune_single_point():
    res = tune_svr(table(6, 15), {"kernel_size": [2.0], "box": [1.0], "epsilon": [0.01]})
    assert res.best == SvrHyper(2.0, 1.0, 0.01)
    assert len(res.trials) == 1


def test_tune_picks_lower_mse():
    t = table(7, 20)
    grid = {"kernel_size": [0.3, 3.0], "box": [1.0], "epsilon": [0.005]}
    res = tune_svr(t, grid)
    mse = {s: loo_cv(t, EpsilonSVR(s, 1.0, 0.005)).mse for s in (0.3, 3.0)}
    assert res.best.kernel_size == min(mse, key=mse.get)
    assert res.best_mse == pytest.approx(min(mse.values()))


def test_tune_tie_break_and_determinism():
    # a constant target gives every point the same (zero) error
    t = FeatureTable(("a",), np.arange(8.0)[:, None], np.full(8, 0.3))
    grid = {"kernel_size": [4.0, 1.0], "box": [5.0, 0.5], "epsilon": [0.01]}
    assert tune_svr(t, grid).best == SvrHyper(1.0, 0.5, 0.01)
    big = {"kernel_size": log_grid(0.5, 8, 5), "box": log_grid(0.1, 10, 4), "epsilon": [0.01, 0.02]}
    a = tune_svr(table(8, 12), big, seed=3, n_iter=6)
    b = tune_svr(table(8, 12), big, seed=3, n_iter=6)
    assert a == b and len(a.trials) == 6


def test_pdp_single_feature():
    t = FeatureTable(("x",), np.linspace(-1, 1, 9)[:, None], np.zeros(9))
    f = lambda X: np.sin(X[:, 0])
    c = partial_dependence(f, t, "x", 25)
    np.testing.assert_allclose(c.values, np.sin(c.grid), atol=1e-15)
    assert len(c.grid) == 25 and c.grid[0] == -1 and c.grid[-1] == 1


def test_pdp_ignored_feature_flat_and_additive_slope():
    t = table(9)
    flat = partial_dependence(lambda X: 2 * X[:, 0], t, "b")
    assert np.ptp(flat.values) < 1e-9
    lin = partial_dependence(lambda X: 2 * X[:, 0] - 3 * X[:, 1], t, "b")
    slope = np.polyfit(lin.grid, lin.values, 1)[0]
    assert slope == pytest.approx(-3.0, abs=1e-6)
    with pytest.raises(UnknownFeature):
        partial_dependence(lambda X: X[:, 0], t, "nope")


@pytest.fixture(scope="module")
def mode_model():
    rng = np.random.default_rng(10)
    lam = np.array([25.0, 9.0, 4.0, 1.0, 0.5, 0.2])
    W = rng.normal(size=(70, 3)) * np.sqrt(lam[[0, 1, 5]])
    y = 0.1 + 0.01 * W[:, 0] + 0.003 * rng.normal(size=70)
    return EpsilonSVR(1.89, 1.82, 0.002).fit(W, y), lam


def test_surface_pointwise_and_fixed(mode_model):
    model, lam = mode_model
    s = regression_surface(model, (1, 2, 6), lam, (1, 2), fixed={6: 0.3}, grid=7)
    assert s.values.shape == (7, 7)
    for a in (0, 3, 6):
        for b in (1, 5):
            x = np.array([[s.w1[a], s.w2[b], 0.3]])
            assert s.values[a, b] == pytest.approx(svr_predict(model.model_, x)[0], abs=1e-12)
    assert s.w1[-1] == pytest.approx(3 * 5.0)
    one = regression_surface(model, (1, 2, 6), lam, (1, 6), fixed={1: 1.0, 6: -0.2}, grid=1)
    assert one.values.shape == (1, 1)
    assert one.values[0, 0] == pytest.approx(model.predict([[1.0, 0.0, -0.2]])[0])


def test_surface_unknown_mode(mode_model):
    model, lam = mode_model
    with pytest.raises(UnknownMode):
        regression_surface(model, (1, 2, 6), lam, (1, 3))


def test_surface_monotone_along_planted_mode(mode_model, tmp_path):
    model, lam = mode_model
    s = regression_surface(model, (1, 2, 6), lam, (1, 2), xi_lim=2.0, grid=30)
    # GR rises with w1 in the data; allow noise-sized wiggles
    assert np.all(np.diff(s.values, axis=0) > -0.003)
    assert np.all(s.values[-1] - s.values[0] > 0.1)
    s.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "w1,w2,GR" and len(lines) == 1 + 30 * 30
