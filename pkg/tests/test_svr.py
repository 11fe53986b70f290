import warnings

import numpy as np
import pytest
from scipy.optimize import minimize
from sklearn.base import clone
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import SVR

from shapegrowth.errors import DimensionMismatch, InvalidParams, MissingArtifact
from shapegrowth.svr import (LOCAL_HYPER, PCA_HYPER, EpsilonSVR, SvrHyper, dual_objective, fit_svr,
                             gaussian_kernel, kkt_violation, load_svr, save_svr, standardisation,
                             svr_predict)


def qp_oracle(X, y, h):
    """Dense SQP solve of the alpha / alpha* dual; returns (coef, bias, objective)."""
    mean, sc = standardisation(X)
    Z = (X - mean) / sc
    K = gaussian_kernel(Z, Z, h.kernel_size)
    n = len(y)
    Q = np.block([[K, -K], [-K, K]])
    p = np.concatenate([h.epsilon - y, h.epsilon + y])
    s = np.concatenate([np.ones(n), -np.ones(n)])
    res = minimize(lambda b: 0.5 * b @ Q @ b + p @ b, np.zeros(2 * n), jac=lambda b: Q @ b + p,
                   method="SLSQP", bounds=[(0, h.box)] * (2 * n),
                   constraints=[{"type": "eq", "fun": lambda b: s @ b, "jac": lambda b: s}],
                   options={"ftol": 1e-16, "maxiter": 1000})
    assert res.success
    a = res.x[:n] - res.x[n:]
    f = K @ a
    free = (np.abs(a) > 1e-7) & (np.abs(a) < h.box - 1e-7)
    bias = np.mean(y[free] - f[free] - h.epsilon * np.sign(a[free])) if free.any() else None
    obj = 0.5 * a @ K @ a - y @ a + h.epsilon * np.abs(a).sum()
    return a, bias, obj


def toy(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 9))
    X = rng.normal(size=(n, 2))
    y = np.sin(X[:, 0]) + 0.1 * rng.normal(size=n)
    h = SvrHyper(rng.uniform(0.5, 2.0), rng.uniform(0.2, 2.0), rng.uniform(0.01, 0.2))
    return X, y, h


@pytest.mark.parametrize("seed", range(10))
def test_dense_qp_oracle(seed):
    X, y, h = toy(seed)
    m = fit_svr(X, y, h)
    a, bias, obj = qp_oracle(X, y, h)
    coef = np.zeros(len(y))
    coef[m.support] = m.dual_coef
    assert np.abs(coef - a).max() < 1e-5
    assert dual_objective(m, X, y) == pytest.approx(obj, abs=1e-8)
    if bias is not None:
        mean, sc = standardisation(X)
        Z = (X - mean) / sc
        oracle_pred = gaussian_kernel(Z, Z, h.kernel_size) @ a + bias
        assert np.abs(svr_predict(m, X) - oracle_pred).max() < 1e-5
    assert kkt_violation(m, X, y) <= 1e-6


@pytest.mark.parametrize("hyper", [LOCAL_HYPER, PCA_HYPER])
def test_reference_hyperparameters_kkt(hyper):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(70, 3))
    y = 0.1 + 0.05 * X[:, 0] - 0.03 * X[:, 1] ** 2 + 0.03 * rng.normal(size=70)
    m = fit_svr(X, y, hyper)
    assert m.converged
    assert kkt_violation(m, X, y) <= 1e-6
    assert np.abs(m.dual_coef).max() <= hyper.box + 1e-8
    assert abs(m.dual_coef.sum()) < 1e-9


def test_epsilon_tube_absorbs_data():
    X = np.random.default_rng(2).normal(size=(10, 2))
    y = 0.5 + 0.01 * np.sin(np.arange(10))
    m = fit_svr(X, y, SvrHyper(1.0, 1.0, 0.05))
    assert len(m.support) == 0
    np.testing.assert_allclose(svr_predict(m, X), y.mean(), atol=1e-12)
    np.testing.assert_allclose(svr_predict(m, np.zeros((3, 2))), y.mean(), atol=1e-12)


def test_naive_summation_oracle():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 3))
    y = X[:, 0] - X[:, 2] + 0.1 * rng.normal(size=30)
    m = fit_svr(X, y, SvrHyper(1.5, 1.0, 0.05))
    pts = rng.normal(size=(20, 3))
    naive = []
    for x in pts:
        z = (x - m.feature_mean) / m.feature_scale
        v = m.bias
        for c, sv in zip(m.dual_coef, m.support_vectors):
            v += c * np.exp(-np.sum((z - sv) ** 2) / (2 * m.hyper.kernel_size ** 2))
        naive.append(v)
    np.testing.assert_allclose(svr_predict(m, pts), naive, atol=1e-10, rtol=0)


def test_continuity():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(25, 2))
    m = fit_svr(X, np.cos(X[:, 1]), SvrHyper(1.0, 2.0, 0.01))
    x = rng.normal(size=(1, 2))
    assert abs(svr_predict(m, x + 1e-9)[0] - svr_predict(m, x)[0]) < 1e-6


def test_row_permutation_invariance():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 3))
    y = X @ [0.3, -0.2, 0.1] + 0.05 * rng.normal(size=40)
    perm = rng.permutation(40)
    a, b = fit_svr(X, y), fit_svr(X[perm], y[perm])
    pts = rng.normal(size=(10, 3))
    assert np.abs(svr_predict(a, pts) - svr_predict(b, pts)).max() < 1e-8


@pytest.mark.parametrize("seed", range(4))
def test_agrees_with_libsvm(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(50, 3))
    y = np.tanh(X[:, 0]) + 0.2 * X[:, 1] + 0.1 * rng.normal(size=50)
    h = SvrHyper(*rng.uniform([0.5, 0.2, 0.01], [3.0, 5.0, 0.1]))
    ours = fit_svr(X, y, h)
    mean, sc = standardisation(X)
    ref = SVR(kernel="rbf", gamma=1 / (2 * h.kernel_size ** 2), C=h.box, epsilon=h.epsilon,
              tol=1e-9).fit((X - mean) / sc, y)
    pts = rng.normal(size=(20, 3))
    assert np.abs(svr_predict(ours, pts) - ref.predict((pts - mean) / sc)).max() < 1e-4


def test_iteration_cap_warns():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(30, 2))
    with pytest.warns(ConvergenceWarning):
        m = fit_svr(X, np.sin(3 * X[:, 0]), SvrHyper(0.5, 10.0, 0.001), max_iter=3)
    assert not m.converged and m.n_iter <= 3


def test_invalid_hyper():
    with pytest.raises(InvalidParams):
        fit_svr(np.zeros((5, 1)), np.zeros(5), SvrHyper(0.0, 1.0, 0.1))
    with pytest.raises(DimensionMismatch):
        fit_svr(np.zeros((5, 1)), np.zeros(4))


def test_predict_dimension_checked():
    m = fit_svr(np.random.default_rng(7).normal(size=(10, 3)), np.arange(10.0))
    with pytest.raises(DimensionMismatch):
        svr_predict(m, np.zeros((2, 2)))


def test_save_load(tmp_path):
    rng = np.random.default_rng(8)
    X = rng.normal(size=(20, 2))
    m = fit_svr(X, X[:, 0] ** 2)
    save_svr(m, tmp_path / "m.json")
    back = load_svr(tmp_path / "m.json")
    pts = rng.normal(size=(5, 2))
    assert np.array_equal(svr_predict(back, pts), svr_predict(m, pts))
    with pytest.raises(MissingArtifact):
        load_svr(tmp_path / "none.json")


def test_estimator_protocol():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(30, 2))
    y = X[:, 0] + 0.05 * rng.normal(size=30)
    est = EpsilonSVR(kernel_size=2.0, box=1.0, epsilon=0.02)
    c = clone(est)
    assert c.get_params() == est.get_params()
    c.fit(X, y)
    np.testing.assert_array_equal(c.predict(X), svr_predict(c.model_, X))
    assert c.converged_
    assert c.score(X, y) > 0.8
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        clone(c).fit(X, y)
