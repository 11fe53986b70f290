"""Gaussian-kernel epsilon-SVR solved by SMO.

Features are standardised inside the fit (so each leave-one-out fold uses its
own statistics). The kernel is k(x, x') = exp(-|x - x'|**2 / (2 sigma**2)) on
the standardised features.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._kernels import smo_epsilon_svr
from .errors import DimensionMismatch, InvalidParams, MissingArtifact

KKT_TOL = 1e-6
MAX_ITER = 1_000_000


@dataclass(frozen=True)
class SvrHyper:
    kernel_size: float = 1.89  # sigma, in standardised feature units
    box: float = 1.82  # C
    epsilon: float = 0.039  # mm/month

    def validate(self) -> "SvrHyper":
        for name in ("kernel_size", "box", "epsilon"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidParams(f"{name} must be positive, got {v}")
        return self


# Hyperparameters reported for the clinical cohort, by feature family
LOCAL_HYPER = SvrHyper(kernel_size=1.72, box=0.41, epsilon=0.008)
PCA_HYPER = SvrHyper(kernel_size=1.89, box=1.82, epsilon=0.039)


def gaussian_kernel(A, B, sigma: float) -> np.ndarray:
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-np.maximum(d2, 0.0) / (2.0 * sigma * sigma))


@dataclass(frozen=True, eq=False)
class SvrModel:
    support: np.ndarray  # training row indices with nonzero dual coefficient
    support_vectors: np.ndarray  # standardised feature rows
    dual_coef: np.ndarray  # alpha - alpha*
    bias: float
    hyper: SvrHyper
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    n_iter: int
    converged: bool

    def decision(self, Z) -> np.ndarray:
        """Prediction for already-standardised rows."""
        if len(self.dual_coef) == 0:
            return np.full(len(Z), self.bias)
        return gaussian_kernel(Z, self.support_vectors, self.hyper.kernel_size) @ self.dual_coef + self.bias

    def standardise(self, X) -> np.ndarray:
        return (X - self.feature_mean) / self.feature_scale


def standardisation(X):
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    return mean, np.where(sd > 0, sd, 1.0)


def fit_svr(X, y, hyper: SvrHyper = PCA_HYPER, tol: float = KKT_TOL,
            max_iter: int = MAX_ITER) -> SvrModel:
    """Solve the epsilon-SVR dual on standardised ``X`` (N, p) for targets ``y``."""
    hyper.validate()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or len(X) != len(y):
        raise DimensionMismatch(f"X {X.shape} and y {y.shape} disagree")
    mean, scale = standardisation(X)
    Z = (X - mean) / scale
    K = gaussian_kernel(Z, Z, hyper.kernel_size)
    n = len(y)
    beta, G, n_iter, converged = smo_epsilon_svr(K, y, float(hyper.box), float(hyper.epsilon),
                                                 float(tol), int(max_iter))
    if not converged:
        warnings.warn(f"SMO stopped at the {max_iter} iteration cap before reaching KKT "
                      f"tolerance {tol}", ConvergenceWarning, stacklevel=2)
    coef = beta[:n] - beta[n:]
    bias = _bias(beta, G, y, K @ coef, float(hyper.box))
    if converged:
        coef, bias = _polish(K, y, coef, bias, hyper)
    sv = np.flatnonzero(coef != 0.0)
    return SvrModel(sv, Z[sv], coef[sv], bias, hyper, mean, scale, int(n_iter), bool(converged))


def _bias(beta, G, y, fitted, C):
    n = len(y)
    s = np.concatenate([np.ones(n), -np.ones(n)])
    yG = s * G
    free = (beta > 0) & (beta < C)
    if free.any():
        return float(-yG[free].mean())
    # without free variables any bias in [lo, hi] is optimal; take the one
    # closest to the mean residual (the mean itself when nothing is active)
    at_up = beta >= C
    upper = np.where(at_up, s < 0, s > 0)  # bounds on rho from above
    ub = yG[upper].min() if upper.any() else np.inf
    lb = yG[~upper].max() if (~upper).any() else -np.inf
    return float(np.clip(np.mean(y - fitted), -ub, -lb))


def _violation(K, y, coef, bias, eps, C):
    r = y - K @ coef - bias
    tiny = 1e-12 * max(C, 1.0)
    v = np.where(np.abs(coef) <= tiny, np.maximum(np.abs(r) - eps, 0.0), 0.0)
    free = (np.abs(coef) > tiny) & (np.abs(coef) < C - tiny)
    v = np.where(free, np.abs(r - eps * np.sign(coef)), v)
    v = np.where(coef >= C - tiny, np.maximum(eps - r, 0.0), v)
    v = np.where(coef <= -C + tiny, np.maximum(r + eps, 0.0), v)
    return float(v.max()) if len(v) else 0.0


def _polish(K, y, coef, bias, hyper):
    """Exact solution on the active set SMO found.

    Bounded and zero coefficients stay put; the free ones and the bias solve
    the linear conditions r_i = eps * sign(a_i), sum(a) = 0. SMO stops at the
    KKT tolerance, so without this step the answer depends on visiting order
    (row permutations change predictions by ~1e-7). Kept only if it stays
    inside the box with unchanged signs and does not violate KKT more.
    """
    C, eps = float(hyper.box), float(hyper.epsilon)
    tiny = 1e-12 * max(C, 1.0)
    free = np.flatnonzero((np.abs(coef) > tiny) & (np.abs(coef) < C - tiny))
    if len(free) == 0:
        return coef, bias
    fixed = np.setdiff1d(np.arange(len(y)), free)
    sign = np.sign(coef[free])
    m = len(free)
    A = np.zeros((m + 1, m + 1))
    A[:m, :m] = K[np.ix_(free, free)]
    A[:m, m] = 1.0
    A[m, :m] = 1.0
    rhs = np.empty(m + 1)
    rhs[:m] = y[free] - eps * sign - K[np.ix_(free, fixed)] @ coef[fixed]
    rhs[m] = -coef[fixed].sum()
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return coef, bias
    if not np.all(np.isfinite(sol)):
        return coef, bias
    a_free = sol[:m]
    if np.any(np.sign(a_free) != sign) or np.any(np.abs(a_free) >= C):
        return coef, bias
    polished = coef.copy()
    polished[free] = a_free
    if _violation(K, y, polished, sol[m], eps, C) > _violation(K, y, coef, bias, eps, C):
        return coef, bias
    return polished, float(sol[m])


def svr_predict(model: SvrModel, x) -> np.ndarray:
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != len(model.feature_mean):
        raise DimensionMismatch(
            f"expected {len(model.feature_mean)} features, got {X.shape[1]}")
    return model.decision(model.standardise(X))


def kkt_violation(model: SvrModel, X, y) -> float:
    """Largest violation of the epsilon-SVR optimality conditions on training data.

    With r = y - f(x) and coefficient a = alpha - alpha*: a = 0 needs
    |r| <= eps; 0 < a < C needs r = eps; a = C needs r >= eps, and the
    mirrored conditions for negative a.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    Z = model.standardise(X)
    coef = np.zeros(len(y))
    coef[model.support] = model.dual_coef
    r = y - model.decision(Z)
    eps, C = model.hyper.epsilon, model.hyper.box
    tiny = 1e-12 * max(C, 1.0)
    v = np.zeros(len(y))
    zero = np.abs(coef) <= tiny
    v[zero] = np.maximum(np.abs(r[zero]) - eps, 0.0)
    pos_free = (coef > tiny) & (coef < C - tiny)
    neg_free = (coef < -tiny) & (coef > -C + tiny)
    v[pos_free] = np.abs(r[pos_free] - eps)
    v[neg_free] = np.abs(r[neg_free] + eps)
    pos_box = coef >= C - tiny
    neg_box = coef <= -C + tiny
    v[pos_box] = np.maximum(eps - r[pos_box], 0.0)
    v[neg_box] = np.maximum(r[neg_box] + eps, 0.0)
    return float(v.max()) if len(v) else 0.0


def dual_objective(model: SvrModel, X, y) -> float:
    """0.5 a'Ka - y'a + eps |a|_1 at the fitted coefficients (lower is better)."""
    Z = model.standardise(np.asarray(X, dtype=float))
    coef = np.zeros(len(Z))
    coef[model.support] = model.dual_coef
    K = gaussian_kernel(Z, Z, model.hyper.kernel_size)
    return float(0.5 * coef @ K @ coef - np.asarray(y, float) @ coef
                 + model.hyper.epsilon * np.abs(coef).sum())


def save_svr(model: SvrModel, path) -> Path:
    path = Path(path)
    doc = {
        "hyper": asdict(model.hyper),
        "bias": model.bias,
        "support": model.support.tolist(),
        "support_vectors": model.support_vectors.tolist(),
        "dual_coef": model.dual_coef.tolist(),
        "feature_mean": model.feature_mean.tolist(),
        "feature_scale": model.feature_scale.tolist(),
        "n_iter": model.n_iter,
        "converged": model.converged,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_svr(path) -> SvrModel:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"no SVR model at {path}")
    d = json.loads(path.read_text())
    p = len(d["feature_mean"])
    return SvrModel(
        support=np.array(d["support"], dtype=int),
        support_vectors=np.array(d["support_vectors"], dtype=float).reshape(-1, p),
        dual_coef=np.array(d["dual_coef"], dtype=float),
        bias=float(d["bias"]),
        hyper=SvrHyper(**d["hyper"]),
        feature_mean=np.array(d["feature_mean"], dtype=float),
        feature_scale=np.array(d["feature_scale"], dtype=float),
        n_iter=int(d["n_iter"]),
        converged=bool(d["converged"]),
    )


class EpsilonSVR(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_svr`."""

    def __init__(self, kernel_size: float = 1.89, box: float = 1.82, epsilon: float = 0.039,
                 tol: float = KKT_TOL, max_iter: int = MAX_ITER):
        self.kernel_size = kernel_size
        self.box = box
        self.epsilon = epsilon
        self.tol = tol
        self.max_iter = max_iter

    @property
    def hyper(self) -> SvrHyper:
        return SvrHyper(self.kernel_size, self.box, self.epsilon)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        self.model_ = fit_svr(X, y, self.hyper, self.tol, self.max_iter)
        self.n_features_in_ = X.shape[1]
        self.support_ = self.model_.support
        self.dual_coef_ = self.model_.dual_coef
        self.intercept_ = self.model_.bias
        self.converged_ = self.model_.converged
        self.n_iter_ = self.model_.n_iter
        return self

    def predict(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=float)
        return svr_predict(self.model_, X)
