"""Single-response partial least squares (PLS1, NIPALS).

Shapes are rows here (N x 3K), the usual regression layout. X is centred,
the response is centred and scaled to unit variance. Each component takes
b = X'y / |X'y|, scores t = X b and loadings p = X't / t't, then deflates X;
y itself is never deflated, which changes nothing for one response because
the deflated X is already orthogonal to every earlier score.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import ConstantResponse, DimensionMismatch, MissingArtifact, RankDeficient, UnknownMode

_TINY = 1e-12


@dataclass(frozen=True, eq=False)
class PlsModel:
    weights: np.ndarray  # B_w (3K, M): b_m, unit norm
    x_loadings: np.ndarray  # P (3K, M)
    x_scores: np.ndarray  # T (N, M)
    y_scores: np.ndarray  # U (N, M); u = y for a single response
    y_loadings: np.ndarray  # q (M,)
    inner: np.ndarray  # D diagonal (M,)
    x_mean: np.ndarray  # (3K,)
    x_scale: np.ndarray  # (3K,), ones unless columns were standardised
    y_mean: float
    y_scale: float
    coef: np.ndarray  # B (3K,), on centred (and scaled) x, standardised y
    residual: np.ndarray  # E (N, 3K), X left after M deflations

    @property
    def n_components(self) -> int:
        return self.weights.shape[1]

    @property
    def intercept(self) -> float:
        """y at x = 0 in original units."""
        return float(self.y_mean - (self.x_mean / self.x_scale) @ self.coef * self.y_scale)

    def coef_original(self) -> np.ndarray:
        """dy/dx in original units, so that y = x @ coef_original() + intercept."""
        return self.coef / self.x_scale * self.y_scale


@dataclass(frozen=True)
class ScoreVector:
    t: np.ndarray
    patient_id: str | None = None


def fit_pls(X, y, M: int, scale_x: bool = False) -> PlsModel:
    """NIPALS PLS1 with ``M`` components.

    ``X`` is (N, 3K) with one flattened shape per row. ``scale_x`` divides each
    column by its standard deviation as well (off by default: it would weigh
    still coordinates as much as moving ones).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or len(y) != X.shape[0]:
        raise DimensionMismatch(f"X {X.shape} and y {y.shape} disagree")
    N, P = X.shape
    if N < 3:
        raise DimensionMismatch("PLS needs at least 3 samples")
    if not 1 <= M <= min(N - 1, P):
        raise DimensionMismatch(f"M={M} outside 1..{min(N - 1, P)}")
    y_mean = float(y.mean())
    y_scale = float(y.std(ddof=1))
    if not y_scale > _TINY * max(1.0, abs(y_mean)):
        raise ConstantResponse("the response is constant")
    x_mean = X.mean(axis=0)
    x_scale = np.ones(P)
    if scale_x:
        sd = X.std(axis=0, ddof=1)
        x_scale = np.where(sd > 0, sd, 1.0)
    E = (X - x_mean) / x_scale
    ys = (y - y_mean) / y_scale
    W = np.zeros((P, M))
    Pl = np.zeros((P, M))
    T = np.zeros((N, M))
    q = np.zeros(M)
    first = None
    for m in range(M):
        w = E.T @ ys
        nw = np.linalg.norm(w)
        first = nw if first is None else first
        if nw <= 1e-10 * first:
            raise RankDeficient(f"X is exhausted after {m} component(s)")
        w /= nw
        nz = np.flatnonzero(np.abs(w) > _TINY * np.abs(w).max())
        if w[nz[0]] < 0:
            w = -w
        t = E @ w
        tt = t @ t
        p = E.T @ t / tt
        q[m] = ys @ t / tt
        E = E - np.outer(t, p)
        W[:, m], Pl[:, m], T[:, m] = w, p, t
    coef = W @ np.linalg.solve(Pl.T @ W, q)
    U = np.repeat(ys[:, None], M, axis=1)
    return PlsModel(W, Pl, T, U, q, q.copy(), x_mean, x_scale, y_mean, y_scale, coef, E)


def _centre(model: PlsModel, shape) -> np.ndarray:
    x = np.asarray(shape, dtype=float).reshape(-1)
    if x.shape != model.x_mean.shape:
        raise DimensionMismatch(f"shape has {x.size} values, model expects {model.x_mean.size}")
    return (x - model.x_mean) / model.x_scale


def pls_scores(model: PlsModel, shape, patient_id: str | None = None) -> ScoreVector:
    """Scores of one shape by the same deflation sequence used in fitting."""
    x = _centre(model, shape)
    t = np.zeros(model.n_components)
    for m in range(model.n_components):
        t[m] = x @ model.weights[:, m]
        x = x - t[m] * model.x_loadings[:, m]
    return ScoreVector(t, patient_id)


def pls_predict(model: PlsModel, shape) -> float:
    return float(_centre(model, shape) @ model.coef * model.y_scale + model.y_mean)


def pls_mode_shape(model: PlsModel, m: int, xi: float) -> np.ndarray:
    """Mean shape moved along loading m (1-based) by xi score standard deviations."""
    if not 1 <= m <= model.n_components:
        raise UnknownMode(f"PLS component {m} not in 1..{model.n_components}")
    sd = model.x_scores[:, m - 1].std(ddof=1)
    return model.x_mean + xi * sd * model.x_loadings[:, m - 1] * model.x_scale


# ---------------------------------------------------------------------------
# Persistence: one JSON for scalars plus CSV matrices

_MATRICES = ("weights", "x_loadings", "x_scores", "y_scores", "residual")
_VECTORS = ("y_loadings", "inner", "x_mean", "x_scale", "coef")


def _write_csv(path, arr):
    arr = np.atleast_2d(arr)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in arr:
            w.writerow([repr(float(v)) for v in row])


def _read_csv(path):
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])


def save_pls(model: PlsModel, directory) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    meta = {"n_components": model.n_components, "y_mean": model.y_mean,
            "y_scale": model.y_scale, "files": {}}
    for name in _MATRICES + _VECTORS:
        fname = f"{name}.csv"
        arr = getattr(model, name)
        _write_csv(root / fname, arr if arr.ndim == 2 else arr[None, :])
        meta["files"][name] = fname
    path = root / "pls_model.json"
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_pls(directory) -> PlsModel:
    root = Path(directory)
    path = root / "pls_model.json"
    if not path.exists():
        raise MissingArtifact(f"no PLS model at {path}")
    meta = json.loads(path.read_text())
    arrays = {}
    for name in _MATRICES + _VECTORS:
        a = _read_csv(root / meta["files"][name])
        arrays[name] = a if name in _MATRICES else a[0]
    return PlsModel(y_mean=meta["y_mean"], y_scale=meta["y_scale"], **arrays)


class PLS1Regression(RegressorMixin, BaseEstimator):
    """Estimator wrapper; ``transform`` returns PLS scores."""

    def __init__(self, n_components: int = 3, scale_x: bool = False):
        self.n_components = n_components
        self.scale_x = scale_x

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        self.model_ = fit_pls(X, y, self.n_components, self.scale_x)
        self.n_features_in_ = X.shape[1]
        self.coef_ = self.model_.coef_original()
        self.intercept_ = self.model_.intercept
        return self

    def _check(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X

    def predict(self, X):
        X = self._check(X)
        return X @ self.coef_ + self.intercept_

    def transform(self, X):
        X = self._check(X)
        return np.array([pls_scores(self.model_, x).t for x in X])
