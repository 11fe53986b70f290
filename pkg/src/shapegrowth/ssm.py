"""PCA statistical shape model over iso-topological grids.

Shapes are stacked as columns of a 3K x N data matrix (x1 y1 z1 ... xK yK zK
per column). The model comes from an economy SVD of the centred matrix, so the
3K x 3K covariance is never formed: eigenvalues are s_j**2 / (N - 1).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DegenerateData, DimensionMismatch, OutOfRangeWarning, TopologyMismatch, UnknownMode
from .mesh import SurfaceMesh

XI_LIMIT = 3.0
# singular values below this fraction of the largest count as zero
_RANK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DataMatrix:
    X: np.ndarray  # (3K, N)
    mean_shape: np.ndarray  # (3K,)
    patient_ids: tuple[str, ...]
    centered: bool = False

    @property
    def K(self) -> int:
        return self.X.shape[0] // 3

    @property
    def N(self) -> int:
        return self.X.shape[1]

    def shape_vector(self, i: int) -> np.ndarray:
        """Absolute coordinates of patient i (3K,)."""
        col = self.X[:, i]
        return col + self.mean_shape if self.centered else col.copy()

    def vertices(self, i: int) -> np.ndarray:
        return self.shape_vector(i).reshape(-1, 3)

    def deviations(self) -> np.ndarray:
        return self.X if self.centered else self.X - self.mean_shape[:, None]


def flatten(mesh_or_vertices) -> np.ndarray:
    v = mesh_or_vertices.vertices if isinstance(mesh_or_vertices, SurfaceMesh) else mesh_or_vertices
    return np.asarray(v, dtype=float).reshape(-1)


def assemble_data_matrix(grids, patient_ids=None, centered: bool = False) -> DataMatrix:
    """Stack iso-topological grids into columns.

    ``grids`` is a list of SurfaceMesh or anything with ``.grids`` and ``.ids``
    (an IsoTopologicalCohort).
    """
    if hasattr(grids, "grids"):
        patient_ids = patient_ids or list(getattr(grids, "ids", []))
        grids = grids.grids
    grids = list(grids)
    if not grids:
        raise ValueError("no grids")
    first = grids[0]
    for k, g in enumerate(grids[1:], start=1):
        if not first.same_connectivity(g):
            raise TopologyMismatch(f"grid {k} does not share connectivity with grid 0")
    X = np.stack([flatten(g) for g in grids], axis=1)
    mean = X.mean(axis=1)
    if centered:
        X = X - mean[:, None]
    ids = tuple(patient_ids) if patient_ids else tuple(f"{i:03d}" for i in range(len(grids)))
    if len(ids) != X.shape[1]:
        raise DimensionMismatch(f"{len(ids)} ids for {X.shape[1]} grids")
    return DataMatrix(X, mean, ids, centered)


@dataclass(frozen=True, eq=False)
class ShapeModel:
    mean_shape: np.ndarray  # (3K,)
    modes: np.ndarray  # (3K, M_max), orthonormal columns
    eigenvalues: np.ndarray  # (M_max,), descending
    singular_values: np.ndarray  # (M_max,)
    n_samples: int
    degenerate: bool = False

    @property
    def m_max(self) -> int:
        return self.modes.shape[1]

    @property
    def total_variance(self) -> float:
        return float(self.eigenvalues.sum())


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray
    patient_id: str | None = None


def _sign_fix(modes):
    # largest-magnitude entry of each mode positive
    idx = np.argmax(np.abs(modes), axis=0)
    sign = np.sign(modes[idx, np.arange(modes.shape[1])])
    sign[sign == 0] = 1.0
    return modes * sign, sign


def fit_ssm(data, allow_degenerate: bool = False) -> ShapeModel:
    """Economy SVD of the centred data matrix.

    ``data`` is a DataMatrix or a raw (3K, N) array. Modes are kept up to the
    numerical rank (at most N - 1). Identical shapes raise DegenerateData
    unless ``allow_degenerate``, which returns a flagged model with no modes.
    """
    if isinstance(data, DataMatrix):
        dev, mean, N = data.deviations(), data.mean_shape, data.N
    else:
        X = np.asarray(data, dtype=float)
        if X.ndim != 2:
            raise DimensionMismatch(f"data matrix must be 2D, got shape {X.shape}")
        mean = X.mean(axis=1)
        dev, N = X - mean[:, None], X.shape[1]
    if N < 2:
        raise DegenerateData("need at least 2 shapes")
    U, s, _ = np.linalg.svd(dev, full_matrices=False)
    scale = s[0] if len(s) else 0.0
    keep = min(N - 1, dev.shape[0])
    rank = int(np.sum(s[:keep] > _RANK_TOL * max(scale, np.finfo(float).tiny))) if scale > 0 else 0
    if rank == 0:
        if not allow_degenerate:
            raise DegenerateData("all shapes are identical; the model has no modes")
        return ShapeModel(mean, np.zeros((dev.shape[0], 0)), np.zeros(0), np.zeros(0), N, True)
    modes, _ = _sign_fix(U[:, :rank])
    s = s[:rank]
    return ShapeModel(mean, modes, s ** 2 / (N - 1), s, N)


def _check_m(model: ShapeModel, M):
    if M is None:
        return model.m_max
    if not 0 <= M <= model.m_max:
        raise DimensionMismatch(f"M={M} outside 0..{model.m_max}")
    return M


def project_weights(model: ShapeModel, shape, M: int | None = None,
                    patient_id: str | None = None) -> WeightVector:
    """w = phi_1..M^T (x - mean)."""
    x = flatten(shape)
    if x.shape != model.mean_shape.shape:
        raise DimensionMismatch(f"shape has {x.size} values, model expects {model.mean_shape.size}")
    M = _check_m(model, M)
    return WeightVector(model.modes[:, :M].T @ (x - model.mean_shape), patient_id)


def reconstruct(model: ShapeModel, w) -> np.ndarray:
    """x = mean + phi_1..M w, with M = len(w)."""
    w = np.asarray(w.w if isinstance(w, WeightVector) else w, dtype=float).ravel()
    if len(w) > model.m_max:
        raise DimensionMismatch(f"{len(w)} weights for a model with {model.m_max} modes")
    return model.mean_shape + model.modes[:, :len(w)] @ w


def mode_shape(model: ShapeModel, j: int, xi: float, xi_limit: float = XI_LIMIT) -> np.ndarray:
    """mean + xi sqrt(lambda_j) phi_j for 1-based mode index j."""
    if not 1 <= j <= model.m_max:
        raise UnknownMode(f"mode {j} not in 1..{model.m_max}")
    if abs(xi) > xi_limit:
        warnings.warn(f"xi={xi} beyond +/-{xi_limit} standard deviations", OutOfRangeWarning,
                      stacklevel=2)
    return model.mean_shape + xi * np.sqrt(model.eigenvalues[j - 1]) * model.modes[:, j - 1]


def compactness(model: ShapeModel, M: int) -> float:
    """Share of total variance captured by the first M modes."""
    M = _check_m(model, M)
    total = model.total_variance
    if total == 0:
        return 1.0
    return float(model.eigenvalues[:M].sum() / total)


def compactness_curve(model: ShapeModel) -> np.ndarray:
    """CN(M) for M = 1..M_max; the last entry is exactly 1."""
    if model.m_max == 0:
        return np.zeros(0)
    c = np.cumsum(model.eigenvalues) / model.total_variance
    c[-1] = 1.0
    return c


def generalization(data, M_list=None) -> np.ndarray:
    """Leave-one-out reconstruction error: mean over patients of |x_i - x_i(M)|**2.

    Each fold refits the model without patient i. Folds whose model has fewer
    than M modes reconstruct with all they have.
    """
    if isinstance(data, DataMatrix):
        X = data.deviations() + data.mean_shape[:, None]
    else:
        X = np.asarray(data, dtype=float)
    N = X.shape[1]
    if N < 3:
        raise DegenerateData("generalization needs at least 3 shapes")
    if M_list is None:
        M_list = range(1, min(N - 2, X.shape[0]) + 1)
    M_list = list(M_list)
    err = np.zeros((N, len(M_list)))
    for i in range(N):
        rest = np.delete(X, i, axis=1)
        model = fit_ssm(rest, allow_degenerate=True)
        d = X[:, i] - model.mean_shape
        w = model.modes.T @ d
        for k, M in enumerate(M_list):
            m = min(M, model.m_max)
            r = d - model.modes[:, :m] @ w[:m]
            err[i, k] = r @ r
    return err.mean(axis=0)


class ShapeModelPCA(TransformerMixin, BaseEstimator):
    """Estimator wrapper: rows of ``X`` are flattened shapes (N x 3K).

    ``transform`` gives mode weights, ``inverse_transform`` reconstructs.
    """

    def __init__(self, n_components: int | None = None):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.model_ = fit_ssm(X.T)
        m = self.model_.m_max if self.n_components is None else self.n_components
        if not 1 <= m <= self.model_.m_max:
            raise DimensionMismatch(f"n_components={m} outside 1..{self.model_.m_max}")
        self.n_components_ = m
        self.mean_ = self.model_.mean_shape
        self.components_ = self.model_.modes[:, :m].T
        self.explained_variance_ = self.model_.eigenvalues[:m]
        self.explained_variance_ratio_ = self.explained_variance_ / self.model_.total_variance
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return (X - self.mean_) @ self.components_.T

    def inverse_transform(self, W):
        check_is_fitted(self)
        W = check_array(W, dtype=float)
        return self.mean_ + W @ self.components_
