"""Growth-rate regression: feature ranking, leave-one-out evaluation, tuning
and the plot data built on fitted models."""

from __future__ import annotations

import csv
import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import betainc
from sklearn.base import clone

from .errors import (DegenerateData, DegenerateFeatureWarning, DimensionMismatch, InvalidParams,
                     UnknownFeature, UnknownMode)
from .svr import EpsilonSVR, SvrHyper

P_FLOOR = 1e-300
N_BINS = 10


# ---------------------------------------------------------------------------
# Feature table

@dataclass(frozen=True, eq=False)
class FeatureTable:
    names: tuple[str, ...]
    X: np.ndarray  # (N, p)
    y: np.ndarray  # (N,), mm/month
    ids: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim == 1:
            X = X[:, None]
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "names", tuple(self.names))
        ids = tuple(self.ids) if self.ids else tuple(f"{i:03d}" for i in range(len(y)))
        object.__setattr__(self, "ids", ids)
        if X.shape != (len(y), len(self.names)):
            raise DimensionMismatch(
                f"X is {X.shape} but there are {len(y)} targets and {len(self.names)} names")
        if len(set(self.names)) != len(self.names):
            raise InvalidParams("feature names must be unique")
        if len(ids) != len(y):
            raise DimensionMismatch(f"{len(ids)} ids for {len(y)} rows")
        if len(y) < 4:
            raise DegenerateData("a feature table needs at least 4 rows")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise InvalidParams("feature table contains missing or infinite values")

    @property
    def n(self) -> int:
        return len(self.y)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownFeature(name) from None

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.index(name)]

    def select(self, names: Sequence[str]) -> "FeatureTable":
        cols = [self.index(n) for n in names]
        return FeatureTable(tuple(names), self.X[:, cols], self.y, self.ids)

    def standardisation(self):
        """Column means and standard deviations (population, zero sd taken as 1)."""
        sd = self.X.std(axis=0)
        return self.X.mean(axis=0), np.where(sd > 0, sd, 1.0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["patient_id", *self.names, "GR"])
            for pid, row, t in zip(self.ids, self.X, self.y):
                w.writerow([pid, *(repr(float(v)) for v in row), repr(float(t))])

    @classmethod
    def from_csv(cls, path, target: str = "GR") -> "FeatureTable":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        ti = header.index(target)
        names = [h for k, h in enumerate(header) if k not in (0, ti)]
        X = [[float(v) for k, v in enumerate(r) if k not in (0, ti)] for r in body]
        return cls(tuple(names), np.array(X, dtype=float).reshape(len(body), len(names)),
                   np.array([float(r[ti]) for r in body]), tuple(r[0] for r in body))


# ---------------------------------------------------------------------------
# F-test ranking

def f_sf(F: float, d1: float, d2: float) -> float:
    """Upper tail P(X > F) of the F(d1, d2) distribution."""
    if F <= 0:
        return 1.0
    if math.isinf(F):
        return 0.0
    return float(betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * F)))


def equal_width_bins(x, n_bins: int = N_BINS) -> np.ndarray:
    """Bin index per value; the maximum falls in the last bin."""
    x = np.asarray(x, dtype=float)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros(len(x), dtype=int)
    k = np.floor((x - lo) / (hi - lo) * n_bins).astype(int)
    return np.clip(k, 0, n_bins - 1)


@dataclass(frozen=True)
class FTestResult:
    feature: str
    F: float
    p: float
    FS: float
    n_groups: int
    degenerate: bool = False


def _roundoff(y: np.ndarray) -> float:
    # squared-sum size of pure representation noise for values like y
    return len(y) * (1e-12 * float(np.abs(y).max(initial=0.0))) ** 2


def anova_f(groups_of_y) -> tuple[float, int, int]:
    """One-way ANOVA F statistic with its two degrees of freedom."""
    groups = [np.asarray(g, dtype=float) for g in groups_of_y if len(g)]
    y = np.concatenate(groups)
    k, n = len(groups), len(y)
    grand = y.mean()
    ssb = sum(len(g) * (g.mean() - grand) ** 2 for g in groups)
    ssw = sum(((g - g.mean()) ** 2).sum() for g in groups)
    d1, d2 = k - 1, n - k
    if d1 == 0 or d2 == 0:
        return float("nan"), d1, d2
    # relative thresholds keep round-off from turning 0/0 into a large F
    scale = ((y - grand) ** 2).sum()
    if scale <= _roundoff(y) or ssb <= 1e-14 * scale:
        return 0.0, d1, d2
    if ssw <= 1e-14 * scale:
        return float("inf"), d1, d2
    return float((ssb / d1) / (ssw / d2)), d1, d2


def ftest_feature(x, y, name: str = "x", n_bins: int = N_BINS) -> FTestResult:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.ptp(x) == 0:
        warnings.warn(f"feature {name!r} is constant; FS set to 0", DegenerateFeatureWarning,
                      stacklevel=3)
        return FTestResult(name, 0.0, 1.0, 0.0, 1, True)
    bins = equal_width_bins(x, n_bins)
    groups = [y[bins == b] for b in np.unique(bins)]
    F, d1, d2 = anova_f(groups)
    if math.isnan(F):
        warnings.warn(f"feature {name!r}: every bin holds one row, F is undefined; FS set to 0",
                      DegenerateFeatureWarning, stacklevel=3)
        return FTestResult(name, float("nan"), 1.0, 0.0, len(groups), True)
    p = max(f_sf(F, d1, d2), P_FLOOR)
    return FTestResult(name, F, p, -math.log(p), len(groups))


def ftest_rank(table: FeatureTable, n_bins: int = N_BINS) -> list[tuple[str, float]]:
    """(feature, FS) pairs sorted by FS descending; ties keep column order."""
    res = ftest_details(table, n_bins)
    return [(r.feature, r.FS) for r in res]


def ftest_details(table: FeatureTable, n_bins: int = N_BINS) -> list[FTestResult]:
    if n_bins < 2:
        raise InvalidParams("n_bins must be >= 2")
    res = [ftest_feature(table.X[:, j], table.y, nm, n_bins) for j, nm in enumerate(table.names)]
    order = sorted(range(len(res)), key=lambda j: (-res[j].FS, j))
    return [res[j] for j in order]


# ---------------------------------------------------------------------------
# Leave-one-out cross-validation

def _json_float(v):
    return float(v) if np.isfinite(v) else None


@dataclass
class CvReport:
    ids: list[str]
    y_true: np.ndarray
    y_pred: np.ndarray  # nan for failed folds
    failed: dict = field(default_factory=dict)  # id -> error message
    label: str = ""

    @property
    def ok(self) -> np.ndarray:
        return np.isfinite(self.y_pred)

    @property
    def partial(self) -> bool:
        return bool(self.failed)

    @property
    def per_fold(self) -> list[tuple[float, float]]:
        return list(zip(self.y_true.tolist(), self.y_pred.tolist()))

    @property
    def mse(self) -> float:
        ok = self.ok
        if not ok.any():
            return float("nan")
        return float(np.mean((self.y_true[ok] - self.y_pred[ok]) ** 2))

    @property
    def rmse(self) -> float:
        return math.sqrt(self.mse)

    @property
    def r2(self) -> float:
        ok = self.ok
        yt, yp = self.y_true[ok], self.y_pred[ok]
        if len(yt) == 0:
            return float("nan")
        sse = float(((yt - yp) ** 2).sum())
        sst = float(((yt - yt.mean()) ** 2).sum())
        if sst <= _roundoff(yt):
            return 1.0 if sse <= _roundoff(yt) else float("nan")
        return 1.0 - sse / sst

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "n": len(self.ids),
            "rmse": _json_float(self.rmse),
            "r2": _json_float(self.r2),
            "partial": self.partial,
            "failed": dict(sorted(self.failed.items())),
        }

    def save(self, directory, stem: str | None = None) -> tuple[Path, Path]:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        stem = stem or self.label or "cv"
        jpath, cpath = root / f"{stem}.json", root / f"{stem}_folds.csv"
        jpath.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        with open(cpath, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["patient_id", "GR_true", "GR_pred"])
            for pid, t, p in zip(self.ids, self.y_true, self.y_pred):
                w.writerow([pid, repr(float(t)), repr(float(p)) if np.isfinite(p) else ""])
        return jpath, cpath

    @classmethod
    def load(cls, directory, stem: str) -> "CvReport":
        root = Path(directory)
        meta = json.loads((root / f"{stem}.json").read_text())
        with open(root / f"{stem}_folds.csv", newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        return cls([r[0] for r in rows], np.array([float(r[1]) for r in rows]),
                   np.array([float(r[2]) if r[2] else np.nan for r in rows]),
                   dict(meta.get("failed", {})), meta.get("label", stem))


Fitter = Callable[[np.ndarray, np.ndarray], Callable[[np.ndarray], np.ndarray]]


def _as_fitter(fitter) -> Fitter:
    """Accept an unfitted estimator or a callable (X, y) -> predict function."""
    if hasattr(fitter, "fit") and hasattr(fitter, "predict"):
        def fit(X, y):
            return clone(fitter).fit(X, y).predict
        return fit
    return fitter


def loo_cv(table: FeatureTable, fitter, label: str = "") -> CvReport:
    """Fit on N-1 rows and predict the held-out row, for every row.

    A fold whose fit raises is recorded in ``failed`` and left out of the
    metrics.
    """
    fit = _as_fitter(fitter)
    N = table.n
    pred = np.full(N, np.nan)
    failed = {}
    for i in range(N):
        keep = np.arange(N) != i
        try:
            predict = fit(table.X[keep], table.y[keep])
            pred[i] = float(np.ravel(predict(table.X[i:i + 1]))[0])
        except Exception as exc:  # noqa: BLE001 - any fit error marks the fold
            failed[table.ids[i]] = f"{type(exc).__name__}: {exc}"
    return CvReport(list(table.ids), table.y.copy(), pred, failed, label)


# ---------------------------------------------------------------------------
# Hyperparameter search

def log_grid(lo: float, hi: float, n: int) -> list[float]:
    if n == 1:
        return [float(lo)]
    return [float(v) for v in np.geomspace(lo, hi, n)]


@dataclass(frozen=True)
class TuneResult:
    best: SvrHyper
    best_mse: float
    trials: tuple[tuple[SvrHyper, float], ...]


def tune_svr(table: FeatureTable, grid: dict, seed: int = 0, n_iter: int | None = None) -> TuneResult:
    """LOO-MSE search over ``grid`` ({'kernel_size': [...], 'box': [...], 'epsilon': [...]}).

    Exhaustive unless ``n_iter`` is smaller than the grid, in which case
    ``n_iter`` points are drawn without replacement using ``seed``. Ties go to
    the smaller box constraint, then the smaller kernel size.
    """
    axes = [sorted(float(v) for v in grid[k]) for k in ("kernel_size", "box", "epsilon")]
    if not all(axes):
        raise InvalidParams("every grid axis needs at least one value")
    points = list(itertools.product(*axes))
    if n_iter is not None and n_iter < len(points):
        rng = np.random.default_rng(seed)
        points = [points[k] for k in sorted(rng.choice(len(points), n_iter, replace=False))]
    trials = []
    for s, c, e in points:
        h = SvrHyper(s, c, e)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = loo_cv(table, EpsilonSVR(s, c, e))
        trials.append((h, rep.mse if not rep.partial else float("inf")))
    best = min(trials, key=lambda t: (t[1], t[0].box, t[0].kernel_size, t[0].epsilon))
    return TuneResult(best[0], best[1], tuple(trials))


# ---------------------------------------------------------------------------
# Partial dependence and regression surfaces

@dataclass(frozen=True, eq=False)
class PdpCurve:
    feature: str
    grid: np.ndarray
    values: np.ndarray


def partial_dependence(model, table: FeatureTable, feature: str, grid_points: int = 100) -> PdpCurve:
    """Mean prediction over all rows with ``feature`` swept across its observed range."""
    j = table.index(feature)
    x = table.X[:, j]
    grid = np.linspace(x.min(), x.max(), grid_points)
    predict = model.predict if hasattr(model, "predict") else model
    Xg = np.repeat(table.X[None, :, :], grid_points, axis=0)
    Xg[:, :, j] = grid[:, None]
    vals = np.asarray(predict(Xg.reshape(-1, table.X.shape[1]))).reshape(grid_points, table.n)
    return PdpCurve(feature, grid, vals.mean(axis=1))


@dataclass(frozen=True, eq=False)
class RegressionSurface:
    modes: tuple[int, int]
    w1: np.ndarray  # grid along the first mode (mm)
    w2: np.ndarray
    values: np.ndarray  # (len(w1), len(w2)) growth rate

    def rows(self):
        for a, u in enumerate(self.w1):
            for b, v in enumerate(self.w2):
                yield float(u), float(v), float(self.values[a, b])

    def to_csv(self, path) -> None:
        j1, j2 = self.modes
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"w{j1}", f"w{j2}", "GR"])
            for row in self.rows():
                w.writerow([repr(v) for v in row])

    def to_svg(self, path) -> None:
        from .plots import heatmap_svg
        heatmap_svg(path, self.w1, self.w2, self.values, f"w{self.modes[0]}",
                    f"w{self.modes[1]}", "GR (mm/month)")


def regression_surface(model, feature_modes: Sequence[int], eigenvalues, mode_pair=(1, 2),
                       fixed: dict | None = None, xi_lim: float = 3.0,
                       grid: int = 50) -> RegressionSurface:
    """Predicted GR over two PCA weights spanning +/- xi_lim standard deviations.

    ``feature_modes`` lists the 1-based PCA mode behind each model column;
    other columns stay at ``fixed`` (default 0, the mean shape).
    """
    modes = list(feature_modes)
    eig = np.asarray(eigenvalues, dtype=float)
    for m in mode_pair:
        if m not in modes:
            raise UnknownMode(f"mode {m} is not a model feature (features: {modes})")
        if not 1 <= m <= len(eig):
            raise UnknownMode(f"mode {m} has no eigenvalue")
    if grid < 1:
        raise InvalidParams("grid must be >= 1")
    fixed = dict(fixed or {})
    base = np.array([float(fixed.get(m, 0.0)) for m in modes])

    def axis(m):
        if grid == 1:
            return np.array([float(fixed.get(m, 0.0))])
        lim = xi_lim * math.sqrt(eig[m - 1])
        return np.linspace(-lim, lim, grid)

    j1, j2 = mode_pair
    a1, a2 = axis(j1), axis(j2)
    W = np.repeat(base[None, :], len(a1) * len(a2), axis=0)
    W[:, modes.index(j1)] = np.repeat(a1, len(a2))
    W[:, modes.index(j2)] = np.tile(a2, len(a1))
    predict = model.predict if hasattr(model, "predict") else model
    vals = np.asarray(predict(W)).reshape(len(a1), len(a2))
    return RegressionSurface((j1, j2), a1, a2, vals)
