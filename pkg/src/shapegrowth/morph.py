"""Landmark-driven RBF morphing and iso-topological cohort grids.

A template surface is bent onto each target in two steps: a cubic radial
basis function field with a linear polynomial carries the template's
pseudo-landmarks onto the target's, then every node is projected onto the
target along its normal. Repeating this from the mean of the first round's
grids gives the final cohort, all sharing the template connectivity.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from .errors import (DimensionMismatch, MissingArtifact, ProjectionFailure, SingularSystem,
                     TopologyMismatch)
from .geometry import SplineSet, build_splines, extract_centerline
from .mesh import QualityReport, SurfaceLocator, SurfaceMesh, load_mesh, mesh_quality, save_mesh

DUPLICATE_TOL = 1e-9  # mm
DEFAULT_PROJ_TOL = 0.05  # mm
SEARCH_RADIUS_EDGES = 5.0
MAX_MISS_FRACTION = 0.01


# ---------------------------------------------------------------------------
# Radial basis function field

def _cubic(r):
    return r * r * r


def _poly_basis(x):
    return np.hstack([np.ones((len(x), 1)), x])


@dataclass(frozen=True, eq=False)
class RbfField:
    """s(x) = sum_i gamma_i |x - x_i|^3 + beta_0 + beta_1 x + beta_2 y + beta_3 z."""

    source_points: np.ndarray  # (n, 3)
    weights: np.ndarray  # gamma, (n, 3)
    poly_coeffs: np.ndarray  # beta, (4, 3): constant row then x, y, z rows
    kernel: str = "cubic"

    @property
    def n(self) -> int:
        return len(self.source_points)

    def __call__(self, points, chunk: int = 4096) -> np.ndarray:
        return rbf_eval(self, points, chunk)

    def warp(self, points) -> np.ndarray:
        """New node positions x + s(x)."""
        points = np.asarray(points, dtype=float)
        return points + rbf_eval(self, points)


def block_matrix(sources) -> np.ndarray:
    """The symmetric (n+4)x(n+4) interpolation matrix [[M, P], [P^T, 0]]."""
    x = np.asarray(sources, dtype=float)
    n = len(x)
    r = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    A = np.zeros((n + 4, n + 4))
    A[:n, :n] = _cubic(r)
    P = _poly_basis(x)
    A[:n, n:] = P
    A[n:, :n] = P.T
    return A


def rbf_fit(sources, displacements) -> RbfField:
    """Fit the cubic RBF interpolant of ``displacements`` prescribed at ``sources``.

    One symmetric-indefinite factorisation serves all three components.
    """
    x = np.asarray(sources, dtype=float)
    g = np.asarray(displacements, dtype=float)
    if x.ndim != 2 or x.shape[1] != 3 or g.shape != x.shape:
        raise DimensionMismatch(
            f"sources {x.shape} and displacements {g.shape} must both be (n, 3)")
    n = len(x)
    if n < 4:
        raise SingularSystem(f"need at least 4 source points, got {n}")
    if not (np.isfinite(x).all() and np.isfinite(g).all()):
        raise SingularSystem("non-finite source points or displacements")
    pairs = cKDTree(x).query_pairs(DUPLICATE_TOL, output_type="ndarray")
    if len(pairs):
        i, j = pairs[0]
        raise SingularSystem(f"source points {i} and {j} coincide within {DUPLICATE_TOL} mm")
    centred = x - x.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[-1] <= 1e-9 * max(sv[0], 1.0):
        raise SingularSystem("source points are coplanar; the linear polynomial is undetermined")
    A = block_matrix(x)
    rhs = np.vstack([g, np.zeros((4, 3))])
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            sol = scipy.linalg.solve(A, rhs, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
        raise SingularSystem(f"RBF block system is singular: {exc}") from exc
    return RbfField(_ro(x), _ro(sol[:n]), _ro(sol[n:]))


def rbf_eval(field: RbfField, points, chunk: int = 4096) -> np.ndarray:
    """Displacements s(x) at ``points`` (m, 3)."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if p.shape[1] != 3:
        raise DimensionMismatch(f"points must be (m, 3), got {p.shape}")
    out = _poly_basis(p) @ field.poly_coeffs
    for lo in range(0, len(p), chunk):
        r = np.linalg.norm(p[lo:lo + chunk, None, :] - field.source_points[None], axis=2)
        out[lo:lo + chunk] += _cubic(r) @ field.weights
    return out


def _ro(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Pseudo-landmarks

@dataclass(frozen=True, eq=False)
class PseudoLandmarkSet:
    points: np.ndarray  # (8 * n_per_spline, 3): ICL, ECL, laterals 1..6
    n_per_spline: int

    def __post_init__(self):
        if self.points.shape != (8 * self.n_per_spline, 3):
            raise DimensionMismatch(
                f"expected {8 * self.n_per_spline} landmarks, got {self.points.shape}")

    def spline(self, k: int) -> np.ndarray:
        return self.points[k * self.n_per_spline:(k + 1) * self.n_per_spline]


def resample_polyline(points, n: int) -> np.ndarray:
    """``n`` points at equal arclength along a polyline, both ends included."""
    p = np.asarray(points, dtype=float)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(p, axis=0), axis=1))])
    st = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(st, s, p[:, k]) for k in range(3)], axis=1)


def sample_pseudo_landmarks(splines: SplineSet, n_per_spline: int = 10) -> PseudoLandmarkSet:
    if n_per_spline < 2:
        raise ValueError("need at least 2 landmarks per spline")
    pts = np.vstack([resample_polyline(s, n_per_spline) for s in splines.ordered()])
    return PseudoLandmarkSet(_ro(pts), n_per_spline)


# ---------------------------------------------------------------------------
# Two-step morph

@dataclass(frozen=True)
class MorphReport:
    max_distance: float  # mm, nodes to target surface after projection
    mean_distance: float
    n_ray: int  # nodes placed by the normal ray
    n_nearest: int  # nodes placed by the nearest-point fallback
    n_missed: int  # nodes left where step 1 put them
    max_step1_distance: float  # mm, before projection
    within_tolerance: bool
    quality: QualityReport

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["quality"] = QualityReport(**d["quality"])
        return cls(**d)


def project_onto(mesh: SurfaceMesh, target: SurfaceMesh, search_radius: float | None = None,
                 locator: SurfaceLocator | None = None):
    """Move every node onto ``target`` along its vertex normal.

    Nodes whose normal line misses the target within ``search_radius`` take
    the nearest target point if that lies within the radius; the rest stay.
    Returns (projected vertices, ray mask, nearest mask).
    """
    loc = locator or SurfaceLocator(target)
    if search_radius is None:
        search_radius = SEARCH_RADIUS_EDGES * mesh_quality(target).mean_edge_length
    v = mesh.vertices
    pts, _, ray = loc.intersect_lines(v, mesh.vertex_normals(), search_radius)
    out = np.where(ray[:, None], pts, v)
    near = np.zeros(len(v), dtype=bool)
    if not ray.all():
        idx = np.nonzero(~ray)[0]
        q, d, _ = loc.nearest(v[idx])
        ok = d <= search_radius
        out[idx[ok]] = q[ok]
        near[idx[ok]] = True
    return out, ray, near


def morph_two_step(template: SurfaceMesh, template_lms: PseudoLandmarkSet, target: SurfaceMesh,
                   target_lms: PseudoLandmarkSet, proj_tol: float = DEFAULT_PROJ_TOL,
                   search_radius: float | None = None) -> tuple[SurfaceMesh, MorphReport]:
    """RBF landmark morph of ``template`` followed by normal projection onto ``target``."""
    if template_lms.points.shape != target_lms.points.shape:
        raise DimensionMismatch("template and target landmark sets differ in size")
    rbf = rbf_fit(template_lms.points, target_lms.points - template_lms.points)
    deformed = template.with_vertices(rbf.warp(template.vertices))
    loc = SurfaceLocator(target)
    projected, ray, near = project_onto(deformed, target, search_radius, loc)
    missed = ~(ray | near)
    if missed.sum() > MAX_MISS_FRACTION * len(missed):
        raise ProjectionFailure(
            f"{int(missed.sum())} of {len(missed)} nodes found no target surface")
    out = template.with_vertices(projected)
    dist = loc.distance(projected)
    report = MorphReport(
        max_distance=float(dist.max()),
        mean_distance=float(dist.mean()),
        n_ray=int(ray.sum()),
        n_nearest=int(near.sum()),
        n_missed=int(missed.sum()),
        max_step1_distance=float(loc.distance(deformed.vertices).max()),
        within_tolerance=bool(dist.max() <= proj_tol),
        quality=mesh_quality(out, template),
    )
    return out, report


def mean_template(grids: list[SurfaceMesh]) -> SurfaceMesh:
    """Vertexwise mean of meshes sharing one connectivity."""
    if not grids:
        raise ValueError("need at least one grid")
    first = grids[0]
    for k, g in enumerate(grids[1:], start=1):
        if not first.same_connectivity(g):
            raise TopologyMismatch(f"grid {k} does not share the template connectivity")
    mean = np.mean(np.stack([g.vertices for g in grids]), axis=0)
    return first.with_vertices(mean)


# ---------------------------------------------------------------------------
# Cohort grids

def median_diameter_index(diameters) -> int:
    """Index of the case whose diameter is closest to the cohort median (lowest on ties)."""
    d = np.asarray(diameters, dtype=float)
    if d.size == 0:
        raise ValueError("no diameters given")
    return int(np.argmin(np.abs(d - np.median(d))))


def template_landmarks(mesh: SurfaceMesh, n_per_spline: int = 10, step: float = 1.0):
    """Splines and pseudo-landmarks of a template traced from scratch."""
    splines = build_splines(mesh, extract_centerline(mesh, step=step))
    return splines, sample_pseudo_landmarks(splines, n_per_spline)


@dataclass(eq=False)
class IsoTopologicalCohort:
    template: SurfaceMesh  # final mean template
    grids: list[SurfaceMesh]
    reports: list[MorphReport]  # last round, one per grid
    ids: list[str] = field(default_factory=list)
    round_quality: list[QualityReport] = field(default_factory=list)  # mean template per round

    def __post_init__(self):
        if not self.ids:
            self.ids = [f"{i:03d}" for i in range(len(self.grids))]
        for k, g in enumerate(self.grids):
            if not self.template.same_connectivity(g):
                raise TopologyMismatch(f"grid {self.ids[k]} does not share template connectivity")

    @property
    def n(self) -> int:
        return len(self.grids)

    def max_residual(self) -> float:
        return max(r.max_distance for r in self.reports)

    def save(self, directory) -> Path:
        """Write PLY grids and ``index.json``; returns the index path."""
        root = Path(directory)
        (root / "grids").mkdir(parents=True, exist_ok=True)
        save_mesh(self.template, root / "template.ply")
        entries = []
        for pid, g, rep in zip(self.ids, self.grids, self.reports):
            rel = f"grids/{pid}.ply"
            save_mesh(g, root / rel)
            entries.append({"id": pid, "path": rel, "residual": rep.to_dict()})
        index = {
            "template": "template.ply",
            "grids": entries,
            "round_quality": [asdict(q) for q in self.round_quality],
        }
        path = root / "index.json"
        path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, directory) -> "IsoTopologicalCohort":
        root = Path(directory)
        path = root / "index.json"
        if not path.exists():
            raise MissingArtifact(f"no cohort index at {path}")
        index = json.loads(path.read_text())
        template = load_mesh(root / index["template"])
        grids, reports, ids = [], [], []
        for e in index["grids"]:
            grids.append(load_mesh(root / e["path"]))
            reports.append(MorphReport.from_dict(e["residual"]))
            ids.append(e["id"])
        rq = [QualityReport(**q) for q in index.get("round_quality", [])]
        return cls(template, grids, reports, ids, rq)


def build_cohort_grids(initial_template: SurfaceMesh, targets: list[tuple[SurfaceMesh, SplineSet]],
                       n_rounds: int = 2, ids: list[str] | None = None,
                       template_splines: SplineSet | None = None, n_per_spline: int = 10,
                       proj_tol: float = DEFAULT_PROJ_TOL) -> IsoTopologicalCohort:
    """Morph a template onto every target, re-template on the mean, repeat.

    ``template_splines`` saves re-tracing the initial template when it is one
    of the targets; later templates (cohort means) are always traced.
    """
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    if not targets:
        raise ValueError("no targets")
    target_lms = [sample_pseudo_landmarks(s, n_per_spline) for _, s in targets]
    template = initial_template
    if template_splines is not None:
        tpl_lms = sample_pseudo_landmarks(template_splines, n_per_spline)
    else:
        tpl_lms = template_landmarks(template, n_per_spline)[1]
    round_quality = []
    for rnd in range(n_rounds):
        if rnd > 0:
            tpl_lms = template_landmarks(template, n_per_spline)[1]
        grids, reports = [], []
        for (mesh, _), lms in zip(targets, target_lms):
            g, rep = morph_two_step(template, tpl_lms, mesh, lms, proj_tol)
            grids.append(g)
            reports.append(rep)
        template = mean_template(grids)
        round_quality.append(mesh_quality(template))
    return IsoTopologicalCohort(template, grids, reports, list(ids or []), round_quality)
