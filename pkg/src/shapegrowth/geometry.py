"""Centerline extraction, section-based decomposition and local shape features.

The centerline is traced by inscribed-sphere marching: step along the current
tangent, cut the surface with the normal plane, and move the point to the
centre of the largest circle inscribed in the cut. Sections, curvature lines
and lateral splines are all built from planar cuts normal to the centerline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import savgol_filter

from .errors import DegenerateGeometry, IntervalTooShort, TopologyError
from ._kernels import inscribed_center, min_distance_to_polygon
from .mesh import SurfaceLocator, SurfaceMesh
from .phantom import MIN_INTERVAL_MONTHS

N_SECTIONS = 100
LATERAL_ANGLES = (45.0, 90.0, 135.0, 225.0, 270.0, 315.0)
# first/last section stations sit this fraction of the length inside the ends,
# so the cut planes never coincide with the boundary loops
SECTION_MARGIN = 0.005
_FLAT_CURVATURE = 1e-6  # 1/mm
# Savitzky-Golay window for centerline tangents. Recentring in the normal
# plane moves the centre by roughly (r**2 / 2R + r dr/ds) per radian of tilt,
# so the refinement needs wide windows to stay contractive; once converged, a
# narrow one follows the curve more closely.
_REFINE_SPAN_MM = 20.0
_FINAL_SPAN_MM = 5.0


@dataclass(frozen=True, eq=False)
class Centerline:
    points: np.ndarray  # (n, 3) mm
    tangents: np.ndarray  # (n, 3) unit
    radii: np.ndarray  # (n,) inscribed radius, mm
    arclength: np.ndarray  # (n,) mm, starts at 0

    def __post_init__(self):
        s = np.asarray(self.arclength, dtype=float)
        if len(s) < 2 or np.any(np.diff(s) <= 0):
            raise DegenerateGeometry("centerline arclength must be strictly increasing")

    @property
    def n_samples(self) -> int:
        return len(self.points)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    @property
    def chord(self) -> float:
        return float(np.linalg.norm(self.points[-1] - self.points[0]))

    def at(self, s):
        """Interpolated (points, unit tangents) at arclength(s) in mm."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        p = np.stack([np.interp(s, self.arclength, self.points[:, k]) for k in range(3)], -1)
        t = np.stack([np.interp(s, self.arclength, self.tangents[:, k]) for k in range(3)], -1)
        return p, t / np.linalg.norm(t, axis=1, keepdims=True)

    def curvature_vectors(self, span_mm: float = _REFINE_SPAN_MM) -> np.ndarray:
        """Curvature vectors d2C/ds2 (pointing towards the centre of curvature).

        Taken from local cubic fits spanning ``span_mm`` either side, with the
        tangential part removed; differentiating twice needs the wider window.
        """
        h = self.length / (self.n_samples - 1)
        span = _odd_span(self.n_samples, span_mm, h)
        if span > 3:
            k = savgol_filter(self.points, span, 3, deriv=2, delta=h, axis=0, mode="interp")
        else:
            k = np.gradient(self.tangents, self.arclength, axis=0)
        t = self.tangents
        return k - (k * t).sum(axis=1, keepdims=True) * t


@dataclass(frozen=True, eq=False)
class SectionCurve:
    index: int  # 1-based
    origin: np.ndarray
    normal: np.ndarray
    boundary: np.ndarray  # (m, 3) closed polyline, first point not repeated
    centroid: np.ndarray
    curvature: np.ndarray  # centerline curvature vector at the origin

    def segments(self):
        return self.boundary, np.roll(self.boundary, -1, axis=0)


@dataclass(frozen=True, eq=False)
class SplineSet:
    icl: np.ndarray  # (n, 3)
    ecl: np.ndarray  # (n, 3)
    laterals: np.ndarray  # (6, n, 3), angles LATERAL_ANGLES from the ECL axis

    def __post_init__(self):
        n = len(self.icl)
        if len(self.ecl) != n or self.laterals.shape != (len(LATERAL_ANGLES), n, 3):
            raise DegenerateGeometry("all splines need the same number of points")

    def ordered(self) -> list[np.ndarray]:
        """ICL, ECL and the six laterals in landmark order."""
        return [self.icl, self.ecl, *self.laterals]

    def as_array(self) -> np.ndarray:
        return np.stack(self.ordered())

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float)
        return cls(arr[0], arr[1], arr[2:])


@dataclass(frozen=True)
class LocalFeatures:
    DCR: float
    EILR: float
    T: float
    D: float  # mm
    L_C: float  # mm

    def as_dict(self):
        return {"D": self.D, "L_C": self.L_C, "DCR": self.DCR, "EILR": self.EILR, "T": self.T}


def polyline_length(pts) -> float:
    pts = np.asarray(pts, dtype=float)
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


# ---------------------------------------------------------------------------
# Planar cuts

def plane_section(mesh: SurfaceMesh, origin, normal):
    """Intersect the surface with a plane.

    Returns a list of (points, closed) components, each an ordered polyline.
    Vertices lying on the plane count as the positive side.
    """
    origin = np.asarray(origin, dtype=float)
    normal = np.asarray(normal, dtype=float)
    v = mesh.vertices
    d = (v - origin) @ normal
    pos = d >= 0
    tris = mesh.triangles
    cnt = pos[tris].sum(axis=1)
    t = tris[(cnt == 1) | (cnt == 2)]
    if len(t) == 0:
        return []
    # each straddling triangle has exactly two crossing edges; link them
    ea = np.stack([t, np.roll(t, -1, axis=1)], axis=2)  # (m, 3, 2)
    cross = pos[ea[..., 0]] != pos[ea[..., 1]]
    pairs = np.sort(ea[cross].reshape(-1, 2, 2), axis=2)  # (m, 2, 2)
    keys = pairs[..., 0].astype(np.int64) * len(v) + pairs[..., 1]
    uniq, inv = np.unique(keys, return_inverse=True)
    inv = inv.reshape(-1, 2)
    ia, ib = uniq // len(v), uniq % len(v)
    w = d[ia] / (d[ia] - d[ib])
    pts = v[ia] + w[:, None] * (v[ib] - v[ia])

    nbr = [[] for _ in range(len(uniq))]
    for k1, k2 in inv.tolist():
        nbr[k1].append(k2)
        nbr[k2].append(k1)
    seen = np.zeros(len(uniq), dtype=bool)
    comps = []
    # open chains first start from their degree-1 ends
    ends = [k for k in range(len(uniq)) if len(nbr[k]) == 1]
    for start in ends + list(range(len(uniq))):
        if seen[start]:
            continue
        chain = [start]
        seen[start] = True
        prev, cur = -1, start
        while True:
            nxt = [k for k in nbr[cur] if k != prev and not seen[k]]
            if not nxt:
                break
            prev, cur = cur, nxt[0]
            chain.append(cur)
            seen[cur] = True
        closed = len(nbr[start]) == 2 and start in nbr[cur] and len(chain) > 2
        comps.append((pts[chain], closed))
    return comps


def _plane_basis(normal):
    n = normal / np.linalg.norm(normal)
    helper = np.eye(3)[int(np.argmin(np.abs(n)))]
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


def _polygon_centroid_2d(q):
    x, y = q[:, 0], q[:, 1]
    x1, y1 = np.roll(x, -1), np.roll(y, -1)
    cross = x * y1 - x1 * y
    a = cross.sum() / 2
    if abs(a) < 1e-12:
        return q.mean(axis=0)
    return np.array([((x + x1) * cross).sum(), ((y + y1) * cross).sum()]) / (6 * a)


def _dist_to_segments_2d(q, a, b):
    ab = b - a
    t = np.clip(((q - a) * ab).sum(axis=-1) / (ab * ab).sum(axis=-1), 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.linalg.norm(q - proj, axis=-1)


_NO_TRIANGLES = np.empty((0, 3))


def _inscribed_center(loop, origin, normal, surface=None):
    """Centre and radius of the largest circle inscribed in a planar cut.

    Without ``surface`` the in-plane distance to the cut polygon is maximised.
    With ``surface`` (a _PatchDistance) the distance to the 3D surface is used
    instead; that centre is insensitive to small plane tilts, which makes it
    the robust choice while marching.
    """
    e1, e2 = _plane_basis(normal)
    rel = loop - origin
    q = np.ascontiguousarray(np.stack([rel @ e1, rel @ e2], axis=1))
    x0 = _polygon_centroid_2d(q)
    scale = max(float(np.sqrt(((q - x0) ** 2).sum(axis=1).mean())), 1e-9)
    if surface is None:
        a = b = c = _NO_TRIANGLES
    else:
        reach = float(np.linalg.norm(q - x0, axis=1).max())
        a, b, c = surface.patch(origin + x0[0] * e1 + x0[1] * e2, reach)
    cx, cy, r = inscribed_center(q, float(x0[0]), float(x0[1]), 0.02 * scale, 1e-5 * scale,
                                 np.asarray(origin, dtype=float), e1, e2, a, b, c)
    return origin + cx * e1 + cy * e2, float(r)


class _PatchDistance:
    """Triangles near a point, enough to measure its distance to the surface."""

    def __init__(self, mesh):
        tri = mesh.vertices[mesh.triangles]
        self.a, self.b, self.c = tri[:, 0], tri[:, 1], tri[:, 2]
        self.cen = tri.mean(axis=1)
        self.rtri = float(np.linalg.norm(tri - self.cen[:, None], axis=2).max())

    def patch(self, center, reach):
        # every point within 1 mm of center has its nearest surface point
        # closer than reach + 1 mm, hence among these triangles
        sel = np.linalg.norm(self.cen - center, axis=1) < reach + 2.0 + self.rtri
        return (np.ascontiguousarray(self.a[sel]), np.ascontiguousarray(self.b[sel]),
                np.ascontiguousarray(self.c[sel]))


def _pick_component(comps, near):
    closed = [c for c, ok in comps if ok]
    if not closed:
        return None
    dist = [np.linalg.norm(c.mean(axis=0) - near) for c in closed]
    return closed[int(np.argmin(dist))]


# ---------------------------------------------------------------------------
# Centerline

def _loop_centroid(mesh, loop):
    pts = mesh.vertices[loop]
    seg = np.roll(pts, -1, axis=0) - pts
    w = np.linalg.norm(seg, axis=1)
    mid = pts + 0.5 * seg
    return (mid * w[:, None]).sum(axis=0) / w.sum(), pts


def extract_centerline(mesh: SurfaceMesh, step: float = 1.0,
                       smoothing_window: int = 1) -> Centerline:
    """Trace the centerline of a tube with two open boundary loops.

    Runs from the centroid of the first boundary loop (the one holding the
    lowest vertex index) to the centroid of the second, optionally smooths
    with a centred moving average of ``smoothing_window`` samples, resamples
    to uniform arclength near ``step``. The inscribed radius of each sample is
    that of the largest circle inside its normal cross-section. Averaging
    pulls a bent centerline towards its centre of curvature by about
    step**2 / (3 R), so it is off by default.
    """
    loops = mesh.boundary_loops
    if len(loops) != 2:
        raise TopologyError(f"tube needs exactly 2 boundary loops, found {len(loops)}")
    ends = _end_frames(mesh, loops)
    start, end = ends[0].centre, ends[1].centre
    t = ends[0].normal
    # the march only seeds the refinement, so it can stride further
    h = 2.0 * step
    diag = float(np.linalg.norm(np.ptp(mesh.vertices, axis=0)))
    max_steps = int(20 * diag / h) + 10
    surface = _PatchDistance(mesh)
    pts = [start]
    p = start
    s_run = 0.0
    for _ in range(max_steps):
        # keep the last cut clear of the far loop even if it is slightly tilted
        if np.dot(end - p, ends[1].normal) < 1.5 * h + 0.1 * ends[1].radius:
            break
        guess = p + h * t
        comp = _pick_component(plane_section(mesh, guess, t), guess)
        if comp is None:
            raise DegenerateGeometry("centerline marching left the surface")
        c, _ = _inscribed_center(comp, guess, t, surface)
        if np.dot(c - p, t) < 0.1 * h:
            raise DegenerateGeometry("centerline marching failed to advance")
        s_run += float(np.linalg.norm(c - p))
        pts.append(c)
        p = c
        t = _predict_tangent(pts, h, t)
        t = ends[0].pin(t, s_run)
        t = ends[1].pin(t, float(np.dot(end - p, ends[1].normal)))
    else:
        raise DegenerateGeometry("centerline marching did not reach the far loop")
    pts.append(end)
    return _finish_centerline(mesh, np.array(pts), step, smoothing_window, ends)


@dataclass(frozen=True)
class _EndFrame:
    """A boundary loop seen as a cut normal to the vessel."""

    centre: np.ndarray
    normal: np.ndarray  # along the direction of travel
    radius: float
    loop: np.ndarray

    def pin(self, tangent, distance):
        # within one radius of the loop, blend the tangent towards its normal
        w = max(0.0, 1.0 - distance / self.radius) ** 2
        if w == 0.0:
            return tangent
        t = w * self.normal + (1.0 - w) * tangent
        return t / np.linalg.norm(t)


def _end_frames(mesh, loops):
    frames = []
    inner = mesh.vertices.mean(axis=0)
    for k, loop in enumerate(loops):
        centre, ring = _loop_centroid(mesh, loop)
        _, _, vt = np.linalg.svd(ring - ring.mean(axis=0))
        n = vt[2]
        # the first normal points into the tube, the second out of it
        if (np.dot(inner - centre, n) < 0) == (k == 0):
            n = -n
        radius = float(np.linalg.norm(ring - centre, axis=1).mean())
        frames.append(_EndFrame(centre, n, radius, np.asarray(loop)))
    return frames



def _predict_tangent(pts, step, fallback, history=6):
    """Tangent one step ahead of the last point, from a quadratic fit.

    A single chord lags by half a step and carries the full recentring noise
    divided by the step; fitting several centres averages that noise out.
    """
    q = np.asarray(pts[-history:])
    if len(q) < 2:
        return fallback
    u = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(q, axis=0), axis=1))])
    deg = 2 if len(q) >= 4 else 1
    coef = np.polynomial.polynomial.polyfit(u - u[-1], q, deg)
    t = coef[1] + (2 * coef[2] * step if deg == 2 else 0.0)
    return t / np.linalg.norm(t)


def _arclength(pts):
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])


def _resample(pts, n):
    s = _arclength(pts)
    su = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(su, s, pts[:, k]) for k in range(3)], axis=1)


def _odd_span(n, span_mm, step):
    return min(n if n % 2 else n - 1, max(5, 2 * int(round(span_mm / step)) + 1))


def _tangents(pts, step, span_mm, ends=None):
    # local cubic fits: smooth derivatives without pulling arcs inwards
    n = len(pts)
    span = _odd_span(n, span_mm, step)
    if span > 3:
        tan = savgol_filter(pts, span, 3, deriv=1, axis=0, mode="interp")
    else:
        tan = np.gradient(pts, axis=0, edge_order=2 if n > 2 else 1)
    if ends is not None and span > 3:
        # the loops are normal cuts, so their normals are the end tangents:
        # refit the end windows with that derivative imposed
        half = span // 2
        tan[: half + 1] = _clamped_end_tangents(pts[:span], ends[0].normal)[: half + 1]
        tail = _clamped_end_tangents(pts[::-1][:span], -ends[1].normal)[: half + 1]
        tan[n - half - 1:] = -tail[::-1]
    return tan / np.linalg.norm(tan, axis=1, keepdims=True)


def _clamped_end_tangents(pts, normal):
    """Tangents of p0 + normal*u + a2*u**2 + a3*u**3 fitted to pts (u = arclength)."""
    u = _arclength(pts)
    basis = np.stack([u ** 2, u ** 3], axis=1)
    coef, *_ = np.linalg.lstsq(basis[1:], (pts - pts[0] - np.outer(u, normal))[1:], rcond=None)
    return normal + np.outer(2 * u, coef[0]) + np.outer(3 * u ** 2, coef[1])


def _recentre(mesh, pts, tan):
    """Move interior samples to the inscribed-circle centre of their normal cut."""
    out = pts.copy()
    radii = np.empty(len(pts))
    for i in range(1, len(pts) - 1):
        comp = _pick_component(plane_section(mesh, pts[i], tan[i]), pts[i])
        if comp is None:
            raise DegenerateGeometry(f"normal cut at centerline sample {i} is not a closed curve")
        out[i], radii[i] = _inscribed_center(comp, pts[i], tan[i])
    return out, radii


def _end_radius(mesh, end, centre, tangent):
    ring = mesh.vertices[end.loop]
    e1, e2 = _plane_basis(tangent)
    q = np.ascontiguousarray(np.stack([(ring - centre) @ e1, (ring - centre) @ e2], axis=1))
    return float(min_distance_to_polygon(0.0, 0.0, q))


def _finish_centerline(mesh, raw, step, window, ends, max_iter=40, tol=2e-3, relax=0.7,
                       span_mm=_REFINE_SPAN_MM):
    """Refine a marched centerline so each sample centres its own normal cut.

    Every pass cuts the surface normal to the current (smoothed) tangents and
    moves the samples to the in-plane inscribed-circle centres, keeping the
    two end centroids fixed. The fixed point is a curve whose normal sections
    are centred on it; for a swept circle that is the sweep path itself.
    """
    seg = np.linalg.norm(np.diff(raw, axis=0), axis=1)
    raw = raw[np.concatenate([[True], seg > 1e-9])]
    n = max(int(round(_arclength(raw)[-1] / step)), 2) + 1
    pts = _resample(raw, n)
    for _ in range(max_iter):
        tan = _tangents(pts, step, span_mm, ends)
        new, radii = _recentre(mesh, pts, tan)
        shift = float(np.linalg.norm(new - pts, axis=1).max())
        pts = pts + relax * (new - pts)
        if shift < tol:
            break
    if window > 1:
        # centred moving average, half-width shrinking towards the fixed ends
        csum = np.vstack([np.zeros(3), np.cumsum(pts, axis=0)])
        i = np.arange(n)
        h = np.minimum(np.minimum(i, n - 1 - i), window // 2)
        pts = (csum[i + h + 1] - csum[i - h]) / (2 * h + 1)[:, None]
    s_old = _arclength(pts)
    pts = _resample(pts, n)
    tan = _tangents(pts, step, _FINAL_SPAN_MM, ends)
    radii[0] = _end_radius(mesh, ends[0], pts[0], tan[0])
    radii[-1] = _end_radius(mesh, ends[1], pts[-1], tan[-1])
    radii = np.interp(np.linspace(0.0, s_old[-1], n), s_old, radii)
    return Centerline(pts, tan, radii, _arclength(pts))


# ---------------------------------------------------------------------------
# Clipping

def _cut_field(mesh, cl, s_cut):
    """Signed distance to the cut plane, restricted to the tube near the cut."""
    p, t = cl.at(s_cut)
    p, t = p[0], t[0]
    v = mesh.vertices
    d = (v - p) @ t
    # vertices far along the tube keep the sign of their arclength offset,
    # so a plane cannot slice distant parts of a bent vessel
    nearest = np.argmin(
        ((v[:, None, :] - cl.points[None, ::max(1, cl.n_samples // 200)]) ** 2).sum(-1), axis=1
    )
    s_vert = cl.arclength[::max(1, cl.n_samples // 200)][nearest]
    reach = 2.0 * float(cl.radii.max()) + 1e-9
    far = np.abs(s_vert - s_cut) > reach
    d = np.where(far, np.sign(s_vert - s_cut) * (np.abs(d) + 1.0), d)
    d[np.abs(d) < 1e-9] = 0.0
    return d


def _clip_keep_positive(verts, tris, d):
    """Clip a triangle soup to d >= 0; returns (verts, tris)."""
    keep_v = d >= 0
    inside = keep_v[tris]
    full = tris[inside.all(axis=1)]
    partial = tris[inside.any(axis=1) & ~inside.all(axis=1)]
    new_pts = []
    edge_id = {}

    def cut(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in edge_id:
            w = d[a] / (d[a] - d[b])
            edge_id[key] = len(verts) + len(new_pts)
            new_pts.append(verts[a] + w * (verts[b] - verts[a]))
        return edge_id[key]

    out = [full]
    extra = []
    for tri in partial:
        poly = []
        for i in range(3):
            a, b = int(tri[i]), int(tri[(i + 1) % 3])
            if d[a] >= 0:
                poly.append(a)
            if (d[a] >= 0) != (d[b] >= 0) and d[a] != 0 and d[b] != 0:
                poly.append(cut(a, b))
        for k in range(1, len(poly) - 1):
            extra.append([poly[0], poly[k], poly[k + 1]])
    if extra:
        out.append(np.array(extra, dtype=np.int64))
    all_v = np.vstack([verts, np.array(new_pts).reshape(-1, 3)])
    return all_v, np.vstack(out)


def _compact(verts, tris):
    used = np.unique(tris)
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return verts[used], remap[tris]


def _drop_slivers(verts, tris, min_area=1e-10):
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    return tris[area > min_area]


def clip_segment(mesh: SurfaceMesh, centerline: Centerline, s_start: float,
                 s_end: float) -> tuple[SurfaceMesh, Centerline]:
    """Cut the tube perpendicularly to the centerline at two normalized stations.

    Cuts at 0 or 1 are skipped, so [0, 1] returns the input unchanged. The
    clipped surface is triangulated.
    """
    if not 0.0 <= s_start < s_end <= 1.0:
        raise ValueError(f"need 0 <= s_start < s_end <= 1, got {s_start}, {s_end}")
    L = centerline.arclength[-1]
    a, b = s_start * L, s_end * L
    out_mesh = mesh
    if s_start > 0 or s_end < 1:
        verts, tris = mesh.vertices, mesh.triangles
        if s_start > 0:
            d = _cut_field(SurfaceMesh(verts, tris), centerline, a)
            verts, tris = _clip_keep_positive(verts, tris, d)
        if s_end < 1:
            d = -_cut_field(SurfaceMesh(verts, tris), centerline, b)
            verts, tris = _clip_keep_positive(verts, tris, d)
        if len(tris) == 0:
            raise DegenerateGeometry("cut planes leave no surface")
        tris = _drop_slivers(verts, tris)
        verts, tris = _compact(verts, tris)
        out_mesh = SurfaceMesh(verts, tris)
        if len(out_mesh.boundary_loops) != 2:
            raise DegenerateGeometry(
                f"clipped surface has {len(out_mesh.boundary_loops)} boundary loops")
    # restrict the centerline, keeping exact end stations
    inner = (centerline.arclength > a) & (centerline.arclength < b)
    s_new = np.concatenate([[a], centerline.arclength[inner], [b]])
    pts, tan = centerline.at(s_new)
    radii = np.interp(s_new, centerline.arclength, centerline.radii)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    return out_mesh, Centerline(pts, tan, radii, arc)


# ---------------------------------------------------------------------------
# Sections, curvature lines, lateral splines

def section_stations(length: float, n: int = N_SECTIONS) -> np.ndarray:
    u = np.linspace(SECTION_MARGIN, 1.0 - SECTION_MARGIN, n)
    return u * length


def build_sections(mesh: SurfaceMesh, centerline: Centerline,
                   n: int = N_SECTIONS) -> list[SectionCurve]:
    """Cut ``n`` sections normal to the centerline at uniform arclength."""
    if n < 2:
        raise ValueError("need at least 2 sections")
    s = section_stations(centerline.arclength[-1], n)
    pts, tans = centerline.at(s)
    kv = centerline.curvature_vectors()
    kv = np.stack([np.interp(s, centerline.arclength, kv[:, j]) for j in range(3)], axis=1)
    out = []
    for l in range(n):
        comps = plane_section(mesh, pts[l], tans[l])
        if len(comps) != 1 or not comps[0][1]:
            raise DegenerateGeometry(
                f"section {l + 1}: plane cut gives {len(comps)} component(s), "
                f"closed={[c[1] for c in comps]}"
            )
        loop = comps[0][0]
        e1, e2 = _plane_basis(tans[l])
        rel = loop - pts[l]
        c2 = _polygon_centroid_2d(np.stack([rel @ e1, rel @ e2], axis=1))
        out.append(SectionCurve(
            index=l + 1,
            origin=pts[l],
            normal=tans[l],
            boundary=loop,
            centroid=pts[l] + c2[0] * e1 + c2[1] * e2,
            curvature=kv[l],
        ))
    return out


def ray_boundary_hit(section: SectionCurve, direction) -> np.ndarray:
    """First intersection of the in-plane ray origin + t * direction (t > 0)
    with the section boundary."""
    o = section.origin
    u = np.asarray(direction, dtype=float)
    a, b = section.segments()
    # work in the plane spanned by u and w = n x u
    w = np.cross(section.normal, u)
    A = np.stack([(a - o) @ u, (a - o) @ w], axis=1)
    B = np.stack([(b - o) @ u, (b - o) @ w], axis=1)
    # segments crossing the u axis (w coordinate changes sign)
    wa, wb = A[:, 1], B[:, 1]
    cross = (wa <= 0) != (wb <= 0)
    idx = np.nonzero(cross)[0]
    if len(idx) == 0:
        raise DegenerateGeometry(f"ray misses section {section.index}")
    f = wa[idx] / (wa[idx] - wb[idx])
    tpos = A[idx, 0] + f * (B[idx, 0] - A[idx, 0])
    ok = tpos > 0
    if not ok.any():
        raise DegenerateGeometry(f"ray misses section {section.index}")
    j = np.argmin(np.where(ok, tpos, np.inf))
    i = idx[j]
    return a[i] + f[j] * (b[i] - a[i])


def _transport(u, n_from, n_to):
    """Rotate u by the minimal rotation taking unit n_from onto n_to."""
    axis = np.cross(n_from, n_to)
    s = np.linalg.norm(axis)
    c = float(np.dot(n_from, n_to))
    if s < 1e-15:
        out = u
    else:
        k = axis / s
        out = u * c + np.cross(k, u) * s + k * np.dot(k, u) * (1 - c)
    out = out - np.dot(out, n_to) * n_to
    return out / np.linalg.norm(out)


def inner_directions(sections: list[SectionCurve]) -> np.ndarray:
    """Unit in-plane directions towards the centre of curvature, per section.

    Sections where the curvature falls below 1e-6 /mm inherit the direction of
    their neighbour by parallel transport; a vessel straight everywhere gets a
    fixed arbitrary normal.
    """
    n = len(sections)
    dirs = [None] * n
    for l, sec in enumerate(sections):
        k = sec.curvature - np.dot(sec.curvature, sec.normal) * sec.normal
        if np.linalg.norm(k) >= _FLAT_CURVATURE:
            dirs[l] = k / np.linalg.norm(k)
    first = next((l for l in range(n) if dirs[l] is not None), None)
    if first is None:
        first = 0
        dirs[0] = _plane_basis(sections[0].normal)[0]
    for l in range(first - 1, -1, -1):
        dirs[l] = _transport(dirs[l + 1], sections[l + 1].normal, sections[l].normal)
    for l in range(first + 1, n):
        if dirs[l] is None:
            dirs[l] = _transport(dirs[l - 1], sections[l - 1].normal, sections[l].normal)
    return np.array(dirs)


def curvature_lines(sections: list[SectionCurve], centerline: Centerline | None = None):
    """Internal and external curvature lines, one point per section.

    The ICL point is where the in-plane ray towards the centre of curvature
    leaves the section; the ECL point lies on the opposite ray.
    """
    dirs = inner_directions(sections)
    icl = np.array([ray_boundary_hit(s, d) for s, d in zip(sections, dirs)])
    ecl = np.array([ray_boundary_hit(s, -d) for s, d in zip(sections, dirs)])
    return icl, ecl


def lateral_splines(sections: list[SectionCurve], centerline: Centerline | None,
                    ecl: np.ndarray, icl: np.ndarray | None = None) -> SplineSet:
    """Six splines at 45 degree steps from the centerline->ECL axis.

    Angles are measured about the section normal (centerline tangent) with the
    right-hand rule.
    """
    lat = np.empty((len(LATERAL_ANGLES), len(sections), 3))
    for l, sec in enumerate(sections):
        e = ecl[l] - sec.origin
        e = e - np.dot(e, sec.normal) * sec.normal
        e /= np.linalg.norm(e)
        f = np.cross(sec.normal, e)
        for k, ang in enumerate(np.radians(LATERAL_ANGLES)):
            lat[k, l] = ray_boundary_hit(sec, np.cos(ang) * e + np.sin(ang) * f)
    if icl is None:
        icl = curvature_lines(sections)[0]
    return SplineSet(np.asarray(icl), np.asarray(ecl), lat)


def build_splines(mesh: SurfaceMesh, centerline: Centerline,
                  n_sections: int = N_SECTIONS) -> SplineSet:
    sections = build_sections(mesh, centerline, n_sections)
    icl, ecl = curvature_lines(sections, centerline)
    return lateral_splines(sections, centerline, ecl, icl)


# ---------------------------------------------------------------------------
# Features

def max_diameter(centerline: Centerline) -> float:
    """Twice the largest inscribed radius along the centerline (mm)."""
    return 2.0 * float(np.max(centerline.radii))


def local_features(centerline: Centerline, splines: SplineSet) -> LocalFeatures:
    L = centerline.length
    D = max_diameter(centerline)
    return LocalFeatures(
        DCR=D / L,
        EILR=polyline_length(splines.ecl) / polyline_length(splines.icl),
        T=L / centerline.chord,
        D=D,
        L_C=L,
    )


def growth_rate(d_baseline: float, d_followup: float, interval: float) -> float:
    """Maximum-diameter growth per month; negative values are kept."""
    if interval < MIN_INTERVAL_MONTHS:
        raise IntervalTooShort(
            f"interval {interval} months is below the {MIN_INTERVAL_MONTHS:g} month minimum")
    return (d_followup - d_baseline) / interval


@dataclass(frozen=True, eq=False)
class MeshAnalysis:
    centerline: Centerline
    splines: SplineSet
    features: LocalFeatures


def analyze_mesh(mesh: SurfaceMesh, step: float = 1.0, smoothing_window: int = 1,
                 n_sections: int = N_SECTIONS, clip: tuple[float, float] = (0.0, 1.0)
                 ) -> MeshAnalysis:
    """Centerline, splines and local features of one vessel segment."""
    cl = extract_centerline(mesh, step=step, smoothing_window=smoothing_window)
    if tuple(clip) != (0.0, 1.0):
        mesh, cl = clip_segment(mesh, cl, *clip)
    splines = build_splines(mesh, cl, n_sections)
    return MeshAnalysis(cl, splines, local_features(cl, splines))
