"""Surface meshes: representation, ASCII PLY/OBJ I/O, quality metrics,
closest-point queries and rigid ICP alignment."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from sklearn.exceptions import ConvergenceWarning

from .errors import MeshIOError, ParseError, TopologyError

# faces whose (area) falls below this are rejected as degenerate
_MIN_FACE_AREA = 1e-12


def _frozen(orig, arr, dtype):
    if isinstance(orig, np.ndarray) and orig.dtype == dtype and not orig.flags.writeable:
        return orig
    return _readonly(arr)


def _readonly(a):
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Indexed surface grid with uniform face arity (all triangles or all quads).

    Vertex coordinates are in millimetres. Both arrays are stored read-only so
    a mesh can be shared freely; ``with_vertices`` builds a new mesh that
    reuses the very same face array.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.faces)
        if v.ndim != 2 or v.shape[1] != 3:
            raise TopologyError(f"vertices must be (K, 3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise TopologyError("vertices contain non-finite coordinates")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] not in (3, 4):
            raise TopologyError(f"faces must be (E, 3) or (E, 4), got {f.shape}")
        if not np.issubdtype(f.dtype, np.integer):
            if not np.all(np.equal(np.mod(f, 1), 0)):
                raise TopologyError("face indices must be integers")
        f = f.astype(np.int64)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            bad = int(f.max()) if f.max() >= len(v) else int(f.min())
            raise TopologyError(f"face index {bad} out of range for {len(v)} vertices")
        if f.size:
            srt = np.sort(f, axis=1)
            if np.any(srt[:, 1:] == srt[:, :-1]):
                raise TopologyError("face with repeated vertex index")
            area = _face_areas(v, f)
            if np.any(area < _MIN_FACE_AREA):
                raise TopologyError(
                    f"{int(np.sum(area < _MIN_FACE_AREA))} degenerate (zero-area) faces"
                )
        # already-frozen inputs are shared, so with_vertices keeps the face array
        object.__setattr__(self, "vertices", _frozen(self.vertices, v, np.float64))
        object.__setattr__(self, "faces", _frozen(self.faces, f, np.int64))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices) -> "SurfaceMesh":
        """New mesh with moved vertices and identical connectivity."""
        vertices = np.asarray(vertices, dtype=float)
        if vertices.shape != self.vertices.shape:
            raise TopologyError(
                f"expected vertices of shape {self.vertices.shape}, got {vertices.shape}"
            )
        return SurfaceMesh(vertices, self.faces)

    def transformed(self, transform: "RigidTransform") -> "SurfaceMesh":
        return self.with_vertices(transform.apply(self.vertices))

    def same_connectivity(self, other: "SurfaceMesh") -> bool:
        return (
            self.n_vertices == other.n_vertices
            and self.faces.shape == other.faces.shape
            and np.array_equal(self.faces, other.faces)
        )

    @cached_property
    def triangles(self) -> np.ndarray:
        """Face list split into triangles; quad (a, b, c, d) -> (a, b, c), (a, c, d)."""
        if self.faces.shape[1] == 3:
            return self.faces
        f = self.faces
        tri = np.empty((2 * len(f), 3), dtype=np.int64)
        tri[0::2] = f[:, [0, 1, 2]]
        tri[1::2] = f[:, [0, 2, 3]]
        tri.flags.writeable = False
        return tri

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted (i < j)."""
        k = self.faces.shape[1]
        e = np.concatenate([self.faces[:, [i, (i + 1) % k]] for i in range(k)])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def boundary_loops(self) -> list[np.ndarray]:
        """Open boundary cycles as vertex index arrays.

        Loops follow the face orientation and start at their smallest vertex
        index; the list is ordered by that index.
        """
        k = self.faces.shape[1]
        directed = np.concatenate([self.faces[:, [i, (i + 1) % k]] for i in range(k)])
        und = np.sort(directed, axis=1)
        _, inv, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
        boundary = directed[counts[inv.ravel()] == 1]
        nxt = {}
        for a, b in boundary:
            if int(a) in nxt:
                raise TopologyError(f"non-manifold boundary at vertex {int(a)}")
            nxt[int(a)] = int(b)
        loops = []
        seen = set()
        for start in sorted(nxt):
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            cur = nxt[start]
            while cur != start:
                if cur in seen or cur not in nxt:
                    raise TopologyError("boundary edges do not form closed loops")
                loop.append(cur)
                seen.add(cur)
                cur = nxt[cur]
            loops.append(np.array(loop, dtype=np.int64))
        return loops

    def face_normals(self) -> np.ndarray:
        """Unit normals of the triangulated faces (right-hand rule)."""
        t = self.vertices[self.triangles]
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted unit vertex normals."""
        t = self.vertices[self.triangles]
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        acc = np.zeros_like(self.vertices)
        for j in range(3):
            np.add.at(acc, self.triangles[:, j], n)
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        norm[norm == 0] = 1.0
        return acc / norm

    def area(self) -> float:
        return float(_face_areas(self.vertices, self.faces).sum())

    def __repr__(self):
        kind = "quad" if self.faces.shape[1] == 4 else "tri"
        return f"SurfaceMesh(K={self.n_vertices}, E={self.n_faces}, {kind})"


def _face_areas(v, f):
    if f.shape[1] == 3:
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    a, b, c, d = (v[f[:, i]] for i in range(4))
    return 0.5 * (
        np.linalg.norm(np.cross(b - a, c - a), axis=1)
        + np.linalg.norm(np.cross(c - a, d - a), axis=1)
    )


# ---------------------------------------------------------------------------
# File I/O

def _infer_format(path, format):
    if format is None:
        format = Path(path).suffix.lstrip(".")
    format = str(format).upper()
    if format not in ("PLY", "OBJ"):
        raise ParseError(f"unsupported mesh format: {format!r}")
    return format


def load_mesh(path, format=None) -> SurfaceMesh:
    """Read an ASCII PLY or Wavefront OBJ surface.

    Vertex order is preserved from the file. Mixed triangle/quad files are
    read with quads split into triangles.
    """
    format = _infer_format(path, format)
    try:
        with open(path, "r", encoding="ascii") as fh:
            text = fh.read()
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not an ASCII file") from exc
    except OSError as exc:
        raise MeshIOError(f"cannot read {path}: {exc}") from exc
    if format == "PLY":
        verts, faces = _parse_ply(text, path)
    else:
        verts, faces = _parse_obj(text, path)
    return SurfaceMesh(verts, _uniform_faces(faces))


def _uniform_faces(faces):
    if not faces:
        return np.zeros((0, 3), dtype=np.int64)
    sizes = {len(f) for f in faces}
    if not sizes <= {3, 4}:
        raise ParseError(f"unsupported face sizes {sorted(sizes)}")
    if len(sizes) == 1:
        return np.array(faces, dtype=np.int64)
    tris = []
    for f in faces:
        if len(f) == 3:
            tris.append(f)
        else:
            tris.extend([[f[0], f[1], f[2]], [f[0], f[2], f[3]]])
    return np.array(tris, dtype=np.int64)


def _parse_ply(text, path):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path}: missing 'ply' magic")
    elements = []
    fmt = None
    i = 1
    try:
        while True:
            tok = lines[i].split()
            i += 1
            if not tok or tok[0] in ("comment", "obj_info"):
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                elements.append([tok[1], int(tok[2]), []])
            elif tok[0] == "property":
                if not elements:
                    raise ParseError(f"{path}: property before element")
                elements[-1][2].append(tok[-1] if tok[1] != "list" else ("list", tok[-1]))
            elif tok[0] == "end_header":
                break
            else:
                raise ParseError(f"{path}: unexpected header line {' '.join(tok)!r}")
    except (IndexError, ValueError) as exc:
        raise ParseError(f"{path}: malformed header") from exc
    if fmt != "ascii":
        raise ParseError(f"{path}: only ASCII PLY is supported (format {fmt!r})")
    verts = None
    faces = []
    body = lines[i:]
    pos = 0
    try:
        for name, count, props in elements:
            chunk = body[pos:pos + count]
            if len(chunk) < count:
                raise ParseError(f"{path}: truncated element '{name}'")
            pos += count
            if name == "vertex":
                cols = [props.index(c) for c in ("x", "y", "z")]
                rows = [ln.split() for ln in chunk]
                verts = np.array([[float(r[c]) for c in cols] for r in rows], dtype=float)
                verts = verts.reshape(count, 3)
            elif name == "face":
                for ln in chunk:
                    tok = ln.split()
                    n = int(tok[0])
                    if len(tok) < n + 1:
                        raise ParseError(f"{path}: short face record {ln!r}")
                    faces.append([int(t) for t in tok[1:n + 1]])
    except ParseError:
        raise
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: malformed element data") from exc
    if verts is None:
        raise ParseError(f"{path}: no vertex element")
    return verts, faces


def _parse_obj(text, path):
    verts = []
    faces = []
    for lineno, ln in enumerate(text.splitlines(), 1):
        tok = ln.split()
        if not tok or tok[0].startswith("#"):
            continue
        try:
            if tok[0] == "v":
                verts.append([float(t) for t in tok[1:4]])
                if len(verts[-1]) != 3:
                    raise ValueError
            elif tok[0] == "f":
                idx = []
                for t in tok[1:]:
                    j = int(t.split("/")[0])
                    if j == 0:
                        raise TopologyError(f"{path}:{lineno}: face index 0 is invalid in OBJ")
                    idx.append(j - 1 if j > 0 else len(verts) + j)
                faces.append(idx)
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}:{lineno}: malformed record {ln!r}") from exc
    n = len(verts)
    for f in faces:
        for j in f:
            if j < 0 or j >= n:
                raise TopologyError(f"{path}: face index {j + 1} out of range for {n} vertices")
    return np.array(verts, dtype=float).reshape(-1, 3), faces


def _fmt_rows(arr, fmt):
    return "\n".join(fmt % tuple(r) for r in arr.tolist())


def save_mesh(mesh: SurfaceMesh, path, format=None) -> None:
    """Write ``mesh`` as ASCII PLY or OBJ with round-trip exact coordinates."""
    format = _infer_format(path, format)
    k = mesh.faces.shape[1]
    vfmt = "%.17g %.17g %.17g"
    if format == "PLY":
        header = (
            "ply\nformat ascii 1.0\n"
            f"element vertex {mesh.n_vertices}\n"
            "property double x\nproperty double y\nproperty double z\n"
            f"element face {mesh.n_faces}\n"
            "property list uchar int vertex_indices\nend_header\n"
        )
        body = _fmt_rows(mesh.vertices, vfmt)
        ffmt = f"{k}" + " %d" * k
        fbody = _fmt_rows(mesh.faces, ffmt)
    else:
        header = ""
        body = _fmt_rows(mesh.vertices, "v " + vfmt)
        fbody = _fmt_rows(mesh.faces + 1, "f" + " %d" * k)
    text = header + body + ("\n" if body else "") + fbody + ("\n" if fbody else "")
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise MeshIOError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Quality

@dataclass(frozen=True)
class QualityReport:
    min_face_angle: float  # degrees
    max_aspect_ratio: float
    n_inverted: int
    mean_edge_length: float  # mm


def mesh_quality(mesh: SurfaceMesh, reference: SurfaceMesh | None = None) -> QualityReport:
    """Element quality over all faces.

    Aspect ratio is longest over shortest edge of a face. A quad counts as
    inverted when its two triangles fold against each other; with a
    ``reference`` of the same connectivity, faces whose normal flips relative
    to the reference are counted too.
    """
    v = mesh.vertices
    f = mesh.faces
    k = f.shape[1]
    pts = v[f]  # (E, k, 3)
    nxt = np.roll(pts, -1, axis=1) - pts
    prv = np.roll(pts, 1, axis=1) - pts
    lens = np.linalg.norm(nxt, axis=2)
    cosang = np.einsum("ijk,ijk->ij", nxt, prv) / (
        lens * np.linalg.norm(prv, axis=2)
    )
    angles = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    aspect = lens.max(axis=1) / lens.min(axis=1)
    e = mesh.edges
    mean_edge = float(np.linalg.norm(v[e[:, 1]] - v[e[:, 0]], axis=1).mean())
    inverted = np.zeros(len(f), dtype=bool)
    if k == 4:
        n1 = np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
        n2 = np.cross(pts[:, 2] - pts[:, 0], pts[:, 3] - pts[:, 0])
        inverted |= np.einsum("ij,ij->i", n1, n2) < 0
    if reference is not None and reference.same_connectivity(mesh):
        a = mesh.face_normals().reshape(len(f), -1, 3).sum(axis=1)
        b = reference.face_normals().reshape(len(f), -1, 3).sum(axis=1)
        inverted |= np.einsum("ij,ij->i", a, b) < 0
    return QualityReport(
        min_face_angle=float(angles.min()),
        max_aspect_ratio=float(aspect.max()),
        n_inverted=int(inverted.sum()),
        mean_edge_length=mean_edge,
    )


# ---------------------------------------------------------------------------
# Closest point and ray queries

def closest_point_on_triangles(p, a, b, c):
    """Closest point to ``p`` on triangles (a, b, c); all arrays (..., 3)."""
    ab = b - a
    ac = c - a
    ap = p - a
    bp = p - b
    cp = p - c
    d1 = np.einsum("...i,...i->...", ab, ap)
    d2 = np.einsum("...i,...i->...", ac, ap)
    d3 = np.einsum("...i,...i->...", ab, bp)
    d4 = np.einsum("...i,...i->...", ac, bp)
    d5 = np.einsum("...i,...i->...", ab, cp)
    d6 = np.einsum("...i,...i->...", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        out = a + ab * v[..., None] + ac * w[..., None]
        # regions in reverse precedence so that the earlier tests win
        m = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out = np.where(m[..., None], b + (c - b) * t[..., None], out)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / (d2 - d6)
        out = np.where(m[..., None], a + ac * t[..., None], out)
        m = (d6 >= 0) & (d5 <= d6)
        out = np.where(m[..., None], c, out)
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / (d1 - d3)
        out = np.where(m[..., None], a + ab * t[..., None], out)
        m = (d3 >= 0) & (d4 <= d3)
        out = np.where(m[..., None], b, out)
        m = (d1 <= 0) & (d2 <= 0)
        out = np.where(m[..., None], a, out)
    return out


class SurfaceLocator:
    """Exact closest-point and line-intersection queries on a triangulated surface.

    Candidate triangles come from a k-d tree over triangle centroids; a query
    whose candidate set cannot be proven complete falls back to a ball search.
    """

    def __init__(self, mesh: SurfaceMesh, k: int = 16):
        self.mesh = mesh
        tri = mesh.vertices[mesh.triangles]
        self._a, self._b, self._c = tri[:, 0], tri[:, 1], tri[:, 2]
        cen = tri.mean(axis=1)
        self._tree = cKDTree(cen)
        self._rmax = float(np.linalg.norm(tri - cen[:, None], axis=2).max())
        self._k = min(k, len(cen))

    def nearest(self, points):
        """Return (closest points, distances, triangle indices)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        dc, idx = self._tree.query(p, k=self._k)
        idx = idx.reshape(len(p), -1)
        dc = dc.reshape(len(p), -1)
        q = closest_point_on_triangles(p[:, None], self._a[idx], self._b[idx], self._c[idx])
        d = np.linalg.norm(q - p[:, None], axis=2)
        j = np.argmin(d, axis=1)
        rows = np.arange(len(p))
        best_q = q[rows, j]
        best_d = d[rows, j]
        best_t = idx[rows, j]
        if self._k < len(self._a):
            unsure = np.nonzero(dc[:, -1] < best_d + self._rmax)[0]
            for i in unsure:
                cand = np.array(self._tree.query_ball_point(p[i], best_d[i] + self._rmax))
                if len(cand) == 0:
                    continue
                qq = closest_point_on_triangles(p[i], self._a[cand], self._b[cand], self._c[cand])
                dd = np.linalg.norm(qq - p[i], axis=1)
                jj = int(np.argmin(dd))
                if dd[jj] < best_d[i]:
                    best_q[i], best_d[i], best_t[i] = qq[jj], dd[jj], cand[jj]
        return best_q, best_d, best_t

    def distance(self, points) -> np.ndarray:
        return self.nearest(points)[1]

    def intersect_lines(self, origins, directions, max_dist: float, k: int = 32):
        """Nearest intersection (in |t|) of lines ``o + t d`` with the surface.

        Returns (points, t, hit mask). Only hits with |t| <= max_dist count.
        """
        o = np.atleast_2d(np.asarray(origins, dtype=float))
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        kk = min(k, len(self._a))
        dc, idx = self._tree.query(o, k=kk)
        idx = idx.reshape(len(o), -1)
        dc = dc.reshape(len(o), -1)
        t, hit = _line_triangle(o[:, None], d[:, None], self._a[idx], self._b[idx], self._c[idx])
        hit &= np.abs(t) <= max_dist
        score = np.where(hit, np.abs(t), np.inf)
        j = np.argmin(score, axis=1)
        rows = np.arange(len(o))
        best_t = t[rows, j]
        found = hit[rows, j]
        if kk < len(self._a):
            # a closer hit may hide outside the k nearest centroids
            reach = np.where(found, np.abs(best_t), max_dist) + self._rmax
            for i in np.nonzero(dc[:, -1] < reach)[0]:
                cand = np.array(self._tree.query_ball_point(o[i], reach[i]))
                if len(cand) == 0:
                    continue
                tt, hh = _line_triangle(o[i], d[i], self._a[cand], self._b[cand], self._c[cand])
                hh &= np.abs(tt) <= max_dist
                if hh.any():
                    s = np.where(hh, np.abs(tt), np.inf)
                    best_t[i] = tt[int(np.argmin(s))]
                    found[i] = True
        pts = o + best_t[:, None] * d
        return pts, np.where(found, best_t, np.nan), found


def _line_triangle(o, d, a, b, c, eps=1e-9):
    # Moller-Trumbore for infinite lines; barycentric slack eps admits hits on edges.
    e1 = b - a
    e2 = c - a
    pvec = np.cross(d, e2)
    det = np.einsum("...i,...i->...", e1, pvec)
    ok = np.abs(det) > 1e-14
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        tvec = o - a
        u = np.einsum("...i,...i->...", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        v = np.einsum("...i,...i->...", d, qvec) * inv
        t = np.einsum("...i,...i->...", e2, qvec) * inv
    hit = ok & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps)
    return np.where(hit, t, np.nan), hit


# ---------------------------------------------------------------------------
# Rigid alignment

@dataclass(frozen=True)
class RigidTransform:
    """x -> rotation @ x + translation. ICP diagnostics ride along."""

    rotation: np.ndarray
    translation: np.ndarray
    converged: bool = True
    n_iter: int = 0
    rms: float = float("nan")

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1) > 1e-9:
            raise ValueError("rotation must be a proper orthonormal matrix")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points):
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, first: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying ``first`` and then ``self``."""
        return RigidTransform(
            self.rotation @ first.rotation,
            self.rotation @ first.translation + self.translation,
        )

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def angle_degrees(self) -> float:
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def best_fit_rigid(src, dst) -> RigidTransform:
    """Least-squares rotation and translation taking src onto dst (Kabsch)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    s = np.eye(3)
    if np.linalg.det(vt.T @ u.T) < 0:
        s[2, 2] = -1.0
    r = vt.T @ s @ u.T
    return RigidTransform(r, cd - r @ cs)


def _icp(src, dst, tree, init: RigidTransform, max_iters: int, tol: float):
    current = init
    best, best_rms = current, np.inf
    prev = np.inf
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        dist, j = tree.query(current.apply(src))
        rms = float(np.sqrt(np.mean(dist ** 2)))
        if rms < best_rms:
            best, best_rms = current, rms
        if abs(prev - rms) < tol:
            converged = True
            break
        prev = rms
        current = best_fit_rigid(src, dst[j])
    else:
        dist, _ = tree.query(current.apply(src))
        rms = float(np.sqrt(np.mean(dist ** 2)))
        if rms < best_rms:
            best, best_rms = current, rms
    return best, best_rms, converged, it


def _principal_axes(p):
    _, vecs = np.linalg.eigh(np.cov(p.T))
    return vecs[:, ::-1]


def _initial_poses(src, dst):
    """Identity, then the four proper principal-axis matchings, all centroid-aligned."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    rotations = [np.eye(3)]
    if len(src) > 3 and len(dst) > 3:
        vs, vd = _principal_axes(src), _principal_axes(dst)
        for signs in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            d = np.array([signs[0], signs[1], 1.0])
            r = vd @ np.diag(d) @ vs.T
            if np.linalg.det(r) < 0:
                d[2] = -1.0
                r = vd @ np.diag(d) @ vs.T
            rotations.append(r)
    return [RigidTransform(r, cd - r @ cs) for r in rotations]


def rigid_align(moving: SurfaceMesh, fixed: SurfaceMesh, max_iters: int = 100,
                tol: float = 1e-7) -> RigidTransform:
    """Iterative closest point taking ``moving`` onto ``fixed``.

    Correspondences are nearest fixed vertices; each iteration refits the
    rigid motion from the original moving vertices, so the returned transform
    is the accumulated one. Stops once the RMS distance changes by less than
    ``tol`` mm. Plain ICP only finds the local minimum nearest its start, so
    it is run from the identity and from each principal-axis matching of the
    two vertex clouds, keeping the lowest RMS. ``max_iters`` applies per
    start. If the winning run hit the limit, its transform is returned with
    ``converged=False`` and a ``ConvergenceWarning``.
    """
    src = moving.vertices
    dst = fixed.vertices
    if len(src) == 0 or len(dst) == 0:
        raise TopologyError("rigid_align needs non-empty meshes")
    tree = cKDTree(dst)
    scale = float(np.ptp(dst, axis=0).max()) or 1.0
    best = None
    for init in _initial_poses(src, dst):
        run = _icp(src, dst, tree, init, max_iters, tol)
        if best is None or run[1] < best[1] - 1e-9 * scale:
            best = run
        if best[1] <= 1e-9 * scale:
            break
    tf, rms, converged, it = best
    if not converged:
        warnings.warn(
            f"ICP did not converge in {max_iters} iterations (rms {rms:.4g} mm)",
            ConvergenceWarning,
            stacklevel=2,
        )
    return RigidTransform(tf.rotation, tf.translation, converged=converged, n_iter=it, rms=rms)
