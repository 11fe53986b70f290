"""Synthetic ascending-aorta phantoms with analytic ground truth.

A phantom is a tube swept along a helical arc (a planar circular arc when the
out-of-plane bend is zero) whose radius carries one Gaussian bulge. Cohorts
pair each baseline phantom with a follow-up whose bulge has grown so that the
maximum diameter increases by exactly ``GR_true * interval``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidParams, InvalidSpec
from .mesh import SurfaceMesh, save_mesh

MIN_INTERVAL_MONTHS = 6.0


@dataclass(frozen=True)
class PhantomParams:
    arc_radius: float = 45.0  # mm
    arc_angle: float = 2.15  # rad
    base_radius: float = 18.0  # mm
    bulge_amplitude: float = 6.0  # mm
    bulge_center: float = 0.5  # normalized arclength
    bulge_width: float = 0.2  # normalized arclength
    out_of_plane_bend: float = 0.0  # pitch per radian over arc radius
    axial_samples: int = 40
    circumferential_samples: int = 32

    def validate(self):
        r0, a, R = self.base_radius, self.bulge_amplitude, self.arc_radius
        problems = []
        if not r0 > 0:
            problems.append("base_radius must be > 0")
        if not a >= 0:
            problems.append("bulge_amplitude must be >= 0")
        if not 0 < self.bulge_width < 1:
            problems.append("bulge_width must lie in (0, 1)")
        if not r0 + a < R:
            problems.append("base_radius + bulge_amplitude must be < arc_radius")
        if not 0 < self.arc_angle <= math.pi:
            problems.append("arc_angle must lie in (0, pi]")
        if not 0 <= self.bulge_center <= 1:
            problems.append("bulge_center must lie in [0, 1]")
        if self.axial_samples < 2 or self.circumferential_samples < 3:
            problems.append("need >= 2 axial and >= 3 circumferential samples")
        if problems:
            raise InvalidParams("; ".join(problems))
        return self


@dataclass(frozen=True)
class GroundTruth:
    """Analytic reference quantities of a phantom.

    ``centerline(s)`` and ``radius(s)`` take normalized arclength in [0, 1];
    the helix is traversed at constant speed so the parameter is arclength.
    """

    params: PhantomParams
    D_true: float
    L_C_true: float
    T_true: float
    DCR_true: float
    EILR_true: float

    def centerline(self, s):
        return _frame(self.params, np.asarray(s, dtype=float))[0]

    def radius(self, s):
        return _radius(self.params, np.asarray(s, dtype=float))

    def inner_direction(self, s):
        """Unit in-plane direction towards the center of curvature."""
        return _frame(self.params, np.asarray(s, dtype=float))[2]


def _radius(p, s):
    return p.base_radius + p.bulge_amplitude * np.exp(
        -((s - p.bulge_center) ** 2) / (2 * p.bulge_width ** 2)
    )


def _frame(p, s):
    """Centerline point, unit tangent, principal normal, binormal at s."""
    R = p.arc_radius
    b = p.out_of_plane_bend * R
    phi = p.arc_angle * s
    sp, cp = np.sin(phi), np.cos(phi)
    # 1 - cos written as 2 sin^2 keeps near-straight arcs free of cancellation
    point = np.stack([R * sp, 2 * R * np.sin(phi / 2) ** 2, b * phi], axis=-1)
    speed = math.hypot(R, b)
    tangent = np.stack([R * cp, R * sp, np.full_like(phi, b)], axis=-1) / speed
    normal = np.stack([-sp, cp, np.zeros_like(phi)], axis=-1)
    binormal = np.stack([-b * cp, -b * sp, np.full_like(phi, R)], axis=-1) / speed
    return point, tangent, normal, binormal


def _polyline_length(pts):
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def ground_truth(params: PhantomParams, n_quad: int = 20001) -> GroundTruth:
    p = params
    length = p.arc_angle * math.hypot(p.arc_radius, p.out_of_plane_bend * p.arc_radius)
    ends, _, _, _ = _frame(p, np.array([0.0, 1.0]))
    chord = float(np.linalg.norm(ends[1] - ends[0]))
    # peak of the bulge, clamped to the segment
    s_peak = min(max(p.bulge_center, 0.0), 1.0)
    diameter = 2 * float(_radius(p, np.array(s_peak)))
    s = np.linspace(0.0, 1.0, n_quad)
    c, _, n, _ = _frame(p, s)
    r = _radius(p, s)[:, None]
    icl = _polyline_length(c + r * n)
    ecl = _polyline_length(c - r * n)
    return GroundTruth(
        params=p,
        D_true=diameter,
        L_C_true=length,
        T_true=length / chord,
        DCR_true=diameter / length,
        EILR_true=ecl / icl,
    )


def tube_faces(n_axial: int, n_circ: int) -> np.ndarray:
    """Quad connectivity of an open tube with ring-major vertex numbering."""
    i, j = np.meshgrid(np.arange(n_axial - 1), np.arange(n_circ), indexing="ij")
    i, j = i.ravel(), j.ravel()
    j1 = (j + 1) % n_circ
    return np.stack(
        [i * n_circ + j, i * n_circ + j1, (i + 1) * n_circ + j1, (i + 1) * n_circ + j],
        axis=1,
    )


def generate_phantom(params: PhantomParams) -> tuple[SurfaceMesh, GroundTruth]:
    """Sweep circles along the arc; faces are oriented with outward normals.

    Vertex ``i * n_circ + j`` sits on ring i at angle 2*pi*j/n_circ measured
    from the inner (curvature) direction towards the binormal.
    """
    p = params.validate()
    na, nc = p.axial_samples, p.circumferential_samples
    s = np.linspace(0.0, 1.0, na)
    c, _, n, b = _frame(p, s)
    r = _radius(p, s)
    psi = 2 * np.pi * np.arange(nc) / nc
    ring = np.cos(psi)[None, :, None] * n[:, None] + np.sin(psi)[None, :, None] * b[:, None]
    verts = c[:, None] + r[:, None, None] * ring
    mesh = SurfaceMesh(verts.reshape(-1, 3), tube_faces(na, nc))
    return mesh, ground_truth(p)


# ---------------------------------------------------------------------------
# Cohorts

@dataclass(frozen=True)
class GrowthRelation:
    """GR = intercept + s0 * (s0 - s0_ref) + amplitude * (A - A_ref) + tortuosity * (T - T_ref)."""

    intercept: float = 0.12
    s0: float = -0.30
    amplitude: float = 0.02
    tortuosity: float = 0.6
    s0_ref: float = 0.5
    amplitude_ref: float = 6.0
    tortuosity_ref: float = 1.2

    def __call__(self, s0, amplitude, tortuosity):
        return (
            self.intercept
            + self.s0 * (s0 - self.s0_ref)
            + self.amplitude * (amplitude - self.amplitude_ref)
            + self.tortuosity * (tortuosity - self.tortuosity_ref)
        )


def _default_ranges():
    return {
        "arc_angle": (1.9, 2.4),
        "bulge_amplitude": (3.0, 9.0),
        "bulge_center": (0.35, 0.65),
    }


@dataclass(frozen=True)
class CohortSpec:
    """Cohort recipe.

    ``ranges`` maps PhantomParams field names to (low, high) uniform sampling
    bounds; unlisted fields take their value from ``base``.
    """

    n: int = 70
    ranges: dict = field(default_factory=_default_ranges)
    base: PhantomParams = field(default_factory=PhantomParams)
    noise_sd: float = 0.03
    interval_range: tuple = (6, 36)
    relation: GrowthRelation = field(default_factory=GrowthRelation)

    def validate(self):
        if self.n < 4:
            raise InvalidSpec("cohort needs N >= 4")
        if self.noise_sd < 0:
            raise InvalidSpec("noise_sd must be >= 0")
        lo, hi = self.interval_range
        if lo < MIN_INTERVAL_MONTHS or hi < lo:
            raise InvalidSpec(f"interval range must satisfy {MIN_INTERVAL_MONTHS} <= low <= high")
        names = set(PhantomParams.__dataclass_fields__)
        for k, (a, b) in self.ranges.items():
            if k not in names:
                raise InvalidSpec(f"unknown phantom parameter {k!r}")
            if b < a:
                raise InvalidSpec(f"empty range for {k}")
        return self

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "ranges": {k: [float(a), float(b)] for k, (a, b) in sorted(self.ranges.items())},
            "base": asdict(self.base),
            "noise_sd": self.noise_sd,
            "interval_range": [self.interval_range[0], self.interval_range[1]],
            "relation": asdict(self.relation),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CohortSpec":
        d = dict(d)
        try:
            base = PhantomParams(**d.pop("base", {}))
            rel = GrowthRelation(**d.pop("relation", {}))
            ranges = {k: tuple(v) for k, v in d.pop("ranges", _default_ranges()).items()}
            ivl = tuple(d.pop("interval_range", (6, 36)))
            spec = cls(ranges=ranges, base=base, relation=rel, interval_range=ivl, **d)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from exc
        return spec


@dataclass(frozen=True)
class CohortEntry:
    patient_id: str
    params: PhantomParams
    interval: float  # months
    GR_true: float  # mm/month
    followup_params: PhantomParams
    baseline_mesh_path: str | None = None
    followup_mesh_path: str | None = None

    def to_dict(self):
        return {
            "patient_id": self.patient_id,
            "baseline_mesh_path": self.baseline_mesh_path,
            "followup_mesh_path": self.followup_mesh_path,
            "interval": self.interval,
            "GR_true": self.GR_true,
            "params": asdict(self.params),
            "followup_params": asdict(self.followup_params),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            patient_id=d["patient_id"],
            params=PhantomParams(**d["params"]),
            interval=float(d["interval"]),
            GR_true=float(d["GR_true"]),
            followup_params=PhantomParams(**d["followup_params"]),
            baseline_mesh_path=d.get("baseline_mesh_path"),
            followup_mesh_path=d.get("followup_mesh_path"),
        )


@dataclass(frozen=True)
class CohortManifest:
    entries: list
    seed: int
    spec: CohortSpec | None = None
    root: Path | None = None  # directory the relative mesh paths resolve against

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "spec": self.spec.to_dict() if self.spec else None,
            "entries": [e.to_dict() for e in self.entries],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "CohortManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        return cls(
            entries=[CohortEntry.from_dict(e) for e in doc["entries"]],
            seed=int(doc["seed"]),
            spec=CohortSpec.from_dict(doc["spec"]) if doc.get("spec") else None,
            root=path.parent,
        )

    def resolve(self, rel: str) -> Path:
        return (self.root or Path(".")) / rel

    def growth_rates(self) -> np.ndarray:
        return np.array([e.GR_true for e in self.entries])


def sample_cohort(spec: CohortSpec, seed: int) -> list[CohortEntry]:
    """Draw cohort entries (parameters, interval, planted growth rate).

    Entry i uses its own generator seeded from (seed, i), so entries can be
    produced independently and in any order.
    """
    spec.validate()
    entries = []
    for i in range(spec.n):
        rng = np.random.default_rng([seed, i])
        values = {k: float(rng.uniform(a, b)) for k, (a, b) in sorted(spec.ranges.items())}
        params = replace(spec.base, **values).validate()
        lo, hi = spec.interval_range
        interval = float(rng.integers(int(lo), int(hi) + 1))
        tort = ground_truth(params).T_true
        gr = float(spec.relation(params.bulge_center, params.bulge_amplitude, tort))
        if spec.noise_sd > 0:
            gr += float(rng.normal(0.0, spec.noise_sd))
        follow = replace(params, bulge_amplitude=params.bulge_amplitude + gr * interval / 2)
        try:
            follow.validate()
        except InvalidParams as exc:
            raise InvalidSpec(f"entry {i}: follow-up phantom invalid ({exc})") from exc
        entries.append(CohortEntry(f"P{i:03d}", params, interval, gr, follow))
    return entries


def generate_cohort(spec: CohortSpec, seed: int, outdir) -> CohortManifest:
    """Sample a cohort and write baseline/follow-up PLY meshes plus manifest.json."""
    outdir = Path(outdir)
    (outdir / "meshes").mkdir(parents=True, exist_ok=True)
    entries = []
    for e in sample_cohort(spec, seed):
        base_rel = f"meshes/{e.patient_id}_baseline.ply"
        fu_rel = f"meshes/{e.patient_id}_followup.ply"
        save_mesh(generate_phantom(e.params)[0], outdir / base_rel)
        save_mesh(generate_phantom(e.followup_params)[0], outdir / fu_rel)
        entries.append(replace(e, baseline_mesh_path=base_rel, followup_mesh_path=fu_rel))
    manifest = CohortManifest(entries, seed, spec, root=outdir)
    (outdir / "manifest.json").write_text(manifest.to_json())
    return manifest
