"""Stage orchestration: phantom cohort to regression report and plot data.

Every stage writes into ``<workdir>/<stage>/`` and finishes by writing
``stage.json`` with SHA-256 hashes of its inputs (config section plus the
upstream stage records) and of every file it produced. A stage whose record
matches the current inputs and whose files are intact is not rerun.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import shutil
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import __version__
from .config import PipelineConfig
from .errors import MissingArtifact, RankDeficient, ShapeGrowthError, StageDependencyError, StageFailure
from .geometry import build_splines, clip_segment, extract_centerline, growth_rate, local_features, max_diameter
from .geometry import SplineSet
from .mesh import load_mesh, save_mesh
from .morph import IsoTopologicalCohort, build_cohort_grids, median_diameter_index
from .phantom import CohortManifest, generate_cohort
from .pls import PLS1Regression, fit_pls, load_pls, pls_mode_shape, save_pls
from .regress import (FeatureTable, CvReport, ftest_details, loo_cv, partial_dependence,
                      regression_surface, tune_svr)
from .ssm import assemble_data_matrix, compactness_curve, fit_ssm, generalization, mode_shape, project_weights
from .svr import EpsilonSVR, SvrHyper, fit_svr, load_svr, save_svr, svr_predict

log = logging.getLogger("shapegrowth")

STAGES = ("phantom", "features", "morph", "ssa-pca", "ssa-pls", "regress", "figures")
DEPENDS = {
    "phantom": (),
    "features": ("phantom",),
    "morph": ("features",),
    "ssa-pca": ("morph",),
    "ssa-pls": ("features", "morph"),
    "regress": ("features", "morph", "ssa-pca", "ssa-pls"),
    "figures": ("ssa-pca", "ssa-pls", "regress"),
}
CONFIG_KEYS = {
    "phantom": ("seed", "phantom"),
    "features": ("geometry",),
    "morph": ("morph",),
    "ssa-pca": ("ssa",),
    "ssa-pls": ("ssa",),
    "regress": ("ssa", "regression"),
    "figures": ("ssa", "regression", "figures"),
}
RECORD = "stage.json"
FAMILIES = ("local_svr", "pca_svr", "pls")
LOCAL_FEATURES = ("DCR", "EILR", "T")


# ---------------------------------------------------------------------------
# Hashing and stage records

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _sha_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _config_hash(cfg: PipelineConfig, stage: str) -> str:
    part = {k: (cfg.seed if k == "seed" else cfg.section(k)) for k in CONFIG_KEYS[stage]}
    return _sha_json(part)


@dataclass
class StageArtifact:
    stage: str
    inputs: dict
    outputs: dict  # relative path -> sha256
    version: str = __version__

    def to_json(self) -> str:
        doc = {"stage": self.stage, "version": self.version, "inputs": self.inputs,
               "outputs": self.outputs}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "StageArtifact":
        d = json.loads(Path(path).read_text())
        return cls(d["stage"], d["inputs"], d["outputs"], d.get("version", ""))

    def digest(self) -> str:
        return _sha_json({"stage": self.stage, "outputs": self.outputs})


class Workdir:
    def __init__(self, root):
        self.root = Path(root)

    def stage_dir(self, stage: str) -> Path:
        return self.root / stage

    def record_path(self, stage: str) -> Path:
        return self.stage_dir(stage) / RECORD

    def record(self, stage: str) -> StageArtifact | None:
        p = self.record_path(stage)
        return StageArtifact.load(p) if p.exists() else None

    def intact(self, stage: str) -> tuple[bool, str]:
        """Whether the stage record exists and every listed file still matches."""
        rec = self.record(stage)
        if rec is None:
            return False, f"{self.record_path(stage)} is missing"
        d = self.stage_dir(stage)
        for rel, digest in rec.outputs.items():
            p = d / rel
            if not p.exists():
                return False, f"{p} is missing"
            if sha256_file(p) != digest:
                return False, f"{p} does not match its recorded hash"
        return True, ""

    def file(self, stage: str, rel: str) -> Path:
        p = self.stage_dir(stage) / rel
        if not p.exists():
            raise MissingArtifact(f"required artifact {p} is missing")
        return p


def _expected_inputs(wd: Workdir, cfg: PipelineConfig, stage: str) -> dict:
    inputs = {"config": _config_hash(cfg, stage)}
    for dep in DEPENDS[stage]:
        rec = wd.record(dep)
        inputs[dep] = rec.digest() if rec else None
    return inputs


def _is_current(wd: Workdir, cfg: PipelineConfig, stage: str) -> bool:
    ok, _ = wd.intact(stage)
    return ok and wd.record(stage).inputs == _expected_inputs(wd, cfg, stage)


def _seal(wd: Workdir, stage: str, inputs: dict) -> StageArtifact:
    d = wd.stage_dir(stage)
    outputs = {}
    for p in sorted(d.rglob("*")):
        if p.is_file() and p.name != RECORD:
            outputs[p.relative_to(d).as_posix()] = sha256_file(p)
    rec = StageArtifact(stage, inputs, outputs)
    wd.record_path(stage).write_text(rec.to_json())
    return rec


# ---------------------------------------------------------------------------
# Small CSV helpers (floats written with repr so they round-trip exactly)

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if np.isfinite(v) else ""
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"required artifact {path} is missing")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _column_table(path, prefix: str):
    """Read ``patient_id, <prefix>1, <prefix>2, ...`` into (ids, names, matrix)."""
    header, rows = read_csv(path)
    names = header[1:]
    ids = [r[0] for r in rows]
    X = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float).reshape(len(rows), len(names))
    return ids, names, X


# ---------------------------------------------------------------------------
# Stages

def stage_phantom(cfg: PipelineConfig, wd: Workdir, out: Path) -> None:
    generate_cohort(cfg.phantom, cfg.seed, out)


def _segment(mesh, geo):
    cl = extract_centerline(mesh, step=geo.step, smoothing_window=geo.smoothing_window)
    if tuple(geo.clip) != (0.0, 1.0):
        mesh, cl = clip_segment(mesh, cl, *geo.clip)
    return mesh, cl


def stage_features(cfg: PipelineConfig, wd: Workdir, out: Path) -> None:
    man = CohortManifest.load(wd.file("phantom", "manifest.json"))
    geo = cfg.geometry
    (out / "segments").mkdir()
    rows = []
    for e in man.entries:
        try:
            mesh, cl = _segment(load_mesh(man.resolve(e.baseline_mesh_path)), geo)
            splines = build_splines(mesh, cl, geo.n_sections)
            f = local_features(cl, splines)
            _, fcl = _segment(load_mesh(man.resolve(e.followup_mesh_path)), geo)
            d_fu = max_diameter(fcl)
        except ShapeGrowthError as exc:
            raise type(exc)(f"patient {e.patient_id}: {exc}") from exc
        save_mesh(mesh, out / "segments" / f"{e.patient_id}.ply")
        pts = splines.as_array().reshape(-1, 3)
        write_csv(out / "splines" / f"{e.patient_id}.csv", ["x", "y", "z"], pts.tolist())
        rows.append([e.patient_id, f.D, f.L_C, f.DCR, f.EILR, f.T, d_fu, e.interval,
                     growth_rate(f.D, d_fu, e.interval), e.GR_true])
    write_csv(out / "local_features.csv",
              ["patient_id", "D", "L_C", "DCR", "EILR", "T", "D_followup", "interval", "GR", "GR_true"],
              rows)


@dataclass(frozen=True)
class FeatureRows:
    ids: list
    columns: dict  # name -> array

    @classmethod
    def load(cls, wd: Workdir) -> "FeatureRows":
        header, rows = read_csv(wd.file("features", "local_features.csv"))
        cols = {h: np.array([float(r[k]) for r in rows]) for k, h in enumerate(header) if k}
        return cls([r[0] for r in rows], cols)

    @property
    def gr(self) -> np.ndarray:
        return self.columns["GR"]


def _splines(wd: Workdir, pid: str) -> SplineSet:
    _, rows = read_csv(wd.file("features", f"splines/{pid}.csv"))
    pts = np.array(rows, dtype=float)
    return SplineSet.from_array(pts.reshape(8, -1, 3))


def stage_morph(cfg: PipelineConfig, wd: Workdir, out: Path) -> None:
    feats = FeatureRows.load(wd)
    ids = feats.ids
    meshes = [load_mesh(wd.file("features", f"segments/{pid}.ply")) for pid in ids]
    splines = [_splines(wd, pid) for pid in ids]
    t = median_diameter_index(feats.columns["D"])
    opts = cfg.morph
    cohort = build_cohort_grids(meshes[t], list(zip(meshes, splines)), opts.n_rounds, ids=ids,
                                template_splines=splines[t], n_per_spline=opts.n_per_spline,
                                proj_tol=opts.proj_tol)
    cohort.save(out)
    far = [pid for pid, r in zip(ids, cohort.reports) if not r.within_tolerance]
    if far:
        log.warning("morph: %d grid(s) exceed %.3g mm from their target: %s", len(far),
                    opts.proj_tol, ", ".join(far))


def _grid_matrix(wd: Workdir):
    cohort = IsoTopologicalCohort.load(wd.stage_dir("morph"))
    return cohort, assemble_data_matrix(cohort)


def stage_ssa_pca(cfg: PipelineConfig, wd: Workdir, out: Path) -> None:
    cohort, dm = _grid_matrix(wd)
    model = fit_ssm(dm)
    cn = compactness_curve(model)
    write_csv(out / "spectrum.csv", ["mode", "eigenvalue", "singular_value", "CN"],
              [[j + 1, model.eigenvalues[j], model.singular_values[j], cn[j]] for j in range(model.m_max)])
    m_ge = min(cfg.ssa.generalization_modes, max(dm.N - 2, 1))
    ge = generalization(dm, range(1, m_ge + 1))
    write_csv(out / "generalization.csv", ["M", "GE"], [[m + 1, g] for m, g in enumerate(ge)])
    W = np.array([project_weights(model, dm.shape_vector(i)).w for i in range(dm.N)])
    write_csv(out / "weights.csv", ["patient_id", *[f"w{j + 1}" for j in range(model.m_max)]],
              [[pid, *w] for pid, w in zip(dm.patient_ids, W)])
    np.save(out / "modes.npy", model.modes)
    save_mesh(cohort.template.with_vertices(model.mean_shape.reshape(-1, 3)), out / "mean_shape.ply")
    xi = cfg.ssa.xi_lim
    (out / "mode_shapes").mkdir()
    for j in cfg.ssa.pca_mode_shapes:
        if j > model.m_max:
            log.warning("ssa-pca: mode %d requested but the model has %d", j, model.m_max)
            continue
        for tag, s in (("minus", -xi), ("plus", xi)):
            v = mode_shape(model, j, s, xi_limit=xi).reshape(-1, 3)
            save_mesh(cohort.template.with_vertices(v), out / "mode_shapes" / f"pca_mode{j}_{tag}.ply")


def stage_ssa_pls(cfg: PipelineConfig, wd: Workdir, out: Path) -> None:
    cohort, dm = _grid_matrix(wd)
    feats = FeatureRows.load(wd)
    y = _aligned_gr(feats, dm.patient_ids)
    X = dm.deviations().T + dm.mean_shape
    M = cfg.ssa.pls_components
    model = fit_pls(X, y, M)
    save_pls(model, out / "model")
    # scores of a longer fit feed the feature ranking; components are nested,
    # so its first M columns are those of the regression model
    m_fs = min(max(cfg.ssa.pls_fs_components, M), dm.N - 1, X.shape[1])
    while True:
        try:
            wide = fit_pls(X, y, m_fs)
            break
        except RankDeficient:
            if m_fs <= M:
                raise
            m_fs -= 1
    write_csv(out / "scores.csv", ["patient_id", *[f"t{m + 1}" for m in range(m_fs)]],
              [[pid, *t] for pid, t in zip(dm.patient_ids, wide.x_scores)])
    xi = cfg.ssa.xi_lim
    (out / "mode_shapes").mkdir()
    for m in range(1, M + 1):
        for tag, s in (("minus", -xi), ("plus", xi)):
            v = pls_mode_shape(model, m, s).reshape(-1, 3)
            save_mesh(cohort.template.with_vertices(v), out / "mode_shapes" / f"pls_mode{m}_{tag}.ply")


def _aligned_gr(feats: FeatureRows, ids) -> np.ndarray:
    pos = {pid: k for k, pid in enumerate(feats.ids)}
    missing = [pid for pid in ids if pid not in pos]
    if missing:
        raise MissingArtifact(f"no growth rate for {', '.join(missing)}")
    return feats.gr[[pos[pid] for pid in ids]]


def _tables(wd: Workdir):
    feats = FeatureRows.load(wd)
    local = FeatureTable(LOCAL_FEATURES, np.column_stack([feats.columns[n] for n in LOCAL_FEATURES]),
                         feats.gr, feats.ids)
    ids, names, W = _column_table(wd.file("ssa-pca", "weights.csv"), "w")
    pca = FeatureTable(tuple(names), W, _aligned_gr(feats, ids), ids)
    ids, names, T = _column_table(wd.file("ssa-pls", "scores.csv"), "t")
    pls_scores = FeatureTable(tuple(names), T, _aligned_gr(feats, ids), ids)
    return local, pca, pls_scores


def _ftest_rows(details):
    return [[k + 1, r.feature, r.F, r.p, r.FS, r.n_groups, int(r.degenerate)]
            for k, r in enumerate(details)]


_FTEST_HEADER = ["rank", "feature", "F", "p", "FS", "n_groups", "degenerate"]


def _pick_hyper(table, default: SvrHyper, opts, seed, out: Path, name: str) -> SvrHyper:
    if not opts.tune:
        return default
    res = tune_svr(table, opts.grid(), seed=seed, n_iter=opts.n_iter or None)
    write_csv(out / f"tuning_{name}.csv", ["kernel_size", "box", "epsilon", "loo_mse"],
              [[h.kernel_size, h.box, h.epsilon, mse] for h, mse in res.trials])
    return res.best


def stage_regress(cfg: PipelineConfig, wd: Workdir, out: Path) -> None:
    opts = cfg.regression
    local, pca_all, pls_scores = _tables(wd)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fs_local = ftest_details(local, opts.ftest_bins)
        fs_pca = ftest_details(pca_all, opts.ftest_bins)
        fs_pls = ftest_details(pls_scores, opts.ftest_bins)
    write_csv(out / "ftest_local.csv", _FTEST_HEADER, _ftest_rows(fs_local))
    write_csv(out / "ftest_pca.csv", _FTEST_HEADER, _ftest_rows(fs_pca))
    write_csv(out / "ftest_pls.csv", _FTEST_HEADER, _ftest_rows(fs_pls))

    n_sel = min(opts.n_global_features, len(pca_all.names))
    selected = [r.feature for r in fs_pca[:n_sel]]
    selected.sort(key=lambda n: int(n[1:]))
    pca = pca_all.select(selected)

    h_local = _pick_hyper(local, SvrHyper(*opts.local_svr), opts, cfg.seed, out, "local_svr")
    h_pca = _pick_hyper(pca, SvrHyper(*opts.pca_svr), opts, cfg.seed, out, "pca_svr")

    _, dm = _grid_matrix(wd)
    if list(dm.patient_ids) != list(pca_all.ids):
        raise MissingArtifact("grid order does not match the PCA weights")
    X = dm.deviations().T + dm.mean_shape
    shapes = FeatureTable(tuple(f"x{k}" for k in range(X.shape[1])), X, pca_all.y, pca_all.ids)
    M = cfg.ssa.pls_components

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        reports = {
            "local_svr": loo_cv(local, EpsilonSVR(h_local.kernel_size, h_local.box, h_local.epsilon),
                                "local_svr"),
            "pca_svr": loo_cv(pca, EpsilonSVR(h_pca.kernel_size, h_pca.box, h_pca.epsilon), "pca_svr"),
            "pls": loo_cv(shapes, PLS1Regression(M), "pls"),
        }
        (out / "models").mkdir()
        save_svr(fit_svr(local.X, local.y, h_local), out / "models" / "local_svr.json")
        save_svr(fit_svr(pca.X, pca.y, h_pca), out / "models" / "pca_svr.json")
    for name, rep in reports.items():
        rep.save(out / "cv", name)

    families = {
        "local_svr": {"features": list(LOCAL_FEATURES), "hyper": _hyper_dict(h_local)},
        "pca_svr": {"features": selected, "hyper": _hyper_dict(h_pca)},
        "pls": {"n_components": M},
    }
    for name, rep in reports.items():
        families[name].update(rep.to_dict())
    order = sorted(FAMILIES, key=lambda n: (reports[n].rmse, FAMILIES.index(n)))
    _write_json(out / "report.json", {"n": local.n, "families": families, "rmse_order": order})


def _hyper_dict(h: SvrHyper) -> dict:
    return {"kernel_size": h.kernel_size, "box": h.box, "epsilon": h.epsilon}


# ---------------------------------------------------------------------------
# Plot data

def _levels_reached(cn, levels):
    out = []
    for lv in levels:
        hit = np.flatnonzero(cn >= lv - 1e-12)
        out.append([lv, int(hit[0]) + 1 if len(hit) else ""])
    return out


def _ftest_by_index(path, prefix):
    header, rows = read_csv(path)
    k, f = header.index("feature"), header.index("FS")
    items = sorted(((int(r[k][len(prefix):]), float(r[f])) for r in rows))
    return items


class _ScoreModel:
    """Linear PLS prediction expressed in score space: y = y_mean + y_scale * t q."""

    def __init__(self, pls):
        self.q, self.mean, self.scale = pls.y_loadings, pls.y_mean, pls.y_scale

    def predict(self, T):
        return self.mean + self.scale * np.asarray(T)[:, : len(self.q)] @ self.q


def emit_figures(workdir, cfg: PipelineConfig | None = None, out: Path | None = None) -> list[Path]:
    """CSV (and optionally SVG) data behind the compactness, prediction, PDP
    and regression-surface figures."""
    cfg = cfg or PipelineConfig()
    wd = Workdir(workdir)
    out = Path(out) if out is not None else wd.stage_dir("figures")
    out.mkdir(parents=True, exist_ok=True)
    svg = cfg.figures.svg
    written = []

    # compactness, generalization, feature scores
    _, spec = read_csv(wd.file("ssa-pca", "spectrum.csv"))
    cn = np.array([float(r[3]) for r in spec])
    eig = np.array([float(r[1]) for r in spec])
    written.append(write_csv(out / "fig4a_compactness.csv", ["M", "CN"],
                             [[m + 1, c] for m, c in enumerate(cn)]))
    written.append(write_csv(out / "fig4a_markers.csv", ["level", "M"],
                             _levels_reached(cn, cfg.ssa.variance_markers)))
    _, ge_rows = read_csv(wd.file("ssa-pca", "generalization.csv"))
    ge = [(int(r[0]), float(r[1])) for r in ge_rows]
    written.append(write_csv(out / "fig4b_generalization.csv", ["M", "GE"], ge))
    report = json.loads(wd.file("regress", "report.json").read_text())
    selected = report["families"]["pca_svr"]["features"]
    fs_pca = _ftest_by_index(wd.file("regress", "ftest_pca.csv"), "w")
    fs_pls = _ftest_by_index(wd.file("regress", "ftest_pls.csv"), "t")
    written.append(write_csv(out / "fig4c_fs_pca.csv", ["mode", "FS", "selected"],
                             [[j, fs, int(f"w{j}" in selected)] for j, fs in fs_pca]))
    written.append(write_csv(out / "fig4d_fs_pls.csv", ["component", "FS"], fs_pls))

    # predicted versus true
    for fam in FAMILIES:
        rep = CvReport.load(wd.stage_dir("regress") / "cv", fam)
        written.append(write_csv(out / f"fig6_{fam}.csv", ["patient_id", "GR_true", "GR_pred"],
                                 zip(rep.ids, rep.y_true, rep.y_pred)))
        if svg:
            from .plots import scatter_svg
            scatter_svg(out / f"fig6_{fam}.svg", rep.y_true, rep.y_pred, fam)

    # partial dependence
    local, pca_all, pls_scores = _tables(wd)
    pca = pca_all.select(selected)
    m_local = load_svr(wd.file("regress", "models/local_svr.json"))
    m_pca = load_svr(wd.file("regress", "models/pca_svr.json"))
    pls = load_pls(wd.stage_dir("ssa-pls") / "model")
    pls_table = pls_scores.select(pls_scores.names[: pls.n_components])
    pdp_sets = {
        "local_svr": (lambda X, m=m_local: svr_predict(m, X), local),
        "pca_svr": (lambda X, m=m_pca: svr_predict(m, X), pca),
        "pls": (_ScoreModel(pls), pls_table),
    }
    for fam, (model, table) in pdp_sets.items():
        curves = [partial_dependence(model, table, n, cfg.regression.pdp_points) for n in table.names]
        rows = [[c.feature, v, g] for c in curves for v, g in zip(c.grid, c.values)]
        written.append(write_csv(out / f"fig7_pdp_{fam}.csv", ["feature", "value", "GR"], rows))
        if svg:
            from .plots import lines_svg
            for c in curves:
                lines_svg(out / f"fig7_pdp_{fam}_{c.feature}.svg", {c.feature: (c.grid, c.values)},
                          c.feature, "GR (mm/month)")

    # regression surfaces over pairs of the selected PCA modes
    modes = [int(n[1:]) for n in selected]
    for j1, j2 in itertools.combinations(modes, 2):
        surf = regression_surface(lambda W, m=m_pca: svr_predict(m, W), modes, eig, (j1, j2),
                                  xi_lim=cfg.ssa.xi_lim, grid=cfg.regression.surface_grid)
        path = out / f"fig8_surface_w{j1}_w{j2}.csv"
        surf.to_csv(path)
        written.append(path)
        if svg:
            surf.to_svg(out / f"fig8_surface_w{j1}_w{j2}.svg")

    if svg:
        from .plots import bars_svg, lines_svg
        lines_svg(out / "fig4a_compactness.svg", {"CN": (np.arange(1, len(cn) + 1), cn)}, "M", "CN",
                  markers=cfg.ssa.variance_markers)
        lines_svg(out / "fig4b_generalization.svg",
                  {"GE": ([m for m, _ in ge], [g for _, g in ge])}, "M", "GE (mm^2)")
        bars_svg(out / "fig4c_fs_pca.svg", [f"{j}" for j, _ in fs_pca], [f for _, f in fs_pca],
                 "PCA mode", "FS")
        bars_svg(out / "fig4d_fs_pls.svg", [f"{j}" for j, _ in fs_pls], [f for _, f in fs_pls],
                 "PLS component", "FS")
    return written


def stage_figures(cfg: PipelineConfig, wd: Workdir, out: Path) -> None:
    emit_figures(wd.root, cfg, out)


RUNNERS = {
    "phantom": stage_phantom,
    "features": stage_features,
    "morph": stage_morph,
    "ssa-pca": stage_ssa_pca,
    "ssa-pls": stage_ssa_pls,
    "regress": stage_regress,
    "figures": stage_figures,
}


# ---------------------------------------------------------------------------
# Driver

@dataclass
class RunReport:
    workdir: Path
    status: dict = field(default_factory=dict)  # stage -> "ran" | "cached"
    seconds: dict = field(default_factory=dict)

    def metrics(self) -> dict | None:
        p = self.workdir / "regress" / "report.json"
        if not p.exists():
            return None
        return json.loads(p.read_text())


def plan(stages, stage_only: bool = False) -> list[str]:
    wanted = set(stages)
    unknown = wanted - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stage(s): {sorted(unknown)}")
    if not stage_only:
        frontier = list(wanted)
        while frontier:
            for dep in DEPENDS[frontier.pop()]:
                if dep not in wanted:
                    wanted.add(dep)
                    frontier.append(dep)
    return [s for s in STAGES if s in wanted]


def run_pipeline(config: PipelineConfig, stages=STAGES, workdir=None, stage_only: bool = False,
                 force: bool = False) -> RunReport:
    """Run ``stages`` (plus any upstream stage that is missing or stale).

    With ``stage_only`` the upstream stages must already be present and
    current; otherwise StageDependencyError names what is missing. ``force``
    reruns the requested stages even when their artifacts are current.
    """
    config.validate()
    wd = Workdir(workdir if workdir is not None else (config.workdir or "."))
    wd.root.mkdir(parents=True, exist_ok=True)
    requested = set(stages)
    report = RunReport(wd.root)
    with FileLock(str(wd.root / ".lock")):
        for stage in plan(stages, stage_only):
            for dep in DEPENDS[stage]:
                if dep in report.status:
                    continue
                ok, why = wd.intact(dep)
                if not ok:
                    raise StageDependencyError(f"stage '{stage}' needs '{dep}' artifacts: {why}")
                if not _is_current(wd, config, dep):
                    raise StageDependencyError(
                        f"stage '{stage}' needs '{dep}' artifacts built with the current config; "
                        f"rerun '{dep}'")
            if _is_current(wd, config, stage) and not (force and stage in requested):
                report.status[stage] = "cached"
                continue
            inputs = _expected_inputs(wd, config, stage)
            out = wd.stage_dir(stage)
            if out.exists():
                shutil.rmtree(out)
            out.mkdir(parents=True)
            t0 = time.perf_counter()
            log.info("stage %s: running", stage)
            try:
                RUNNERS[stage](config, wd, out)
            except Exception as exc:
                raise StageFailure(stage, exc) from exc
            _seal(wd, stage, inputs)
            report.seconds[stage] = time.perf_counter() - t0
            report.status[stage] = "ran"
            log.info("stage %s: done in %.1f s", stage, report.seconds[stage])
    return report


def with_seed(config: PipelineConfig, seed: int) -> PipelineConfig:
    return replace(config, seed=seed)
