"""Pipeline configuration, read from and written to TOML."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .errors import ConfigError, InvalidSpec
from .phantom import CohortSpec

WORKDIR_ENV = "SHAPEGROWTH_WORKDIR"
DEFAULT_WORKDIR = "shapegrowth-work"


@dataclass(frozen=True)
class GeometryOptions:
    step: float = 1.0  # mm
    smoothing_window: int = 1
    n_sections: int = 100
    clip: tuple[float, float] = (0.0, 1.0)


@dataclass(frozen=True)
class MorphOptions:
    n_per_spline: int = 10
    proj_tol: float = 0.05  # mm
    n_rounds: int = 2


@dataclass(frozen=True)
class SsaOptions:
    xi_lim: float = 3.0
    variance_markers: tuple[float, ...] = (0.80, 0.90, 0.95, 0.99)
    generalization_modes: int = 24
    pca_mode_shapes: tuple[int, ...] = (1, 2, 6)
    pls_components: int = 3
    pls_fs_components: int = 10


@dataclass(frozen=True)
class RegressionOptions:
    n_global_features: int = 3
    ftest_bins: int = 10
    # (kernel_size, box, epsilon) per family, used unless ``tune`` is set
    local_svr: tuple[float, ...] = (1.72, 0.41, 0.008)
    pca_svr: tuple[float, ...] = (1.89, 1.82, 0.039)
    tune: bool = False
    kernel_size: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    box: tuple[float, ...] = (0.1, 1.0, 10.0)
    epsilon: tuple[float, ...] = (0.005, 0.02)
    n_iter: int = 0  # 0 means exhaustive
    pdp_points: int = 100
    surface_grid: int = 50

    def grid(self) -> dict:
        return {"kernel_size": self.kernel_size, "box": self.box, "epsilon": self.epsilon}


@dataclass(frozen=True)
class FigureOptions:
    svg: bool = False


_SECTIONS = {
    "geometry": GeometryOptions,
    "morph": MorphOptions,
    "ssa": SsaOptions,
    "regression": RegressionOptions,
    "figures": FigureOptions,
}


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    workdir: str | None = None
    phantom: CohortSpec = field(default_factory=CohortSpec)
    geometry: GeometryOptions = field(default_factory=GeometryOptions)
    morph: MorphOptions = field(default_factory=MorphOptions)
    ssa: SsaOptions = field(default_factory=SsaOptions)
    regression: RegressionOptions = field(default_factory=RegressionOptions)
    figures: FigureOptions = field(default_factory=FigureOptions)

    def validate(self) -> "PipelineConfig":
        try:
            self.phantom.validate()
        except InvalidSpec as exc:
            raise ConfigError(f"[phantom] {exc}") from exc
        g, m, s, r = self.geometry, self.morph, self.ssa, self.regression
        positive = {
            "geometry.step": g.step, "geometry.smoothing_window": g.smoothing_window,
            "geometry.n_sections": g.n_sections, "morph.n_per_spline": m.n_per_spline,
            "morph.proj_tol": m.proj_tol, "morph.n_rounds": m.n_rounds, "ssa.xi_lim": s.xi_lim,
            "ssa.generalization_modes": s.generalization_modes,
            "ssa.pls_components": s.pls_components, "ssa.pls_fs_components": s.pls_fs_components,
            "regression.n_global_features": r.n_global_features,
            "regression.pdp_points": r.pdp_points, "regression.surface_grid": r.surface_grid,
        }
        bad = [k for k, v in positive.items() if not v > 0]
        if r.ftest_bins < 2:
            bad.append("regression.ftest_bins")
        for name in ("local_svr", "pca_svr"):
            h = getattr(r, name)
            if len(h) != 3 or min(h) <= 0:
                bad.append(f"regression.{name}")
        if r.n_iter < 0:
            bad.append("regression.n_iter")
        if not all(r.grid().values()) or min(min(v) for v in r.grid().values()) <= 0:
            bad.append("regression grid")
        if not 0.0 <= g.clip[0] < g.clip[1] <= 1.0:
            bad.append("geometry.clip")
        if any(not 0 < v <= 1 for v in s.variance_markers):
            bad.append("ssa.variance_markers")
        if any(j < 1 for j in s.pca_mode_shapes):
            bad.append("ssa.pca_mode_shapes")
        if bad:
            raise ConfigError("invalid values: " + ", ".join(bad))
        return self

    def section(self, name: str) -> dict:
        """Plain-data view of one section, used for stage input hashes."""
        if name == "phantom":
            return self.phantom.to_dict()
        return _plain(asdict(getattr(self, name)))

    def to_dict(self) -> dict:
        d = {"seed": self.seed}
        if self.workdir is not None:
            d["workdir"] = self.workdir
        d["phantom"] = self.phantom.to_dict()
        for name in _SECTIONS:
            d[name] = self.section(name)
        return d

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - {"seed", "workdir", "phantom", *_SECTIONS}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        if "seed" in d:
            if not isinstance(d["seed"], int) or isinstance(d["seed"], bool):
                raise ConfigError("seed must be an integer")
            kwargs["seed"] = d["seed"]
        if "workdir" in d:
            kwargs["workdir"] = str(d["workdir"])
        if "phantom" in d:
            try:
                kwargs["phantom"] = CohortSpec.from_dict(d["phantom"])
            except (InvalidSpec, TypeError, ValueError) as exc:
                raise ConfigError(f"[phantom] {exc}") from exc
        for name, klass in _SECTIONS.items():
            if name in d:
                kwargs[name] = _build(klass, d[name], name)
        return cls(**kwargs).validate()

    @classmethod
    def from_toml(cls, text: str) -> "PipelineConfig":
        try:
            return cls.from_dict(tomli.loads(text))
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"config is not valid TOML: {exc}") from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_toml(text)


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _build(klass, values, name):
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in fields(klass)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {sorted(unknown)}")
    kw = {}
    for k, v in values.items():
        default = getattr(klass(), k)
        try:
            if isinstance(default, tuple):
                kw[k] = tuple(type(default[0])(x) if default else x for x in v)
            elif isinstance(default, bool):
                if not isinstance(v, bool):
                    raise TypeError("expected true or false")
                kw[k] = v
            else:
                kw[k] = type(default)(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}] {k}: {exc}") from exc
    return klass(**kw)


def resolve_workdir(cli_value=None, config: PipelineConfig | None = None) -> Path:
    """--workdir, then $SHAPEGROWTH_WORKDIR, then the config, then a local default."""
    for v in (cli_value, os.environ.get(WORKDIR_ENV), config.workdir if config else None):
        if v:
            return Path(v)
    return Path(DEFAULT_WORKDIR)
