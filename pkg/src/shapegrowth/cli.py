"""Command line entry point.

    shapegrowth run --config cfg.toml --workdir out/
    shapegrowth regress --stage-only --workdir out/

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import PipelineConfig, resolve_workdir
from .errors import ConfigError, StageDependencyError, StageFailure
from .pipeline import STAGES, run_pipeline, with_seed

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

_HELP = {
    "phantom": "generate the synthetic cohort (meshes and manifest)",
    "features": "centerlines, splines, local features and growth rates",
    "morph": "morph a template onto every baseline to get iso-topological grids",
    "ssa-pca": "PCA shape model, compactness, generalization, mode shapes",
    "ssa-pls": "PLS shape model and scores",
    "regress": "F-test ranking, SVR tuning and leave-one-out evaluation",
    "figures": "CSV (and optional SVG) plot data",
    "run": "the full pipeline",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapegrowth", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file (defaults apply when omitted)")
    common.add_argument("--workdir", help="artifact directory (default: $SHAPEGROWTH_WORKDIR)")
    common.add_argument("--stage-only", action="store_true",
                        help="do not run upstream stages; fail if their artifacts are missing")
    common.add_argument("--force", action="store_true", help="rerun even if artifacts are current")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--svg", action="store_true", help="also render SVG figures")
    common.add_argument("-v", "--verbose", action="store_true")
    for name in (*STAGES, "run"):
        sub.add_parser(name, parents=[common], help=_HELP[name])
    sub.add_parser("config", help="print the default config as TOML")
    return parser


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    if args.svg:
        from dataclasses import replace
        cfg = replace(cfg, figures=replace(cfg.figures, svg=True))
    return cfg.validate()


def _print_summary(report) -> None:
    for stage, status in report.status.items():
        extra = f" ({report.seconds[stage]:.1f} s)" if stage in report.seconds else ""
        print(f"{stage:10s} {status}{extra}", file=sys.stderr)
    m = report.metrics()
    if m is None:
        return
    print(f"{'family':10s} {'RMSE':>10s} {'R2':>8s}")
    for fam, d in m["families"].items():
        rmse = "nan" if d["rmse"] is None else f"{d['rmse']:.4f}"
        r2 = "nan" if d["r2"] is None else f"{d['r2']:.3f}"
        print(f"{fam:10s} {rmse:>10s} {r2:>8s}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "config":
        sys.stdout.write(PipelineConfig().to_toml())
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    stages = STAGES if args.command == "run" else (args.command,)
    workdir = resolve_workdir(args.workdir, cfg)
    try:
        report = run_pipeline(cfg, stages, workdir, stage_only=args.stage_only, force=args.force)
    except StageDependencyError as exc:
        print(f"missing dependency: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    _print_summary(report)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
