"""Command line interface.

Stages are resumable: each subcommand reads the previous stage's artifacts
from the output directory and writes its own.  ``run`` executes everything.

Exit codes: 0 ok, 2 configuration error, 3 stage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .errors import LeafFitError, ParameterError, StageError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leaffit",
        description="Convert a Gaussian-splat plant capture into a compact "
                    "instanced leaf asset")
    parser.add_argument("--config", help="TOML config file")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, need_input=True):
        if need_input:
            p.add_argument("--input", required=True, help="plant PLY file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--backend", choices=["heat", "dijkstra"])
        p.add_argument("--ns", type=int, help="sparse sample size")
        p.add_argument("--nk", type=int, help="graph neighbor count")
        p.add_argument("--tau", type=float, help="apex grouping margin")
        p.add_argument("--delta", type=float, help="iso-geodesic band width")
        p.add_argument("--epsilon", type=float,
                       help="petiole diameter threshold")
        p.add_argument("--rho", type=float, help="early protection ratio")
        p.add_argument("--k", type=int, help="control points per leaf")
        p.add_argument("--steps", type=int, help="optimizer steps")
        p.add_argument("--lr", type=float, help="optimizer learning rate")
        p.add_argument("--lambda", dest="lam", type=float,
                       help="Chamfer weight")
        p.add_argument("--sigma", type=float, help="MLS kernel width")

    run = sub.add_parser("run", help="execute every stage")
    add_common(run)
    run.add_argument("--root", required=True,
                     help="root primitive index or x,y,z")
    run.add_argument("--template", default="auto",
                     help="template leaf id or 'auto'")
    run.add_argument("--root-radius", type=float, default=None)
    run.add_argument("--petiole-radius", type=float, default=None)

    seg = sub.add_parser("segment", help="segment leaves only")
    add_common(seg)
    seg.add_argument("--root", required=True)

    reg = sub.add_parser("register", help="fit per-leaf controls")
    add_common(reg)
    reg.add_argument("--root", required=True)
    reg.add_argument("--template", default="auto")

    mesh = sub.add_parser("mesh", help="extract the template mesh")
    add_common(mesh)
    mesh.add_argument("--root", required=True)
    mesh.add_argument("--template", default="auto")

    stem_p = sub.add_parser("stem", help="generate the stem mesh")
    add_common(stem_p)
    stem_p.add_argument("--root", required=True)
    stem_p.add_argument("--root-radius", type=float, default=None)
    stem_p.add_argument("--petiole-radius", type=float, default=None)

    export = sub.add_parser("export", help="assemble and export the asset")
    add_common(export)
    export.add_argument("--root", required=True)
    export.add_argument("--template", default="auto")
    export.add_argument("--root-radius", type=float, default=None)
    export.add_argument("--petiole-radius", type=float, default=None)

    evalp = sub.add_parser("eval", help="evaluate one leaf from an asset")
    evalp.add_argument("--asset", required=True, help="asset directory")
    evalp.add_argument("--leaf", required=True, type=int)
    evalp.add_argument("--out", help="write deformed vertices to this OBJ")
    evalp.add_argument("--benchmark", action="store_true",
                       help="time the evaluation")

    serve_p = sub.add_parser("serve", help="interactive segmentation editor")
    serve_p.add_argument("--input", required=True)
    serve_p.add_argument("--segmentation", required=True,
                         help="segmentation JSON document")
    serve_p.add_argument("--port", type=int, default=7878)
    serve_p.add_argument("--backend", choices=["heat", "dijkstra"])
    return parser


def load_config(args) -> PipelineConfig:
    cfg = (PipelineConfig.from_toml(args.config) if args.config
           else PipelineConfig())
    mapping = [
        ("backend", cfg.segmentation, "backend"),
        ("ns", cfg.segmentation, "n_samples"),
        ("nk", cfg.segmentation, "n_neighbors"),
        ("tau", cfg.segmentation, "tau"),
        ("delta", cfg.segmentation, "delta"),
        ("epsilon", cfg.segmentation, "epsilon"),
        ("rho", cfg.segmentation, "rho"),
        ("k", cfg.registration, "control_count"),
        ("steps", cfg.registration, "steps"),
        ("lr", cfg.registration, "learning_rate"),
        ("lam", cfg.registration, "chamfer_weight"),
        ("sigma", cfg.registration, "sigma"),
    ]
    for arg_name, section, attr in mapping:
        value = getattr(args, arg_name, None)
        if value is not None:
            setattr(section, attr, value)
    return cfg


def _stem_spec(args, cfg: PipelineConfig):
    from .stem import StemSpec
    return StemSpec(
        root_radius=args.root_radius if getattr(args, "root_radius", None)
        else cfg.stem.root_radius,
        petiole_radius=args.petiole_radius
        if getattr(args, "petiole_radius", None) else cfg.stem.petiole_radius,
        sides=cfg.stem.sides)


def _cmd_run(args, cfg) -> int:
    from .pipeline import run_pipeline
    run_pipeline(args.input, args.root, args.out, template=args.template,
                 cfg=cfg, stem_spec=_stem_spec(args, cfg))
    print(f"asset written to {Path(args.out) / 'asset'}")
    return 0


def _cmd_segment(args, cfg) -> int:
    from .pipeline import run_pipeline
    run = run_pipeline(args.input, args.root, args.out, cfg=cfg,
                       write_reports=False, stop_after="segment")
    print(f"{run.segmentation.leaf_count()} leaves -> "
          f"{Path(args.out) / 'stages' / 'segmentation.json'}")
    return 0


def _partial_run(args, cfg, upto: str) -> int:
    # stages resume from artifacts already present under --out
    from .pipeline import run_pipeline
    run_pipeline(args.input, args.root, args.out,
                 template=getattr(args, "template", "auto"), cfg=cfg,
                 stem_spec=_stem_spec(args, cfg),
                 write_reports=(upto == "export"), stop_after=upto)
    print(f"stages through '{upto}' written under {args.out}")
    return 0


def _cmd_eval(args, cfg) -> int:
    import time

    from .asset import evaluate_leaf, import_asset
    asset = import_asset(args.asset)
    vertices = evaluate_leaf(asset, args.leaf)
    if args.benchmark:
        for _ in range(3):
            evaluate_leaf(asset, args.leaf)
        times = []
        for _ in range(20):
            t0 = time.perf_counter()
            evaluate_leaf(asset, args.leaf)
            times.append(time.perf_counter() - t0)
        print(f"leaf {args.leaf}: {np.median(times) * 1e3:.3f} ms median "
              f"({asset.template_mesh.vertex_count} vertices, "
              f"K={asset.control_count})")
    if args.out:
        lines = [f"o leaf_{args.leaf}"]
        lines += [f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}" for v in vertices]
        lines += [f"f {int(a) + 1} {int(b) + 1} {int(c) + 1}"
                  for a, b, c in asset.template_mesh.faces]
        Path(args.out).write_text("\n".join(lines) + "\n")
        print(f"deformed leaf {args.leaf} -> {args.out}")
    else:
        print(f"leaf {args.leaf}: {vertices.shape[0]} vertices, "
              f"bbox {vertices.min(axis=0).round(4).tolist()} .. "
              f"{vertices.max(axis=0).round(4).tolist()}")
    return 0


def _cmd_serve(args, cfg) -> int:
    from .service import serve
    serve(args.input, args.segmentation, port=args.port,
          cfg=cfg.segmentation)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
    except (ParameterError, OSError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "run":
            return _cmd_run(args, cfg)
        if args.command == "segment":
            return _cmd_segment(args, cfg)
        if args.command in ("register", "mesh", "stem", "export"):
            return _partial_run(args, cfg, args.command)
        if args.command == "eval":
            return _cmd_eval(args, cfg)
        if args.command == "serve":
            return _cmd_serve(args, cfg)
        raise ParameterError(f"unknown command {args.command}")
    except ParameterError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return 3
    except LeafFitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
