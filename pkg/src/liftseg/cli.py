"""Command-line interface.

Subcommands: synth, map, filter, lift, split, grow, merge, run, eval,
occlude, search.  Exit codes: 0 success, 2 validation/configuration error,
3 pipeline error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as lio
from .aggregate import MergeSchedule
from .density import ClusterConfig
from .errors import (ConfigurationError, LiftsegError, ParseError,
                     ValidationError)
from .evaluation import EvalConfig, evaluate, patch_drop, write_ap_csv
from .maskfilter import FilterConfig
from .pipeline import (PipelineConfig, run_pipeline, run_stage)
from .projection import MappingConfig
from .scene import SceneBundle
from .semantic import PixelFeatureSource, TextQuery, search
from .synth import CorruptionConfig, SynthConfig, emit_scene

log = logging.getLogger("liftseg")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="pipeline config JSON")
    p.add_argument("--views-fraction", type=float, dest="views_fraction")
    p.add_argument("--tau-vis", type=float, dest="tau_vis")
    p.add_argument("--strategy", choices=["naive", "min_depth", "occlusion_aware"])
    p.add_argument("--cmin", type=float, help="co-occurrence score threshold")
    p.add_argument("--min-cluster-size", type=int, dest="min_cluster_size")
    p.add_argument("--merge-schedule", dest="merge_schedule",
                   help="comma-separated decreasing thresholds, e.g. 0.7,0.5,0.3")
    p.add_argument("--affinity-floor", type=float, dest="affinity_floor")
    p.add_argument("--seed", type=int, default=0, help="view sampling seed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--checkpoint-dir", type=Path, dest="checkpoint_dir")
    p.add_argument("--no-filter", action="store_true")
    p.add_argument("--no-split", action="store_true")
    p.add_argument("--no-grow", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")


def _pipeline_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        cfg = PipelineConfig.from_json(Path(args.config).read_text())
    else:
        cfg = PipelineConfig()
    mapping = cfg.mapping
    if getattr(args, "tau_vis", None) is not None:
        mapping = replace(mapping, tau_vis=args.tau_vis)
    if getattr(args, "strategy", None):
        mapping = replace(mapping, strategy=args.strategy)
    mask_filter = cfg.mask_filter
    if getattr(args, "cmin", None) is not None:
        mask_filter = replace(mask_filter, score_threshold=args.cmin)
    cluster = cfg.cluster
    if getattr(args, "min_cluster_size", None) is not None:
        cluster = ClusterConfig(min_cluster_size=args.min_cluster_size,
                                min_samples=cfg.cluster.min_samples)
    schedule = cfg.schedule
    if getattr(args, "merge_schedule", None):
        schedule = MergeSchedule(thresholds=tuple(
            float(x) for x in args.merge_schedule.split(",")))
    grow = cfg.grow
    if getattr(args, "affinity_floor", None) is not None:
        grow = replace(grow, affinity_floor=args.affinity_floor)
    updates = dict(mapping=mapping, mask_filter=mask_filter, cluster=cluster,
                   schedule=schedule, grow=grow)
    if getattr(args, "views_fraction", None) is not None:
        updates["view_fraction"] = args.views_fraction
    if getattr(args, "seed", None) is not None:
        updates["sampling_seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        updates["workers"] = args.workers
    if getattr(args, "no_filter", False):
        updates["enable_filter"] = False
    if getattr(args, "no_split", False):
        updates["enable_split"] = False
    if getattr(args, "no_grow", False):
        updates["enable_grow"] = False
    return replace(cfg, **updates)


def _load_scene(scene_dir: Path) -> SceneBundle:
    return lio.load_scene(lio.ScenePaths.in_dir(scene_dir))


def _cmd_synth(args) -> int:
    corruption = CorruptionConfig(
        merge_mask_probability=args.merge_mask_probability,
        boundary_noise_px=args.boundary_noise_px,
        feature_noise_sigma=args.feature_noise_sigma,
        duplicate_appearance=args.duplicate_appearance)
    cfg = SynthConfig(rng_seed=args.seed, object_count=args.objects,
                      points_per_object=args.points_per_object,
                      background_points=args.background_points,
                      camera_count=args.cameras, width=args.width,
                      height=args.height, corruption=corruption)
    out = emit_scene(cfg, args.out, with_pixel_features=args.pixel_features,
                     pixel_feature_sigma=args.pixel_feature_sigma)
    print(f"scene written to {out}")
    return 0


def _cmd_stage(stage: str, args) -> int:
    cfg = _pipeline_config(args)
    scene = _load_scene(args.scene)
    ckpt = args.checkpoint_dir or (Path(args.scene) / "checkpoints")
    run_stage(stage, scene, cfg, ckpt)
    print(f"stage {stage} complete; checkpoints in {ckpt}")
    return 0


def _cmd_run(args) -> int:
    cfg = _pipeline_config(args)
    scene = _load_scene(args.scene)
    result = run_pipeline(scene, cfg, checkpoint_dir=args.checkpoint_dir)
    out = args.out or (Path(args.scene) / "instances.in3d")
    lio.write_instances(result.proposals, out)
    for stage, dt in result.timings.items():
        log.info("%-6s %.3fs", stage, dt)
    print(f"{len(result.proposals)} instances ({len(result.selected_views)} views) "
          f"-> {out}")
    return 0


def _cmd_eval(args) -> int:
    gt = lio.read_instance_labels(args.ground_truth)
    proposals = lio.read_instances(args.instances)
    report = evaluate(proposals, gt, EvalConfig())
    if args.report:
        Path(args.report).write_text(report.to_json())
    if args.csv:
        write_ap_csv(report, args.csv)
    print(f"mAP {report.mAP:.4f}  AP50 {report.ap50:.4f}  "
          f"AP25 {report.ap25:.4f}  instances {report.instance_count}")
    return 0


def _cmd_occlude(args) -> int:
    masks = lio.read_masks_dir(args.masks)
    dropped = patch_drop(masks, args.percentage, args.seed)
    lio.write_masks_dir(dropped, args.out, exact=args.exact)
    print(f"{len(dropped)} masks after {args.percentage}% patch drop -> {args.out}")
    return 0


def _cmd_search(args) -> int:
    scene = _load_scene(args.scene)
    cfg = _pipeline_config(args)
    proposals = lio.read_instances(args.instances)
    maps = {}
    for pf in sorted(Path(args.pixel_features).glob("*.pf3d")):
        maps[pf.stem] = lio.read_pixel_features(pf)
    source = PixelFeatureSource(maps)
    views = [scene.view(v) for v in sorted(maps.keys())]
    from .projection import build_mappings
    mappings = build_mappings(scene.cloud, views, cfg.mapping,
                              workers=cfg.workers)
    text, emb = lio.read_query(args.query)
    ranking = search(proposals, mappings, source, TextQuery(text, emb))
    top = ranking[:args.top]
    for rank, (idx, score) in enumerate(top, start=1):
        print(f"{rank}. proposal {idx}  score {score:.4f}")
    if args.report:
        Path(args.report).write_text(json.dumps(
            {"query": text,
             "ranking": [{"proposal": i, "score": s} for i, s in ranking]},
            indent=1, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="liftseg",
        description="Training-free 3D instance segmentation from multi-view "
                    "2D masks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene file set")
    p.add_argument("out", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--objects", type=int, default=8)
    p.add_argument("--points-per-object", type=int, default=1200,
                   dest="points_per_object")
    p.add_argument("--background-points", type=int, default=None,
                   dest="background_points")
    p.add_argument("--cameras", type=int, default=12)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--merge-mask-probability", type=float, default=0.0,
                   dest="merge_mask_probability")
    p.add_argument("--boundary-noise-px", type=int, default=0,
                   dest="boundary_noise_px")
    p.add_argument("--feature-noise-sigma", type=float, default=0.02,
                   dest="feature_noise_sigma")
    p.add_argument("--duplicate-appearance", action="store_true",
                   dest="duplicate_appearance")
    p.add_argument("--pixel-features", action="store_true",
                   dest="pixel_features")
    p.add_argument("--pixel-feature-sigma", type=float, default=0.0,
                   dest="pixel_feature_sigma")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=_cmd_synth)

    for stage in ("map", "filter", "lift", "split", "grow", "merge"):
        p = sub.add_parser(stage, help=f"run only the {stage} stage")
        p.add_argument("scene", type=Path)
        _add_common(p)
        p.set_defaults(func=lambda a, s=stage: _cmd_stage(s, a))

    p = sub.add_parser("run", help="run the full pipeline")
    p.add_argument("scene", type=Path)
    p.add_argument("--out", type=Path)
    _add_common(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="score instances against ground truth")
    p.add_argument("instances", type=Path)
    p.add_argument("ground_truth", type=Path)
    p.add_argument("--report", type=Path)
    p.add_argument("--csv", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("occlude", help="apply the patch-drop protocol to masks")
    p.add_argument("masks", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--percentage", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exact", action="store_true",
                   help="write the exact npz container instead of PNG rasters")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=_cmd_occlude)

    p = sub.add_parser("search", help="rank proposals against a text query "
                                      "embedding")
    p.add_argument("scene", type=Path)
    p.add_argument("instances", type=Path)
    p.add_argument("pixel_features", type=Path)
    p.add_argument("query", type=Path)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--report", type=Path)
    _add_common(p)
    p.set_defaults(func=_cmd_search)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, ParseError, ConfigurationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except LiftsegError as e:
        print(f"pipeline error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
