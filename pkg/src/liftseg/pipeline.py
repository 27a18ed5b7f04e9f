"""End-to-end and per-stage pipeline orchestration.

`run_pipeline` composes: view subsampling, point-image mapping, co-occurrence
mask filtering, 2D-to-3D lifting, spatial-continuity splitting, feature-guided
growing, and multi-view progressive merging.  Each stage is also runnable in
isolation against checkpoints (`run_stage`), and the composition of stage
runs is bit-identical to the single-shot run.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as lio
from .aggregate import (GrowConfig, GrowContext, MergeSchedule, grow_seeds,
                        lift_masks, merge_views, seeds_from_lifted, split_seeds)
from .density import ClusterConfig
from .errors import DependencyError, ValidationError
from .evaluation import EvalConfig
from .maskfilter import (FilterConfig, build_table, cooccurrence_scores,
                         filter_masks, write_scores_csv)
from .projection import MappingConfig, Strategy, ViewMapping, build_mappings
from .scene import (MaskSet, PointSetInstance, ProposalSet, Provenance,
                    SceneBundle)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    mapping: MappingConfig = field(default_factory=MappingConfig)
    mask_filter: FilterConfig = field(default_factory=FilterConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    grow: GrowConfig = field(default_factory=GrowConfig)
    schedule: MergeSchedule = field(default_factory=MergeSchedule)
    eval: EvalConfig = field(default_factory=EvalConfig)
    view_fraction: float = 0.10
    view_sampling: str = "stride"  # "stride" | "random"
    sampling_seed: int = 0
    enable_filter: bool = True
    enable_split: bool = True
    enable_grow: bool = True
    workers: int = 1

    def __post_init__(self):
        if not (0.0 < self.view_fraction <= 1.0):
            raise ValidationError("view_fraction must lie in (0, 1]")
        if self.view_sampling not in ("stride", "random"):
            raise ValidationError("view_sampling must be 'stride' or 'random'")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")

    def to_json(self) -> str:
        doc = {
            "mapping": {"tau_vis": self.mapping.tau_vis,
                        "strategy": self.mapping.strategy.value,
                        "splat_radius": self.mapping.splat_radius},
            "mask_filter": {"score_threshold": self.mask_filter.score_threshold,
                            "inclusion_fraction": self.mask_filter.inclusion_fraction,
                            "normalize_by_nonempty_views":
                                self.mask_filter.normalize_by_nonempty_views},
            "cluster": {"min_cluster_size": self.cluster.min_cluster_size,
                        "min_samples": self.cluster.min_samples},
            "grow": {"affinity_floor": self.grow.affinity_floor,
                     "max_iterations": self.grow.max_iterations,
                     "adjacency_k": self.grow.adjacency_k,
                     "exclusive_claims": self.grow.exclusive_claims},
            "schedule": list(self.schedule.thresholds),
            "eval": {"iou_thresholds": list(self.eval.iou_thresholds)},
            "view_fraction": self.view_fraction,
            "view_sampling": self.view_sampling,
            "sampling_seed": self.sampling_seed,
            "enable_filter": self.enable_filter,
            "enable_split": self.enable_split,
            "enable_grow": self.enable_grow,
            "workers": self.workers,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        doc = json.loads(text)
        kwargs = {}
        if "mapping" in doc:
            kwargs["mapping"] = MappingConfig(**doc["mapping"])
        if "mask_filter" in doc:
            kwargs["mask_filter"] = FilterConfig(**doc["mask_filter"])
        if "cluster" in doc:
            c = doc["cluster"]
            kwargs["cluster"] = ClusterConfig(
                min_cluster_size=c.get("min_cluster_size", 30),
                min_samples=c.get("min_samples"))
        if "grow" in doc:
            g = dict(doc["grow"])
            if g.get("max_iterations") is not None:
                g["max_iterations"] = int(g["max_iterations"])
            kwargs["grow"] = GrowConfig(**g)
        if "schedule" in doc:
            kwargs["schedule"] = MergeSchedule(thresholds=tuple(doc["schedule"]))
        if "eval" in doc:
            kwargs["eval"] = EvalConfig(
                iou_thresholds=tuple(doc["eval"]["iou_thresholds"]))
        for key in ("view_fraction", "view_sampling", "sampling_seed",
                    "enable_filter", "enable_split", "enable_grow", "workers"):
            if key in doc:
                kwargs[key] = doc[key]
        return cls(**kwargs)


def select_views(view_ids: list[str], cfg: PipelineConfig) -> list[str]:
    """Deterministic subsample of ceil(fraction * T) views."""
    t = len(view_ids)
    count = max(1, math.ceil(cfg.view_fraction * t))
    if count >= t:
        return list(view_ids)
    if cfg.view_sampling == "stride":
        idx = np.floor(np.arange(count) * t / count).astype(int)
    else:
        rng = np.random.default_rng(cfg.sampling_seed)
        idx = np.sort(rng.choice(t, size=count, replace=False))
    return [view_ids[i] for i in idx]


@dataclass
class PipelineResult:
    proposals: ProposalSet
    selected_views: list[str]
    timings: dict[str, float]
    mask_counts: dict[str, int]
    scores: dict[int, float] | None = None


def _mask_subset(masks: MaskSet, view_ids: list[str]) -> MaskSet:
    keep = [m for m in masks if m.view_id in set(view_ids)]
    if not keep:
        raise ValidationError("no masks left after view subsampling")
    return MaskSet(keep)


def run_pipeline(scene: SceneBundle, cfg: PipelineConfig,
                 checkpoint_dir=None) -> PipelineResult:
    """Run every enabled stage in order; optionally checkpoint each one."""
    if scene.masks is None or len(scene.masks) == 0:
        raise ValidationError("scene has no 2D masks to lift")
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    mask_counts: dict[str, int] = {"input": len(scene.masks)}

    selected = select_views([v.view_id for v in scene.views], cfg)
    t = len(selected)

    t0 = time.perf_counter()
    views = [scene.view(v) for v in selected]
    mappings = build_mappings(scene.cloud, views, cfg.mapping,
                              workers=cfg.workers)
    timings["map"] = time.perf_counter() - t0
    masks = _mask_subset(scene.masks, selected)
    mask_counts["selected"] = len(masks)

    scores = None
    if cfg.enable_filter:
        t0 = time.perf_counter()
        table = build_table(masks, mappings, scene.partition,
                            frac=cfg.mask_filter.inclusion_fraction)
        scores = cooccurrence_scores(
            table, n_masks=len(masks), n_views=t,
            normalize_by_nonempty_views=cfg.mask_filter.normalize_by_nonempty_views)
        masks = filter_masks(masks, scores, cfg.mask_filter)
        timings["filter"] = time.perf_counter() - t0
        mask_counts["filtered"] = len(masks)
        if ckpt is not None:
            lio.write_masks_dir(masks, ckpt / "masks_filtered", exact=True)
            write_scores_csv(masks, scores, cfg.mask_filter,
                             ckpt / "mask_scores.csv")

    t0 = time.perf_counter()
    lifted = lift_masks(masks, mappings, n_views=t)
    timings["lift"] = time.perf_counter() - t0
    if not lifted:
        raise ValidationError("every mask lifted to an empty point set")
    if ckpt is not None:
        lio.write_checkpoint(ProposalSet(tuple(lifted), scene.n_points, t),
                             ckpt / "lifted.npz")

    t0 = time.perf_counter()
    if cfg.enable_split:
        seeds = split_seeds(lifted, scene.cloud, scene.partition,
                            scene.features, cfg.cluster)
    else:
        seeds = seeds_from_lifted(lifted, scene.partition, scene.features)
    timings["split"] = time.perf_counter() - t0
    if not seeds:
        raise ValidationError("splitting discarded every lifted mask")
    if ckpt is not None:
        seed_instances = [PointSetInstance(
            points=s.points,
            provenance=Provenance(stage="seed", views=(s.origin_view,),
                                  masks=(s.origin_mask,)),
            confidence=min(1.0, 1.0 / max(t, 1))) for s in seeds]
        lio.write_checkpoint(ProposalSet(tuple(seed_instances), scene.n_points, t),
                             ckpt / "seeds.npz")

    t0 = time.perf_counter()
    if cfg.enable_grow:
        ctx = GrowContext(scene.cloud, scene.partition, scene.features,
                          adjacency_k=cfg.grow.adjacency_k)
        grown = grow_seeds(seeds, ctx, cfg.grow, n_views=t,
                           workers=cfg.workers)
    else:
        grown = [PointSetInstance(
            points=s.points,
            provenance=Provenance(stage="seed", views=(s.origin_view,),
                                  masks=(s.origin_mask,)),
            confidence=min(1.0, 1.0 / max(t, 1))) for s in seeds]
    timings["grow"] = time.perf_counter() - t0
    if ckpt is not None:
        lio.write_checkpoint(ProposalSet(tuple(grown), scene.n_points, t),
                             ckpt / "grown.npz")

    t0 = time.perf_counter()
    proposals = merge_views(grown, cfg.schedule, scene.n_points, t)
    timings["merge"] = time.perf_counter() - t0
    if ckpt is not None:
        lio.write_checkpoint(proposals, ckpt / "merged.npz")

    for stage, dt in timings.items():
        log.info("stage %-6s %.3fs", stage, dt)
    return PipelineResult(proposals=proposals, selected_views=selected,
                          timings=timings, mask_counts=mask_counts,
                          scores=scores)


# ---------------------------------------------------------------------------
# per-stage execution against checkpoints
# ---------------------------------------------------------------------------

STAGE_NAMES = ("map", "filter", "lift", "split", "grow", "merge")


def _load_mappings_ckpt(ckpt: Path) -> dict[str, ViewMapping]:
    map_dir = ckpt / "mappings"
    if not map_dir.is_dir():
        raise DependencyError("map")
    mappings = {}
    for npz_path in sorted(map_dir.glob("*.npz")):
        with np.load(npz_path) as a:
            mappings[str(a["view_id"])] = ViewMapping(
                view_id=str(a["view_id"]), width=int(a["width"]),
                height=int(a["height"]), depth=a["depth"],
                visible=a["visible"], pixel=a["pixel"], z=a["z"],
                strategy=Strategy(str(a["strategy"])),
                tau_vis=float(a["tau_vis"]))
    if not mappings:
        raise DependencyError("map")
    return mappings


def _save_mappings_ckpt(mappings: dict[str, ViewMapping], ckpt: Path) -> None:
    map_dir = ckpt / "mappings"
    map_dir.mkdir(parents=True, exist_ok=True)
    for view_id, m in mappings.items():
        with open(map_dir / f"{view_id}.npz", "wb") as f:
            np.savez(f, view_id=view_id, width=m.width, height=m.height,
                     depth=m.depth, visible=m.visible, pixel=m.pixel, z=m.z,
                     strategy=m.strategy.value, tau_vis=m.tau_vis)
        lio.write_depth(m.depth, map_dir / f"{view_id}.db3d")
    (ckpt / "selected_views.json").write_text(
        json.dumps(sorted(mappings.keys())) + "\n")


def run_stage(stage: str, scene: SceneBundle, cfg: PipelineConfig,
              checkpoint_dir) -> None:
    """Execute exactly one pipeline stage against checkpoints on disk."""
    if stage not in STAGE_NAMES:
        raise ValidationError(f"unknown stage {stage!r}; expected one of "
                              f"{STAGE_NAMES}")
    ckpt = Path(checkpoint_dir)
    ckpt.mkdir(parents=True, exist_ok=True)

    if stage == "map":
        selected = select_views([v.view_id for v in scene.views], cfg)
        views = [scene.view(v) for v in selected]
        mappings = build_mappings(scene.cloud, views, cfg.mapping,
                                  workers=cfg.workers)
        _save_mappings_ckpt(mappings, ckpt)
        return

    mappings = _load_mappings_ckpt(ckpt)
    selected = sorted(mappings.keys())
    t = len(selected)

    if stage == "filter":
        if scene.masks is None:
            raise ValidationError("scene has no 2D masks")
        masks = _mask_subset(scene.masks, selected)
        table = build_table(masks, mappings, scene.partition,
                            frac=cfg.mask_filter.inclusion_fraction)
        scores = cooccurrence_scores(
            table, n_masks=len(masks), n_views=t,
            normalize_by_nonempty_views=cfg.mask_filter.normalize_by_nonempty_views)
        kept = filter_masks(masks, scores, cfg.mask_filter)
        lio.write_masks_dir(kept, ckpt / "masks_filtered", exact=True)
        write_scores_csv(kept, scores, cfg.mask_filter, ckpt / "mask_scores.csv")
        return

    if stage == "lift":
        filtered_dir = ckpt / "masks_filtered"
        if cfg.enable_filter:
            if not filtered_dir.is_dir():
                raise DependencyError("filter")
            masks = lio.read_masks_dir(filtered_dir)
        else:
            if scene.masks is None:
                raise ValidationError("scene has no 2D masks")
            masks = _mask_subset(scene.masks, selected)
        lifted = lift_masks(masks, mappings, n_views=t)
        lio.write_checkpoint(ProposalSet(tuple(lifted), scene.n_points, t),
                             ckpt / "lifted.npz")
        return

    if stage == "split":
        src = ckpt / "lifted.npz"
        if not src.exists():
            raise DependencyError("lift")
        lifted_set = lio.read_checkpoint(src)
        lifted = list(lifted_set.proposals)
        if cfg.enable_split:
            seeds = split_seeds(lifted, scene.cloud, scene.partition,
                                scene.features, cfg.cluster)
        else:
            seeds = seeds_from_lifted(lifted, scene.partition, scene.features)
        if not seeds:
            raise ValidationError("splitting discarded every lifted mask")
        insts = [PointSetInstance(
            points=s.points,
            provenance=Provenance(stage="seed", views=(s.origin_view,),
                                  masks=(s.origin_mask,)),
            confidence=min(1.0, 1.0 / max(t, 1))) for s in seeds]
        lio.write_checkpoint(ProposalSet(tuple(insts), scene.n_points, t),
                             ckpt / "seeds.npz")
        return

    if stage == "grow":
        src = ckpt / "seeds.npz"
        if not src.exists():
            raise DependencyError("split")
        seed_set = lio.read_checkpoint(src)
        if cfg.enable_grow:
            from .aggregate import Seed, seed_feature
            seeds = [Seed(points=p.points,
                          origin_view=p.provenance.views[0],
                          origin_mask=p.provenance.masks[0],
                          feature=seed_feature(p.points, scene.partition,
                                               scene.features))
                     for p in seed_set.proposals]
            ctx = GrowContext(scene.cloud, scene.partition, scene.features,
                              adjacency_k=cfg.grow.adjacency_k)
            grown = grow_seeds(seeds, ctx, cfg.grow, n_views=seed_set.n_views,
                               workers=cfg.workers)
        else:
            grown = list(seed_set.proposals)
        lio.write_checkpoint(ProposalSet(tuple(grown), scene.n_points,
                                         seed_set.n_views), ckpt / "grown.npz")
        return

    if stage == "merge":
        src = ckpt / "grown.npz"
        if not src.exists():
            raise DependencyError("grow")
        grown_set = lio.read_checkpoint(src)
        proposals = merge_views(list(grown_set.proposals), cfg.schedule,
                                scene.n_points, grown_set.n_views)
        lio.write_checkpoint(proposals, ckpt / "merged.npz")
        lio.write_instances(proposals, ckpt / "instances.in3d")
        return
