"""Lift filtered 2D masks to 3D, split them into seeds, grow the seeds by
feature affinity, and merge proposals across views.

Growing absorbs whole superpoints: at each step the candidate with the
highest affinity (feature cosine times point-set IoU) is merged, the seed's
mean feature is updated, and the candidate's graph neighbors become eligible.
Merging repeatedly unions proposal pairs whose IoU clears a strictly
decreasing threshold schedule.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .density import ClusterConfig, hdbscan
from .errors import ValidationError
from .projection import ViewMapping
from .scene import (FeatureTable, MaskSet, PointCloud, PointSetInstance,
                    ProposalSet, Provenance, SuperpointPartition)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GrowConfig:
    affinity_floor: float = 0.05
    max_iterations: int | None = None
    adjacency_k: int = 8
    exclusive_claims: bool = False

    def __post_init__(self):
        if self.affinity_floor <= 0.0:
            raise ValidationError("affinity_floor must be > 0")
        if self.adjacency_k < 1:
            raise ValidationError("adjacency_k must be >= 1")


@dataclass(frozen=True)
class MergeSchedule:
    thresholds: tuple[float, ...] = (0.7, 0.6, 0.5, 0.4, 0.3)

    def __post_init__(self):
        ts = tuple(float(t) for t in self.thresholds)
        if not ts:
            raise ValidationError("merge schedule must not be empty")
        if any(not (0.0 < t < 1.0) for t in ts):
            raise ValidationError("merge thresholds must lie in (0, 1)")
        if any(b >= a for a, b in zip(ts, ts[1:])):
            raise ValidationError("merge thresholds must be strictly decreasing")
        object.__setattr__(self, "thresholds", ts)


@dataclass(frozen=True)
class Seed:
    """A spatially dense fragment of one lifted mask."""

    points: np.ndarray
    origin_view: str
    origin_mask: int
    feature: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64)
        if pts.size == 0:
            raise ValidationError("seed must be non-empty")
        f = np.asarray(self.feature, dtype=np.float64)
        if not np.isfinite(f).all() or np.linalg.norm(f) == 0.0:
            raise ValidationError("seed feature must be finite with positive norm")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "feature", f)


# ---------------------------------------------------------------------------
# lifting and splitting
# ---------------------------------------------------------------------------

def lift_masks(masks: MaskSet, mappings: dict[str, ViewMapping],
               n_views: int | None = None) -> list[PointSetInstance]:
    """3D mask per 2D mask: visible points projecting inside the raster."""
    t = n_views if n_views is not None else len(mappings)
    out = []
    for mask in masks:
        if mask.view_id not in mappings:
            raise ValidationError(f"no view mapping for mask view {mask.view_id!r}")
        mapping = mappings[mask.view_id]
        vi = mapping.visible_indices
        if vi.size:
            px = mapping.pixel[vi]
            pts = vi[mask.pixels[px[:, 1], px[:, 0]]]
        else:
            pts = np.empty(0, np.int64)
        if pts.size == 0:
            log.info("mask %d in view %s lifted to nothing; dropped",
                     mask.mask_id, mask.view_id)
            continue
        out.append(PointSetInstance(
            points=pts,
            provenance=Provenance(stage="lifted", views=(mask.view_id,),
                                  masks=(mask.mask_id,)),
            confidence=min(1.0, 1.0 / max(t, 1))))
    return out


def seed_feature(points: np.ndarray, partition: SuperpointPartition,
                 features: FeatureTable) -> np.ndarray:
    """Mean feature of the superpoints the seed touches, weighted by the
    per-superpoint intersection size."""
    cnt = np.bincount(partition.labels[points], minlength=partition.count)
    total = cnt.sum()
    return (cnt.astype(np.float64) @ features.vectors) / total


def split_seeds(lifted: list[PointSetInstance], cloud: PointCloud,
                partition: SuperpointPartition, features: FeatureTable,
                cfg: ClusterConfig) -> list[Seed]:
    """Split each lifted mask into spatially contiguous seeds; noise points
    and undersized masks vanish (logged)."""
    seeds = []
    for inst in lifted:
        result = hdbscan(cloud.positions[inst.points], cfg)
        if result.n_clusters == 0:
            log.info("lifted mask %s/%s fully labeled noise; no seeds",
                     inst.provenance.views[0], inst.provenance.masks[0])
            continue
        for c in range(result.n_clusters):
            pts = inst.points[result.labels == c]
            seeds.append(Seed(points=pts,
                              origin_view=inst.provenance.views[0],
                              origin_mask=inst.provenance.masks[0],
                              feature=seed_feature(pts, partition, features)))
    return seeds


def seeds_from_lifted(lifted: list[PointSetInstance],
                      partition: SuperpointPartition,
                      features: FeatureTable) -> list[Seed]:
    """Degenerate splitting (splitting stage disabled): one seed per mask."""
    return [Seed(points=inst.points,
                 origin_view=inst.provenance.views[0],
                 origin_mask=inst.provenance.masks[0],
                 feature=seed_feature(inst.points, partition, features))
            for inst in lifted]


# ---------------------------------------------------------------------------
# growing
# ---------------------------------------------------------------------------

class GrowContext:
    """Immutable per-scene lookups shared by every seed grower."""

    def __init__(self, cloud: PointCloud, partition: SuperpointPartition,
                 features: FeatureTable, adjacency_k: int = 8):
        self.labels = partition.labels
        self.n_points = cloud.count
        self.n_superpoints = partition.count
        self.members = partition.members()
        self.sizes = np.bincount(partition.labels, minlength=partition.count)
        self.features_raw = features.vectors
        norms = np.linalg.norm(features.vectors, axis=1)
        self.unit_features = features.vectors / norms[:, None]
        centroids = np.zeros((partition.count, 3))
        np.add.at(centroids, partition.labels, cloud.positions)
        centroids /= self.sizes[:, None]
        k = min(adjacency_k, partition.count - 1)
        if k >= 1:
            tree = cKDTree(centroids)
            _, nbr = tree.query(centroids, k=k + 1)
            self.neighbors = [row[1:].astype(np.int64) for row in nbr]
        else:
            self.neighbors = [np.empty(0, np.int64)] * partition.count


def affinity(seed: Seed, candidate: int, partition: SuperpointPartition,
             features: FeatureTable) -> float:
    """Feature cosine (clamped to [0, 1]) times point-set IoU."""
    member = np.nonzero(partition.labels == candidate)[0]
    inter = np.intersect1d(seed.points, member, assume_unique=True).size
    union = seed.points.size + member.size - inter
    iou = inter / union if union else 0.0
    f_u = features.vectors[candidate]
    cos = float(seed.feature @ f_u
                / (np.linalg.norm(seed.feature) * np.linalg.norm(f_u)))
    return max(cos, 0.0) * iou


def grow_seed(seed: Seed, ctx: GrowContext, cfg: GrowConfig,
              claimed: np.ndarray | None = None) -> PointSetInstance:
    """Iteratively absorb whole superpoints until no affinity clears the
    floor.  Deterministic: affinity ties go to the lowest superpoint id."""
    in_seed = np.zeros(ctx.n_points, dtype=bool)
    in_seed[seed.points] = True
    cnt = np.bincount(ctx.labels[seed.points],
                      minlength=ctx.n_superpoints).astype(np.int64)
    seed_size = seed.points.size

    candidate = np.zeros(ctx.n_superpoints, dtype=bool)
    touched = np.nonzero(cnt > 0)[0]
    contained = cnt[touched] == ctx.sizes[touched]
    candidate[touched[~contained]] = True
    for u in touched[contained]:
        candidate[ctx.neighbors[u]] = True
    candidate[cnt == ctx.sizes] = False
    if claimed is not None:
        claimed[touched[contained]] = True
        candidate &= ~claimed

    steps = 0
    while True:
        cand = np.nonzero(candidate)[0]
        if cand.size == 0:
            break
        if cfg.max_iterations is not None and steps >= cfg.max_iterations:
            break
        f_mean = cnt.astype(np.float64) @ ctx.features_raw / cnt.sum()
        f_unit = f_mean / np.linalg.norm(f_mean)
        cos = np.maximum(ctx.unit_features[cand] @ f_unit, 0.0)
        inter = cnt[cand]
        union = seed_size + ctx.sizes[cand] - inter
        aff = cos * (inter / union)
        best = int(np.argmax(aff))
        if aff[best] < cfg.affinity_floor:
            break
        u = int(cand[best])
        new_points = ctx.members[u][~in_seed[ctx.members[u]]]
        in_seed[new_points] = True
        seed_size += new_points.size
        cnt[u] = ctx.sizes[u]
        candidate[u] = False
        nb = ctx.neighbors[u]
        fresh = nb[cnt[nb] < ctx.sizes[nb]]
        if claimed is not None:
            claimed[u] = True
            fresh = fresh[~claimed[fresh]]
        candidate[fresh] = True
        steps += 1

    return PointSetInstance(
        points=np.nonzero(in_seed)[0],
        provenance=Provenance(stage="grown", views=(seed.origin_view,),
                              masks=(seed.origin_mask,)),
        confidence=1.0)


def grow_seeds(seeds: list[Seed], ctx: GrowContext, cfg: GrowConfig,
               n_views: int, workers: int = 1) -> list[PointSetInstance]:
    """Grow every seed against the immutable scene.

    With exclusive claims, seeds are processed sequentially in canonical
    order and may not absorb superpoints already absorbed by an earlier
    seed of the run.
    """
    order = sorted(range(len(seeds)),
                   key=lambda i: (seeds[i].origin_view, seeds[i].origin_mask,
                                  int(seeds[i].points[0])))
    conf = min(1.0, 1.0 / max(n_views, 1))
    grown: list[PointSetInstance | None] = [None] * len(seeds)

    def finalize(inst: PointSetInstance) -> PointSetInstance:
        return PointSetInstance(points=inst.points, provenance=inst.provenance,
                                confidence=conf)

    if cfg.exclusive_claims:
        claimed = np.zeros(ctx.n_superpoints, dtype=bool)
        for i in order:
            grown[i] = finalize(grow_seed(seeds[i], ctx, cfg, claimed=claimed))
    elif workers > 1 and len(seeds) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda i: grow_seed(seeds[i], ctx, cfg), order))
        for i, inst in zip(order, results):
            grown[i] = finalize(inst)
    else:
        for i in order:
            grown[i] = finalize(grow_seed(seeds[i], ctx, cfg))
    return [grown[i] for i in order]


# ---------------------------------------------------------------------------
# multi-view progressive merging
# ---------------------------------------------------------------------------

def _canonical_order(proposals: list[PointSetInstance]) -> list[PointSetInstance]:
    return sorted(proposals, key=lambda p: (p.provenance.views, p.provenance.masks,
                                            p.size, p.points.tobytes()))


def merge_views(proposals: list[PointSetInstance], schedule: MergeSchedule,
                n_points: int, n_views: int) -> ProposalSet:
    """Union proposal pairs whose IoU clears each threshold in turn.

    Within a threshold, pairs are processed in descending IoU (ties by
    canonical id); IoUs are recomputed after every union, so transitive
    chains merge.  Output is independent of input list order.
    """
    if not proposals:
        raise ValidationError("merge_views requires at least one proposal")
    ordered = _canonical_order(proposals)
    k = len(ordered)
    sets = np.zeros((k, n_points), dtype=np.float32)
    views: list[set] = []
    masks: list[set] = []
    for i, p in enumerate(ordered):
        sets[i, p.points] = 1.0
        views.append(set(p.provenance.views))
        masks.append(set(p.provenance.masks))
    alive = np.ones(k, dtype=bool)
    sizes = sets.sum(axis=1)
    inter = sets @ sets.T

    def iou_matrix():
        with np.errstate(invalid="ignore", divide="ignore"):
            union = sizes[:, None] + sizes[None, :] - inter
            m = np.where(union > 0.0, inter / union, 0.0)
        m[~alive, :] = 0.0
        m[:, ~alive] = 0.0
        np.fill_diagonal(m, 0.0)
        return np.triu(m)

    for theta in schedule.thresholds:
        while True:
            m = iou_matrix()
            flat = int(np.argmax(m))
            a, b = divmod(flat, k)
            if m[a, b] < theta:
                break
            np.maximum(sets[a], sets[b], out=sets[a])
            sizes[a] = sets[a].sum()
            views[a] |= views[b]
            masks[a] |= masks[b]
            alive[b] = False
            row = sets @ sets[a]
            inter[a, :] = row
            inter[:, a] = row

    out = []
    for i in np.nonzero(alive)[0]:
        pts = np.nonzero(sets[i] > 0.0)[0]
        conf = min(1.0, len(views[i]) / max(n_views, 1))
        out.append(PointSetInstance(
            points=pts,
            provenance=Provenance(stage="merged",
                                  views=tuple(sorted(views[i])),
                                  masks=tuple(sorted(masks[i]))),
            confidence=conf))
    return ProposalSet(proposals=tuple(out), n_points=n_points, n_views=n_views)
