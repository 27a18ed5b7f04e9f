"""Shared domain types: the read-only scene world and instance containers.

All types validate their invariants on construction and are treated as
immutable afterwards, so they can be shared freely across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class PointCloud:
    """World-frame point positions in meters, with optional RGB in [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] == 0:
            raise ValidationError(f"positions must be (N, 3), got {pos.shape}")
        if not np.isfinite(pos).all():
            raise ValidationError("positions contain non-finite coordinates")
        object.__setattr__(self, "positions", pos)
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=np.float64)
            if col.shape != pos.shape:
                raise ValidationError(
                    f"colors shape {col.shape} does not match positions {pos.shape}")
            if not np.isfinite(col).all() or col.min() < 0.0 or col.max() > 1.0:
                raise ValidationError("colors must be finite and within [0, 1]")
            object.__setattr__(self, "colors", col)

    @property
    def count(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class CameraView:
    """Pinhole camera: intrinsics in pixels, pose stored camera-to-world."""

    view_id: str
    width: int
    height: int
    intrinsics: np.ndarray
    pose: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"view {self.view_id}: non-positive image size")
        k = np.asarray(self.intrinsics, dtype=np.float64)
        if k.shape != (3, 3):
            raise ValidationError(f"view {self.view_id}: intrinsics must be 3x3")
        if k[1, 0] != 0.0 or k[2, 0] != 0.0 or k[2, 1] != 0.0:
            raise ValidationError(f"view {self.view_id}: intrinsics not upper-triangular")
        if k[0, 0] <= 0.0 or k[1, 1] <= 0.0:
            raise ValidationError(f"view {self.view_id}: focal lengths must be positive")
        if not np.isfinite(k).all():
            raise ValidationError(f"view {self.view_id}: non-finite intrinsics")
        t = np.asarray(self.pose, dtype=np.float64)
        if t.shape != (4, 4):
            raise ValidationError(f"view {self.view_id}: pose must be 4x4")
        if not np.allclose(t[3], (0.0, 0.0, 0.0, 1.0), atol=0.0):
            raise ValidationError(f"view {self.view_id}: pose last row must be (0,0,0,1)")
        r = t[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise ValidationError(f"view {self.view_id}: pose rotation not orthonormal")
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "pose", t)

    def world_to_camera(self) -> np.ndarray:
        """Inverse rigid transform, computed exactly as [R^T | -R^T t]."""
        r = self.pose[:3, :3]
        t = self.pose[:3, 3]
        inv = np.eye(4)
        inv[:3, :3] = r.T
        inv[:3, 3] = -r.T @ t
        return inv


@dataclass(frozen=True)
class SuperpointPartition:
    """Total map from point index to superpoint id in [0, U)."""

    labels: np.ndarray
    superpoint_count: int

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.ndim != 1 or lab.shape[0] == 0:
            raise ValidationError("superpoint labels must be a non-empty 1-D array")
        if lab.min() < 0 or lab.max() >= self.superpoint_count:
            raise ValidationError(
                f"superpoint label out of range [0, {self.superpoint_count})")
        present = np.bincount(lab, minlength=self.superpoint_count)
        if (present == 0).any():
            empty = int(np.argmax(present == 0))
            raise ValidationError(f"superpoint {empty} has no member points")
        object.__setattr__(self, "labels", lab)

    @property
    def count(self) -> int:
        return self.superpoint_count

    def members(self) -> list[np.ndarray]:
        """Point indices per superpoint, each sorted ascending."""
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order],
                                 np.arange(self.superpoint_count + 1))
        return [order[bounds[u]:bounds[u + 1]] for u in range(self.superpoint_count)]


@dataclass(frozen=True)
class FeatureTable:
    """One feature row per superpoint; zero rows are rejected."""

    vectors: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 2 or vec.shape[0] == 0:
            raise ValidationError("feature table must be (U, D) with U > 0")
        if not np.isfinite(vec).all():
            raise ValidationError("feature table contains non-finite values")
        norms = np.linalg.norm(vec, axis=1)
        if (norms == 0.0).any():
            raise ValidationError(
                f"feature row {int(np.argmax(norms == 0.0))} has zero norm")
        object.__setattr__(self, "vectors", vec)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class Mask2D:
    """One binary instance mask in one view."""

    view_id: str
    mask_id: int
    pixels: np.ndarray  # (H, W) bool

    def __post_init__(self):
        pix = np.asarray(self.pixels)
        if pix.dtype != np.bool_:
            pix = pix.astype(bool)
        if pix.ndim != 2:
            raise ValidationError(f"mask {self.mask_id}: raster must be 2-D")
        if not pix.any():
            raise ValidationError(f"mask {self.mask_id}: empty raster rejected")
        object.__setattr__(self, "pixels", pix)

    @property
    def area(self) -> int:
        return int(self.pixels.sum())


class MaskSet:
    """All 2D masks of a scene, indexable by view and by mask id."""

    def __init__(self, masks: list[Mask2D]):
        ids = [m.mask_id for m in masks]
        if len(set(ids)) != len(ids):
            raise ValidationError("mask ids must be unique within the scene")
        self.masks = sorted(masks, key=lambda m: (m.view_id, m.mask_id))
        self._by_id = {m.mask_id: m for m in self.masks}

    def __len__(self):
        return len(self.masks)

    def __iter__(self):
        return iter(self.masks)

    def get(self, mask_id: int) -> Mask2D:
        return self._by_id[mask_id]

    @property
    def view_ids(self) -> list[str]:
        seen = []
        for m in self.masks:
            if m.view_id not in seen:
                seen.append(m.view_id)
        return seen

    def by_view(self, view_id: str) -> list[Mask2D]:
        return [m for m in self.masks if m.view_id == view_id]


STAGES = ("lifted", "seed", "grown", "merged")


@dataclass(frozen=True)
class Provenance:
    stage: str
    views: tuple[str, ...]
    masks: tuple[int, ...] = ()

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValidationError(f"unknown stage tag {self.stage!r}")
        object.__setattr__(self, "views", tuple(self.views))
        object.__setattr__(self, "masks", tuple(self.masks))


@dataclass(frozen=True)
class PointSetInstance:
    """A 3D instance hypothesis: sorted point indices plus provenance."""

    points: np.ndarray
    provenance: Provenance
    confidence: float = 1.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64)
        if pts.ndim != 1 or pts.shape[0] == 0:
            raise ValidationError("instance point set must be non-empty")
        if (np.diff(pts) <= 0).any():
            raise ValidationError("instance point indices must be strictly increasing")
        if pts[0] < 0:
            raise ValidationError("instance point indices must be non-negative")
        if not (0.0 < self.confidence <= 1.0):
            raise ValidationError(f"confidence {self.confidence} outside (0, 1]")
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ProposalSet:
    """Final or intermediate instance collection for a scene."""

    proposals: tuple[PointSetInstance, ...]
    n_points: int
    n_views: int

    def __post_init__(self):
        props = tuple(self.proposals)
        for p in props:
            if p.points[-1] >= self.n_points:
                raise ValidationError(
                    f"instance references point {int(p.points[-1])} "
                    f">= N={self.n_points}")
        object.__setattr__(self, "proposals", props)

    def __len__(self):
        return len(self.proposals)

    def __iter__(self):
        return iter(self.proposals)


@dataclass(frozen=True)
class SceneBundle:
    """The validated, read-only input world for one scene."""

    cloud: PointCloud
    views: tuple[CameraView, ...]
    partition: SuperpointPartition
    features: FeatureTable
    masks: MaskSet | None = None

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        n = self.cloud.count
        if self.partition.labels.shape[0] != n:
            raise ValidationError(
                f"superpoint labels cover {self.partition.labels.shape[0]} points, "
                f"cloud has {n}")
        if self.features.count != self.partition.count:
            raise ValidationError(
                f"feature table has {self.features.count} rows, "
                f"partition has {self.partition.count} superpoints")
        ids = [v.view_id for v in self.views]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate view_id in camera list")
        if self.masks is not None:
            by_id = {v.view_id: v for v in self.views}
            for m in self.masks:
                if m.view_id not in by_id:
                    raise ValidationError(
                        f"mask {m.mask_id} references unknown view {m.view_id!r}")
                v = by_id[m.view_id]
                if m.pixels.shape != (v.height, v.width):
                    raise ValidationError(
                        f"mask {m.mask_id} raster {m.pixels.shape} does not match "
                        f"view {m.view_id} size ({v.height}, {v.width})")

    @property
    def n_points(self) -> int:
        return self.cloud.count

    @property
    def n_views(self) -> int:
        return len(self.views)

    def view(self, view_id: str) -> CameraView:
        for v in self.views:
            if v.view_id == view_id:
                return v
        raise KeyError(view_id)


def instance_labels(proposals: ProposalSet) -> tuple[np.ndarray, list[dict]]:
    """Resolve possibly-overlapping proposals into one label per point.

    Instance ids are assigned in descending confidence order (ties broken by
    provenance order); a point claimed by several proposals goes to the one
    with the highest confidence.  Returns the int32 label array (-1 where
    unassigned) and the conflict records for the manifest.
    """
    order = sorted(range(len(proposals.proposals)),
                   key=lambda i: (-proposals.proposals[i].confidence, i))
    labels = np.full(proposals.n_points, -1, dtype=np.int32)
    conflicts = []
    for new_id, src in enumerate(order):
        inst = proposals.proposals[src]
        taken = labels[inst.points] != -1
        if taken.any():
            winners, counts = np.unique(labels[inst.points][taken], return_counts=True)
            for w, c in zip(winners, counts):
                conflicts.append({"winner": int(w), "loser": int(new_id),
                                  "points": int(c)})
        labels[inst.points[~taken]] = new_id
    return labels, conflicts
