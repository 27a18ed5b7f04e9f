"""Synthetic scenes with exact ground truth.

Scenes are a walled room containing primitive objects (boxes, spheres,
cylinders) floating slightly above the floor, surface-sampled in patches
separated by small seams so the internal over-segmenter recovers a stable
multi-superpoint partition per object.  Cameras sit on an inward-facing
orbit.  Masks are rendered from the projection module's own depth buffers,
then optionally corrupted with the failure modes the pipeline is built to
fix: systematically merged look-alike masks, randomly merged mask pairs,
and jittered mask boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import io as lio
from ._kernels import pixel_winners
from .errors import GenerationError, ValidationError
from .oversegment import OversegConfig, oversegment
from .projection import MappingConfig, round_half_away
from .scene import (CameraView, FeatureTable, Mask2D, MaskSet, PointCloud,
                    SceneBundle)
from .semantic import PixelFeatureSource


@dataclass(frozen=True)
class CorruptionConfig:
    merge_mask_probability: float = 0.0
    boundary_noise_px: int = 0
    feature_noise_sigma: float = 0.02
    duplicate_appearance: bool = False

    def __post_init__(self):
        if not (0.0 <= self.merge_mask_probability <= 1.0):
            raise ValidationError("merge_mask_probability must be in [0, 1]")
        if self.boundary_noise_px < 0 or self.feature_noise_sigma < 0.0:
            raise ValidationError("corruption magnitudes must be >= 0")


@dataclass(frozen=True)
class SynthConfig:
    rng_seed: int = 0
    room_size: tuple[float, float, float] = (8.0, 8.0, 3.0)
    object_count: int = 6
    points_per_object: int = 1200
    background_points: int | None = None  # default: as many as the object points
    camera_count: int = 20
    width: int = 96
    height: int = 96
    feature_dim: int = 32
    object_scale: float = 1.0
    min_superpoint_size: int | None = None  # default: points_per_object // 8
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)

    def __post_init__(self):
        if self.object_count <= 0 or self.points_per_object <= 0 \
                or self.camera_count <= 0 or self.width <= 0 or self.height <= 0 \
                or self.feature_dim <= 0:
            raise ValidationError("all synthetic scene counts must be positive")


@dataclass(frozen=True)
class GroundTruth:
    instance_ids: np.ndarray           # (N,) int32, -1 for background
    prototypes: np.ndarray             # (object_count, D) unit rows
    background_prototype: np.ndarray   # (D,) unit


# ---------------------------------------------------------------------------
# primitive surface samplers (patchwise, with seams between patches)
# ---------------------------------------------------------------------------

_SEAM_CAP = 0.09  # meters; upper bound on the sampling seam between patches


def _seam_width(total_area: float, count: int) -> float:
    """Seam between surface patches, tied to the local sample spacing so it
    stays visible to the over-segmenter but invisible to density clustering
    (the k-th-neighbor core radius is about 3.1 spacings at k = 30)."""
    spacing = np.sqrt(total_area / max(count, 1))
    return float(min(_SEAM_CAP, max(0.015, 1.8 * spacing)))


def _rect_patch(rng, origin, du, dv, count, seam):
    """Uniform samples on an inset rectangle patch spanned by du, dv."""
    origin = np.asarray(origin)
    du = np.asarray(du)
    dv = np.asarray(dv)
    lu = np.linalg.norm(du)
    lv = np.linalg.norm(dv)
    fu = min(0.35, seam / lu)
    fv = min(0.35, seam / lv)
    a = rng.uniform(fu, 1.0 - fu, count)
    b = rng.uniform(fv, 1.0 - fv, count)
    return origin + a[:, None] * du + b[:, None] * dv


def _box_patches(center, half):
    """Five faces (no bottom), each split in two -> 10 (origin, du, dv)."""
    cx, cy, cz = center
    hx, hy, hz = half
    faces = [
        ((cx - hx, cy - hy, cz + hz), (2 * hx, 0, 0), (0, 2 * hy, 0)),   # top
        ((cx - hx, cy - hy, cz - hz), (2 * hx, 0, 0), (0, 0, 2 * hz)),   # -y
        ((cx - hx, cy + hy, cz - hz), (2 * hx, 0, 0), (0, 0, 2 * hz)),   # +y
        ((cx - hx, cy - hy, cz - hz), (0, 2 * hy, 0), (0, 0, 2 * hz)),   # -x
        ((cx + hx, cy - hy, cz - hz), (0, 2 * hy, 0), (0, 0, 2 * hz)),   # +x
    ]
    patches = []
    for origin, du, dv in faces:
        du = np.asarray(du, float)
        dv = np.asarray(dv, float)
        if np.linalg.norm(du) >= np.linalg.norm(dv):
            patches.append((np.asarray(origin, float), du / 2, dv))
            patches.append((np.asarray(origin, float) + du / 2, du / 2, dv))
        else:
            patches.append((np.asarray(origin, float), du, dv / 2))
            patches.append((np.asarray(origin, float) + dv / 2, du, dv / 2))
    return patches


def _sample_box(rng, center, half, count):
    patches = _box_patches(center, half)
    areas = np.array([np.linalg.norm(du) * np.linalg.norm(dv)
                      for _o, du, dv in patches])
    seam = _seam_width(float(areas.sum()), count)
    counts = rng.multinomial(count, areas / areas.sum())
    parts = [_rect_patch(rng, o, du, dv, c, seam)
             for (o, du, dv), c in zip(patches, counts) if c > 0]
    return np.vstack(parts)


def _sample_sphere(rng, center, radius, count):
    """Upper part of the sphere (polar cap below z = -0.45R omitted), eight
    longitude sectors with azimuthal seams."""
    sectors = 8
    seam = _seam_width(4 * np.pi * radius ** 2 * 0.725, count)
    seam_frac = min(seam / (2 * np.pi * radius / sectors), 0.3)
    counts = rng.multinomial(count, np.full(sectors, 1.0 / sectors))
    pts = []
    for s in range(sectors):
        c = counts[s]
        if c == 0:
            continue
        a0 = (s + seam_frac) / sectors * 2 * np.pi
        a1 = (s + 1 - seam_frac) / sectors * 2 * np.pi
        az = rng.uniform(a0, a1, c)
        zz = rng.uniform(-0.45, 1.0, c)
        rr = np.sqrt(1.0 - zz ** 2)
        pts.append(np.stack([rr * np.cos(az), rr * np.sin(az), zz], axis=1)
                   * radius + np.asarray(center))
    return np.vstack(pts)


def _sample_cylinder(rng, center, radius, height, count):
    """Side wall in six sectors plus a split top cap; no bottom cap."""
    side_area = 2 * np.pi * radius * height
    top_area = np.pi * radius ** 2
    seam = _seam_width(side_area + top_area, count)
    n_side = int(round(count * side_area / (side_area + top_area)))
    n_top = count - n_side
    sectors = 6
    seam_frac = min(seam / (2 * np.pi * radius / sectors), 0.3)
    counts = rng.multinomial(n_side, np.full(sectors, 1.0 / sectors))
    pts = []
    z0 = center[2] - height / 2
    for s in range(sectors):
        c = counts[s]
        if c == 0:
            continue
        a0 = (s + seam_frac) / sectors * 2 * np.pi
        a1 = (s + 1 - seam_frac) / sectors * 2 * np.pi
        az = rng.uniform(a0, a1, c)
        zz = rng.uniform(z0 + seam, z0 + height - seam, c)
        pts.append(np.stack([center[0] + radius * np.cos(az),
                             center[1] + radius * np.sin(az), zz], axis=1))
    for hs in range(2):
        c = n_top // 2 + (n_top % 2 if hs == 0 else 0)
        if c == 0:
            continue
        az = rng.uniform(hs * np.pi + 0.05, (hs + 1) * np.pi - 0.05, c)
        rr = np.sqrt(rng.uniform(0.0, 1.0, c)) * (radius - seam)
        pts.append(np.stack([center[0] + rr * np.cos(az),
                             center[1] + rr * np.sin(az),
                             np.full(c, z0 + height)], axis=1))
    return np.vstack(pts)


def _sample_background(rng, room, count):
    """Floor and four walls, tiled ~1 m with seams between tiles."""
    lx, ly, lz = room
    patches = []
    for ix in range(int(np.ceil(lx))):
        for iy in range(int(np.ceil(ly))):
            x1 = min(ix + 1.0, lx)
            y1 = min(iy + 1.0, ly)
            patches.append(((ix, iy, 0.0), (x1 - ix, 0, 0), (0, y1 - iy, 0)))
    for iy in range(int(np.ceil(ly))):       # x = 0 and x = lx walls
        y1 = min(iy + 1.0, ly)
        patches.append(((0.0, iy, 0.0), (0, y1 - iy, 0), (0, 0, lz)))
        patches.append(((lx, iy, 0.0), (0, y1 - iy, 0), (0, 0, lz)))
    for ix in range(int(np.ceil(lx))):       # y = 0 and y = ly walls
        x1 = min(ix + 1.0, lx)
        patches.append(((ix, 0.0, 0.0), (x1 - ix, 0, 0), (0, 0, lz)))
        patches.append(((ix, ly, 0.0), (x1 - ix, 0, 0), (0, 0, lz)))
    areas = np.array([np.linalg.norm(np.asarray(du)) * np.linalg.norm(np.asarray(dv))
                      for _o, du, dv in patches])
    seam = _seam_width(float(areas.sum()), count)
    counts = rng.multinomial(count, areas / areas.sum())
    parts = [_rect_patch(rng, o, du, dv, c, seam)
             for (o, du, dv), c in zip(patches, counts) if c > 0]
    return np.vstack(parts)


# ---------------------------------------------------------------------------
# object placement and cameras
# ---------------------------------------------------------------------------

_CLEARANCE = 0.55    # minimum horizontal gap between object footprints
_FLOOR_GAP = 0.32    # objects float this far above the floor
_WALL_GAP = 0.3      # object footprint clearance from the walls
_RING_FACTOR = 0.24  # object ring radius as a fraction of the room side


def _place_objects(rng, cfg: SynthConfig):
    lx, ly, lz = cfg.room_size
    scale = cfg.object_scale * min(lx, ly) / 8.0
    specs = []
    for o in range(cfg.object_count):
        kind = ["box", "sphere", "cylinder"][int(rng.integers(0, 3))]
        if kind == "box":
            half = rng.uniform((0.42, 0.42, 0.40), (0.70, 0.70, 0.70)) * scale
            radius = float(np.hypot(half[0], half[1]))
            height = 2 * half[2]
            size = half
        elif kind == "sphere":
            r = float(rng.uniform(0.48, 0.72)) * scale
            radius, height, size = r, 2 * r, r
        else:
            r = float(rng.uniform(0.42, 0.60)) * scale
            h = float(rng.uniform(0.9, 1.5)) * scale
            radius, height, size = r, h, (r, h)
        if cfg.corruption.duplicate_appearance and o == 1:
            kind, size, radius, height = (specs[0]["kind"], specs[0]["size"],
                                          specs[0]["radius"], specs[0]["height"])
        specs.append({"kind": kind, "size": size, "radius": radius,
                      "height": height})

    # one ring around the room center (two concentric rings from seven
    # objects up); the orbit sees all sides of every object and the
    # look-alike pair sits on opposite sides
    cx, cy = lx / 2, ly / 2
    n = cfg.object_count
    half_room = min(lx, ly) / 2

    n_outer = n if n < 9 else (n + 1) // 2
    n_inner = n - n_outer

    # keep the object ring well inside the camera orbit (0.42 x room) so
    # every object is seen from the outside as well
    ring_cap = 0.26 * min(lx, ly)

    def layout(max_r):
        """Ring radii for the current object size, or None if infeasible."""
        sep = 2 * max_r + _CLEARANCE
        outer = max(_RING_FACTOR * min(lx, ly),
                    1.1 * sep / (2 * np.sin(np.pi / max(n_outer, 2))))
        if outer > ring_cap:
            return None
        if n_inner:
            inner = 0.52 * outer
            if n_inner >= 2 and 2 * inner * np.sin(np.pi / n_inner) < sep:
                return None
            # staggered inter-ring clearance
            gap = np.sqrt(inner ** 2 + outer ** 2
                          - 2 * inner * outer * np.cos(np.pi / n_outer))
            if gap < 1.05 * sep:
                return None
        else:
            inner = 0.0
        if outer + max_r + _WALL_GAP > half_room - 0.05:
            return None
        return outer, inner

    # shrink all objects deterministically until the layout fits
    for _shrink in range(40):
        max_r = max(s["radius"] for s in specs)
        if layout(max_r) is not None:
            break
        for s in specs:
            s["radius"] *= 0.95
            s["height"] *= 0.95
            if isinstance(s["size"], tuple):
                s["size"] = tuple(x * 0.95 for x in s["size"])
            else:
                s["size"] = s["size"] * 0.95
    result = layout(max(s["radius"] for s in specs))
    if result is None:
        raise GenerationError("room too small for the requested object count")
    rings = [result[0]]
    counts = [n_outer]
    if n_inner:
        rings.append(result[1])
        counts.append(n_inner)
    ring_of = [0] * n_outer + [1] * n_inner
    if cfg.corruption.duplicate_appearance and n >= 2:
        # the look-alike pair sits on opposite sides of the outer ring
        twin_slot = n_outer // 2
        rest = [s for s in rng.permutation(n) if s not in (0, twin_slot)]
        order = np.array([0, twin_slot] + rest)
    else:
        order = rng.permutation(n)
    centers = []
    for o, spec in enumerate(specs):
        slot = int(order[o])
        ring_i = ring_of[slot]
        in_ring = slot - (0 if ring_i == 0 else n_outer)
        base_ang = 2 * np.pi * in_ring / counts[ring_i] \
            + (np.pi / counts[ring_i] if ring_i else 0.0)
        placed = False
        for _try in range(200):
            ang = base_ang + rng.uniform(-0.25, 0.25) * 2 * np.pi / counts[ring_i]
            rad = rings[ring_i] * rng.uniform(0.88, 1.15)
            x = cx + rad * np.cos(ang)
            y = cy + rad * np.sin(ang)
            margin = spec["radius"] + _WALL_GAP
            if not (margin <= x <= lx - margin and margin <= y <= ly - margin):
                continue
            ok = all(np.hypot(x - c[0], y - c[1])
                     >= spec["radius"] + s2["radius"] + _CLEARANCE
                     for c, s2 in zip(centers, specs))
            if ok:
                centers.append((float(x), float(y)))
                placed = True
                break
        if not placed:
            raise GenerationError(
                f"could not place object {o}; "
                f"reduce object_count or enlarge the room")
    for spec, (x, y) in zip(specs, centers):
        spec["center"] = (x, y, _FLOOR_GAP + spec["height"] / 2)
    return specs


def _sample_object(rng, spec, count):
    kind = spec["kind"]
    c = spec["center"]
    if kind == "box":
        return _sample_box(rng, c, spec["size"], count)
    if kind == "sphere":
        return _sample_sphere(rng, c, spec["size"], count)
    return _sample_cylinder(rng, c, spec["size"][0], spec["size"][1], count)


def _look_at_pose(eye: np.ndarray, target: np.ndarray) -> np.ndarray:
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    pose = np.eye(4)
    pose[:3, :3] = np.stack([right, down, fwd], axis=1)  # camera -> world
    pose[:3, 3] = eye
    return pose


def _orbit_cameras(cfg: SynthConfig) -> list[CameraView]:
    """Wide-angle cameras on an inward-facing orbit at alternating heights,
    all aimed at the room center; every view sees the whole object group and
    a full turn covers every side."""
    lx, ly, lz = cfg.room_size
    cx, cy = lx / 2, ly / 2
    views = []
    radius = 0.42 * min(lx, ly)
    heights = (0.72 * lz, 0.45 * lz)
    target = np.array([cx, cy, 0.28 * lz])
    f = 0.50 * cfg.width
    k = np.array([[f, 0.0, cfg.width / 2],
                  [0.0, f, cfg.height / 2],
                  [0.0, 0.0, 1.0]])
    for i in range(cfg.camera_count):
        ang = 2 * np.pi * i / cfg.camera_count
        eye = np.array([cx + radius * np.cos(ang),
                        cy + radius * np.sin(ang), heights[i % 2]])
        views.append(CameraView(view_id=f"view_{i:03d}", width=cfg.width,
                                height=cfg.height, intrinsics=k,
                                pose=_look_at_pose(eye, target)))
    return views


# ---------------------------------------------------------------------------
# scene generation
# ---------------------------------------------------------------------------

def _unit_rows(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def generate_scene(cfg: SynthConfig) -> tuple[SceneBundle, GroundTruth]:
    """Deterministic scene synthesis: same config, bit-identical output."""
    rng = np.random.default_rng(cfg.rng_seed)
    specs = _place_objects(rng, cfg)

    clouds = [_sample_object(rng, spec, cfg.points_per_object) for spec in specs]
    n_bg = cfg.background_points if cfg.background_points is not None \
        else cfg.object_count * cfg.points_per_object
    bg = _sample_background(rng, cfg.room_size, n_bg)
    positions = np.vstack(clouds + [bg])
    # values quantized to float32 so the PLY round trip is bit-exact
    positions = positions.astype(np.float32).astype(np.float64)
    gt_ids = np.concatenate(
        [np.full(c.shape[0], o, dtype=np.int32) for o, c in enumerate(clouds)]
        + [np.full(bg.shape[0], -1, dtype=np.int32)])

    palette = rng.integers(40, 256, size=(cfg.object_count, 3))
    colors = np.full((positions.shape[0], 3), 128.0)
    for o in range(cfg.object_count):
        colors[gt_ids == o] = palette[o]
    colors = colors / 255.0

    cloud = PointCloud(positions=positions, colors=colors)
    views = _orbit_cameras(cfg)
    # superpoint granularity tracking the object sampling density: several
    # superpoints per object, each large enough that a partially visible
    # one still clears the affinity floor during growing
    min_seg = cfg.min_superpoint_size if cfg.min_superpoint_size is not None \
        else cfg.points_per_object // 8
    partition = oversegment(cloud, OversegConfig(
        merge_threshold=0.15, min_segment_size=max(20, min_seg)))

    prototypes = _unit_rows(rng, cfg.object_count, cfg.feature_dim)
    if cfg.corruption.duplicate_appearance:
        prototypes[1] = prototypes[0]
    background_prototype = _unit_rows(rng, 1, cfg.feature_dim)[0]

    majority = np.empty(partition.count, dtype=np.int64)
    for u, members in enumerate(partition.members()):
        counts = np.bincount(gt_ids[members] + 1, minlength=cfg.object_count + 1)
        majority[u] = int(np.argmax(counts)) - 1
    base = np.where(majority[:, None] >= 0,
                    prototypes[np.clip(majority, 0, None)],
                    background_prototype[None, :])
    noisy = base + cfg.corruption.feature_noise_sigma \
        * rng.normal(size=base.shape)
    norms = np.linalg.norm(noisy, axis=1, keepdims=True)
    zero = norms[:, 0] == 0.0
    noisy[zero] = base[zero]
    norms[zero] = 1.0
    features = FeatureTable(vectors=noisy / norms)

    scene = SceneBundle(cloud=cloud, views=tuple(views), partition=partition,
                        features=features)
    gt = GroundTruth(instance_ids=gt_ids, prototypes=prototypes,
                     background_prototype=background_prototype)
    return scene, gt


# ---------------------------------------------------------------------------
# mask rendering
# ---------------------------------------------------------------------------

def _owner_grid(scene: SceneBundle, gt: GroundTruth, view: CameraView,
                cfg_map: MappingConfig) -> np.ndarray:
    """Per-pixel owning object id (-1 background / empty), from the winner
    point of the shared depth buffer."""
    from .projection import project_points, rasterize_depth

    depth = rasterize_depth(scene.cloud, view, cfg_map)
    uv, z, in_front = project_points(scene.cloud, view)
    ui = round_half_away(np.where(in_front, uv[:, 0], -1.0))
    vi = round_half_away(np.where(in_front, uv[:, 1], -1.0))
    ui[~in_front] = -1
    vi[~in_front] = -1
    winners = pixel_winners(ui, vi, z, depth)
    owner = np.full(winners.shape, -1, dtype=np.int64)
    hit = winners >= 0
    owner[hit] = gt.instance_ids[winners[hit]]
    return owner


def render_masks(scene: SceneBundle, gt: GroundTruth, cfg: SynthConfig,
                 mapping_cfg: MappingConfig | None = None
                 ) -> tuple[MaskSet, dict[int, tuple[str, tuple[int, ...]]]]:
    """Per-view object masks from the depth-buffer winners, then corruption.

    Returns the mask set and, for test oracles only, a map from mask id to
    (view_id, covered object ids).
    """
    mapping_cfg = mapping_cfg or MappingConfig()
    rng = np.random.default_rng(cfg.rng_seed + 10_000)
    masks: list[Mask2D] = []
    origins: dict[int, tuple[str, tuple[int, ...]]] = {}
    next_id = 1
    dup = cfg.corruption.duplicate_appearance and cfg.object_count >= 2
    for view in scene.views:
        owner = _owner_grid(scene, gt, view, mapping_cfg)
        view_masks: dict[int, tuple[np.ndarray, tuple[int, ...]]] = {}
        for o in range(cfg.object_count):
            raster = owner == o
            if raster.any():
                view_masks[next_id] = (raster, (o,))
                next_id += 1
        ids = sorted(view_masks)
        if dup:
            twin_ids = [m for m in ids
                        if view_masks[m][1] in ((0,), (1,))]
            if len(twin_ids) == 2:
                a, b = twin_ids
                view_masks[a] = (view_masks[a][0] | view_masks[b][0], (0, 1))
                del view_masks[b]
                ids = sorted(view_masks)
        if len(ids) >= 2 and rng.random() < cfg.corruption.merge_mask_probability:
            pick = rng.choice(len(ids), size=2, replace=False)
            a, b = sorted(ids[p] for p in pick)
            merged_objects = tuple(sorted(set(view_masks[a][1])
                                          | set(view_masks[b][1])))
            view_masks[a] = (view_masks[a][0] | view_masks[b][0], merged_objects)
            del view_masks[b]
            ids = sorted(view_masks)
        for m in ids:
            raster, objs = view_masks[m]
            if cfg.corruption.boundary_noise_px > 0:
                it = cfg.corruption.boundary_noise_px
                if rng.random() < 0.5:
                    noisy = ndimage.binary_dilation(raster, iterations=it)
                else:
                    eroded = ndimage.binary_erosion(raster, iterations=it)
                    noisy = eroded if eroded.any() else raster
                raster = noisy
            masks.append(Mask2D(view_id=view.view_id, mask_id=m, pixels=raster))
            origins[m] = (view.view_id, objs)
    return MaskSet(masks), origins


def pixel_feature_maps(scene: SceneBundle, gt: GroundTruth,
                       noise_sigma: float = 0.0,
                       rng_seed: int = 0,
                       mapping_cfg: MappingConfig | None = None
                       ) -> PixelFeatureSource:
    """Synthetic dense pixel features: the owning object's prototype."""
    mapping_cfg = mapping_cfg or MappingConfig()
    rng = np.random.default_rng(rng_seed + 20_000)
    maps = {}
    for view in scene.views:
        owner = _owner_grid(scene, gt, view, mapping_cfg)
        fmap = np.zeros((view.height, view.width, gt.prototypes.shape[1]))
        fmap[owner == -1] = gt.background_prototype
        for o in range(gt.prototypes.shape[0]):
            fmap[owner == o] = gt.prototypes[o]
        if noise_sigma > 0.0:
            fmap = fmap + noise_sigma * rng.normal(size=fmap.shape)
        maps[view.view_id] = fmap
    return PixelFeatureSource(maps)


# ---------------------------------------------------------------------------
# on-disk emission (full scene-core file set)
# ---------------------------------------------------------------------------

def emit_scene(cfg: SynthConfig, out_dir,
               with_pixel_features: bool = False,
               pixel_feature_sigma: float = 0.0) -> Path:
    """Write a complete scene file set plus ground truth to a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene, gt = generate_scene(cfg)
    masks, _origins = render_masks(scene, gt, cfg)
    lio.write_ply(scene.cloud, out / "cloud.ply")
    lio.write_cameras(scene.views, out / "cameras.json")
    lio.write_superpoints(scene.partition, out / "superpoints.sp3d")
    lio.write_features(scene.features, out / "features.ft3d")
    lio.write_masks_dir(masks, out / "masks")
    lio._write_labeled_ints(gt.instance_ids, out / "gt.in3d", "IN3D")
    if with_pixel_features:
        source = pixel_feature_maps(scene, gt, noise_sigma=pixel_feature_sigma,
                                    rng_seed=cfg.rng_seed)
        pf_dir = out / "pixfeat"
        pf_dir.mkdir(exist_ok=True)
        for view_id in source.view_ids():
            lio.write_pixel_features(source.get(view_id),
                                     pf_dir / f"{view_id}.pf3d")
        q_dir = out / "queries"
        q_dir.mkdir(exist_ok=True)
        for o in range(gt.prototypes.shape[0]):
            lio.write_query(f"object {o}", gt.prototypes[o],
                            q_dir / f"object_{o:02d}.json")
    return out
