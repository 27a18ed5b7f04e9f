"""Per-view point projection, depth buffering, and visibility.

The depth buffer holds, per pixel, the minimum camera-space depth over all
points whose rounded projection covers it (optionally splatted).  Visibility
is then decided by one of three strategies:

* ``naive``           -- any in-frustum point with positive depth;
* ``min_depth``       -- only points attaining the pixel minimum exactly;
* ``occlusion_aware`` -- points whose depth is within ``tau_vis`` of the
                         pixel minimum (the default).

All outputs are deterministic regardless of worker count.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigurationError, ValidationError
from .scene import CameraView, PointCloud


class Strategy(enum.Enum):
    NAIVE = "naive"
    MIN_DEPTH = "min_depth"
    OCCLUSION_AWARE = "occlusion_aware"


@dataclass(frozen=True)
class MappingConfig:
    tau_vis: float = 0.1
    strategy: Strategy = Strategy.OCCLUSION_AWARE
    splat_radius: int = 0

    def __post_init__(self):
        if isinstance(self.strategy, str):
            object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.tau_vis <= 0.0:
            raise ValidationError(f"tau_vis must be > 0, got {self.tau_vis}")
        if self.splat_radius < 0:
            raise ValidationError("splat_radius must be >= 0")


@dataclass(frozen=True)
class ViewMapping:
    """Depth buffer, visibility bits, and point-to-pixel map for one view."""

    view_id: str
    width: int
    height: int
    depth: np.ndarray    # (H, W) float64, +inf where no point projects
    visible: np.ndarray  # (N,) bool
    pixel: np.ndarray    # (N, 2) int64 (u, v); (-1, -1) where invisible
    z: np.ndarray        # (N,) float64 camera-space depth (any sign)
    strategy: Strategy
    tau_vis: float

    @property
    def visible_indices(self) -> np.ndarray:
        return np.nonzero(self.visible)[0]


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Nearest-integer rounding with halves away from zero."""
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


def project_points(cloud: PointCloud, view: CameraView):
    """Pinhole projection of every point into one view.

    Returns float pixel coordinates ``(N, 2)``, camera depths ``(N,)``, and a
    boolean flag marking points in front of the camera (z > 0); coordinates
    of flagged-out points are not meaningful.
    """
    k = view.intrinsics
    if np.linalg.det(view.pose[:3, :3]) == 0.0:
        raise ConfigurationError(f"view {view.view_id}: singular pose")
    w2c = view.world_to_camera()
    cam = cloud.positions @ w2c[:3, :3].T + w2c[:3, 3]
    proj = cam @ k.T
    z = proj[:, 2]
    in_front = z > 0.0
    uv = np.full((cloud.count, 2), np.nan)
    np.divide(proj[:, :2], z[:, None], out=uv, where=in_front[:, None])
    return uv, z, in_front


def rasterize_depth(cloud: PointCloud, view: CameraView,
                    cfg: MappingConfig) -> np.ndarray:
    """Z-buffer: per-pixel minimum depth over covering points."""
    if cfg.strategy is Strategy.NAIVE:
        raise ConfigurationError("naive strategy does not use a depth buffer")
    uv, z, in_front = project_points(cloud, view)
    ui = round_half_away(np.where(in_front, uv[:, 0], -1.0))
    vi = round_half_away(np.where(in_front, uv[:, 1], -1.0))
    r = cfg.splat_radius
    keep = in_front & (ui >= -r) & (ui < view.width + r) \
        & (vi >= -r) & (vi < view.height + r)
    return _kernels.scatter_min_depth(ui[keep], vi[keep], z[keep],
                                      view.height, view.width, r)


def verify_visibility(cloud: PointCloud, view: CameraView,
                      depth: np.ndarray | None,
                      cfg: MappingConfig) -> ViewMapping:
    """Decide per-point visibility under the configured strategy.

    ``depth`` may be None for the naive strategy (and is then ignored); the
    other strategies compute it on the fly when not supplied.
    """
    uv, z, in_front = project_points(cloud, view)
    ui = round_half_away(np.where(in_front, uv[:, 0], -1.0))
    vi = round_half_away(np.where(in_front, uv[:, 1], -1.0))
    in_bounds = in_front & (ui >= 0) & (ui < view.width) \
        & (vi >= 0) & (vi < view.height)
    if cfg.strategy is Strategy.NAIVE:
        visible = in_bounds
        depth = np.full((view.height, view.width), np.inf)
    else:
        if depth is None:
            depth = rasterize_depth(cloud, view, cfg)
        elif depth.shape != (view.height, view.width):
            raise ValidationError(
                f"depth buffer shape {depth.shape} does not match view "
                f"({view.height}, {view.width})")
        pix_depth = np.full(cloud.count, np.inf)
        pix_depth[in_bounds] = depth[vi[in_bounds], ui[in_bounds]]
        if cfg.strategy is Strategy.MIN_DEPTH:
            visible = in_bounds & (z == pix_depth)
        else:
            visible = in_bounds & (np.abs(z - pix_depth) <= cfg.tau_vis)
    pixel = np.full((cloud.count, 2), -1, dtype=np.int64)
    pixel[visible, 0] = ui[visible]
    pixel[visible, 1] = vi[visible]
    return ViewMapping(view_id=view.view_id, width=view.width, height=view.height,
                       depth=depth, visible=visible, pixel=pixel, z=z,
                       strategy=cfg.strategy, tau_vis=cfg.tau_vis)


def build_mapping(cloud: PointCloud, view: CameraView,
                  cfg: MappingConfig) -> ViewMapping:
    """Rasterize (unless naive) and verify in one step."""
    depth = None
    if cfg.strategy is not Strategy.NAIVE:
        depth = rasterize_depth(cloud, view, cfg)
    return verify_visibility(cloud, view, depth, cfg)


def build_mappings(cloud: PointCloud, views, cfg: MappingConfig,
                   workers: int = 1) -> dict[str, ViewMapping]:
    """Mappings for many views; embarrassingly parallel and deterministic."""
    views = list(views)
    if workers <= 1 or len(views) <= 1:
        return {v.view_id: build_mapping(cloud, v, cfg) for v in views}
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda v: build_mapping(cloud, v, cfg), views))
    return {v.view_id: m for v, m in zip(views, results)}
