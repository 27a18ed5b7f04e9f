"""Internal superpoint generation (graph-based over-segmentation).

A user-supplied partition file is always preferred; this module exists so
the pipeline can run on bare point clouds.  It builds a symmetric k-NN
graph and segments it with the Felzenszwalb-Huttenlocher criterion, then
folds undersized segments into their lowest-weight neighbor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .errors import ValidationError
from .scene import PointCloud, SuperpointPartition


@dataclass(frozen=True)
class OversegConfig:
    k_neighbors: int = 16
    merge_threshold: float = 0.05  # meters; FH scale parameter
    min_segment_size: int = 20

    def __post_init__(self):
        if self.k_neighbors <= 0 or self.merge_threshold <= 0.0 \
                or self.min_segment_size <= 0:
            raise ValidationError("oversegment parameters must be positive")


def build_knn_graph(cloud: PointCloud, k: int) -> np.ndarray:
    """Symmetric k-NN edges as an (E, 3) array of (i, j, distance), i < j."""
    pts = cloud.positions
    n = pts.shape[0]
    if n <= k:
        raise ValidationError(f"need more than k={k} points, got {n}")
    tree = cKDTree(pts)
    dist, nbr = tree.query(pts, k=k + 1)
    src = np.repeat(np.arange(n, dtype=np.int64), k)
    dst = nbr[:, 1:].reshape(-1).astype(np.int64)
    w = dist[:, 1:].reshape(-1)
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    key = lo * n + hi
    _, first = np.unique(key, return_index=True)
    edges = np.empty((first.shape[0], 3))
    edges[:, 0] = lo[first]
    edges[:, 1] = hi[first]
    edges[:, 2] = w[first]
    order = np.lexsort((edges[:, 1], edges[:, 0], edges[:, 2]))
    return edges[order]


def segment_graph(edges: np.ndarray, cfg: OversegConfig,
                  n_points: int) -> SuperpointPartition:
    """Felzenszwalb-Huttenlocher segmentation of a weighted graph."""
    ei = np.ascontiguousarray(edges[:, 0], dtype=np.int64)
    ej = np.ascontiguousarray(edges[:, 1], dtype=np.int64)
    w = np.ascontiguousarray(edges[:, 2], dtype=np.float64)
    roots = _kernels.fh_segment(ei, ej, w, n_points, cfg.merge_threshold,
                                cfg.min_segment_size)
    _, labels = np.unique(roots, return_inverse=True)
    return SuperpointPartition(labels=labels.astype(np.int64),
                               superpoint_count=int(labels.max()) + 1)


def oversegment(cloud: PointCloud, cfg: OversegConfig) -> SuperpointPartition:
    edges = build_knn_graph(cloud, cfg.k_neighbors)
    return segment_graph(edges, cfg, cloud.count)
