"""Self-contained HDBSCAN used for spatial-continuity splitting.

Pipeline: k-th-nearest-neighbor core distances, an exact minimum spanning
tree of the implicit mutual-reachability graph (Prim with a deterministic
lowest-index tie rule), then condensed-tree extraction with excess-of-mass
stability selection.  The root cluster is selectable, so a single compact
blob yields one cluster rather than all-noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .errors import ValidationError


@dataclass(frozen=True)
class ClusterConfig:
    min_cluster_size: int = 30
    min_samples: int | None = None  # defaults to min_cluster_size

    def __post_init__(self):
        if self.min_cluster_size < 2:
            raise ValidationError("min_cluster_size must be >= 2")
        if self.min_samples is not None and self.min_samples < 1:
            raise ValidationError("min_samples must be >= 1")

    @property
    def k(self) -> int:
        return self.min_samples if self.min_samples is not None \
            else self.min_cluster_size


@dataclass(frozen=True)
class ClusterLabels:
    labels: np.ndarray  # (N,) int64; -1 noise, else cluster id in [0, C)
    n_clusters: int


def core_distances(points: np.ndarray, k: int) -> np.ndarray:
    """Distance to the k-th nearest neighbor (self excluded) per point.

    With fewer than k+1 points every core distance is +inf, which forces
    an all-noise result downstream.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if n <= k:
        return np.full(n, np.inf)
    tree = cKDTree(points)
    dist, _ = tree.query(points, k=k + 1)
    return dist[:, k]


def mutual_reachability_mst(points: np.ndarray, core: np.ndarray) -> np.ndarray:
    """Exact MST of the complete mutual-reachability graph.

    Edge weight is max(core_i, core_j, d(i, j)).  Returns an (N-1, 3) array
    of (i, j, weight) rows sorted by (weight, i, j).
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    ei, ej, w = _kernels.prim_mst(points, np.ascontiguousarray(core, np.float64))
    lo = np.minimum(ei, ej)
    hi = np.maximum(ei, ej)
    order = np.lexsort((hi, lo, w))
    out = np.empty((ei.shape[0], 3))
    out[:, 0] = lo[order]
    out[:, 1] = hi[order]
    out[:, 2] = w[order]
    return out


def _single_linkage(mst: np.ndarray, n: int) -> np.ndarray:
    """Edge list (ascending weight) -> scipy-style merge table.

    Row m: (child_a, child_b, distance, size); new node id is n + m.
    """
    parent = np.arange(2 * n - 1, dtype=np.int64)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    merges = np.empty((n - 1, 4))
    size = np.ones(2 * n - 1, dtype=np.int64)
    nxt = n
    for m in range(n - 1):
        i, j, w = int(mst[m, 0]), int(mst[m, 1]), mst[m, 2]
        ri, rj = find(i), find(j)
        merges[m] = (ri, rj, w, size[ri] + size[rj])
        parent[ri] = nxt
        parent[rj] = nxt
        size[nxt] = size[ri] + size[rj]
        nxt += 1
    return merges


def _bfs_leaves(merges: np.ndarray, n: int, node: int) -> list[int]:
    out = []
    stack = [node]
    while stack:
        x = stack.pop()
        if x < n:
            out.append(x)
        else:
            stack.append(int(merges[x - n, 0]))
            stack.append(int(merges[x - n, 1]))
    return out


def _condense(merges: np.ndarray, n: int, mu: int):
    """Condensed tree with minimum cluster size ``mu``.

    Returns point fall-out rows (cluster, point, lambda), cluster split rows
    (parent, child, lambda, size), birth lambdas, and the cluster count.
    Cluster 0 is the root; child clusters always get larger ids than their
    parents.
    """
    point_rows = []    # (cluster, point, lambda)
    cluster_rows = []  # (parent_cluster, child_cluster, lambda, size)
    root = 2 * n - 2
    relabel = {root: 0}
    birth = {0: 0.0}
    next_cluster = 1
    stack = [root]
    while stack:
        node = stack.pop()
        cluster = relabel[node]
        left, right = int(merges[node - n, 0]), int(merges[node - n, 1])
        dist = merges[node - n, 2]
        lam = 1.0 / dist if dist > 0.0 else np.inf
        ls = 1 if left < n else int(merges[left - n, 3])
        rs = 1 if right < n else int(merges[right - n, 3])
        small = [c for c, s in ((left, ls), (right, rs)) if s < mu]
        big = [c for c, s in ((left, ls), (right, rs)) if s >= mu]
        for child in small:
            for p in _bfs_leaves(merges, n, child):
                point_rows.append((cluster, p, lam))
        if len(big) == 2:
            for child in sorted(big):
                csize = 1 if child < n else int(merges[child - n, 3])
                cluster_rows.append((cluster, next_cluster, lam, csize))
                relabel[child] = next_cluster
                birth[next_cluster] = lam
                next_cluster += 1
                if child >= n:
                    stack.append(child)
        elif len(big) == 1:
            child = big[0]
            if child >= n:
                relabel[child] = cluster
                stack.append(child)
            else:
                point_rows.append((cluster, child, lam))
    return point_rows, cluster_rows, birth, next_cluster


def extract_clusters(mst: np.ndarray, mu: int,
                     n_points: int | None = None) -> ClusterLabels:
    """Condense the single-linkage hierarchy and select stable clusters."""
    if n_points is None:
        n_points = mst.shape[0] + 1 if mst.shape[0] else 1
    if n_points < mu or mst.shape[0] != n_points - 1:
        return ClusterLabels(labels=np.full(n_points, -1, dtype=np.int64),
                             n_clusters=0)
    if not np.isfinite(mst[:, 2]).all():
        # infinite reachability (k too large): nothing is dense enough
        return ClusterLabels(labels=np.full(n_points, -1, dtype=np.int64),
                             n_clusters=0)
    merges = _single_linkage(mst, n_points)
    point_rows, cluster_rows, birth, n_cond = _condense(merges, n_points, mu)

    stability = {c: 0.0 for c in range(n_cond)}
    for cluster, _p, lam in point_rows:
        stability[cluster] += lam - birth[cluster]
    for parent, _child, lam, size in cluster_rows:
        stability[parent] += (lam - birth[parent]) * size

    children = {c: [] for c in range(n_cond)}
    for parent, child, _lam, _size in cluster_rows:
        children[parent].append(child)

    # excess-of-mass selection, deepest clusters first; the root competes too
    selected = {c: False for c in range(n_cond)}
    subtree = {}
    for c in range(n_cond - 1, -1, -1):
        child_sum = sum(subtree[d] for d in children[c])
        if children[c] and child_sum > stability[c]:
            subtree[c] = child_sum
            selected[c] = False
        else:
            subtree[c] = stability[c]
            selected[c] = True
            stack = list(children[c])
            while stack:
                d = stack.pop()
                selected[d] = False
                stack.extend(children[d])

    chosen = [c for c in range(n_cond) if selected[c]]
    cluster_id = {c: i for i, c in enumerate(chosen)}

    # a point belongs to the selected cluster whose condensed subtree it
    # falls out of; points above every selected cluster are noise
    up = {c: None for c in range(n_cond)}
    for parent, child, _lam, _size in cluster_rows:
        up[child] = parent
    owner = {}
    for c in range(n_cond):
        x = c
        while x is not None and not selected[x]:
            x = up[x]
        owner[c] = cluster_id[x] if x is not None else -1

    labels = np.full(n_points, -1, dtype=np.int64)
    for cluster, p, _lam in point_rows:
        labels[p] = owner[cluster]
    return ClusterLabels(labels=labels, n_clusters=len(chosen))


def hdbscan(points: np.ndarray, cfg: ClusterConfig) -> ClusterLabels:
    """Density-based clustering of 3D coordinates; deterministic."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < cfg.min_cluster_size:
        return ClusterLabels(labels=np.full(n, -1, dtype=np.int64), n_clusters=0)
    core = core_distances(points, cfg.k)
    mst = mutual_reachability_mst(points, core)
    return extract_clusters(mst, cfg.min_cluster_size, n_points=n)
