"""Hot numeric kernels with two interchangeable backends.

The numba backend is used when available; setting the environment variable
``LIFTSEG_NO_NUMBA=1`` (before import) selects the pure-numpy fallbacks.
Both backends are required to produce bit-identical results; the test suite
and ``benchmarks/bench_kernels.py`` compare them directly.
"""

from __future__ import annotations

import math
import os

import numpy as np

_flag = os.environ.get("LIFTSEG_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _flag in {"1", "true", "yes", "on"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag instead
    numba = None
    HAVE_NUMBA = False

USING_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED


# ---------------------------------------------------------------------------
# depth scatter-min (Z-buffer)
# ---------------------------------------------------------------------------

def _scatter_min_depth_numpy(u, v, z, height, width, splat_radius):
    depth = np.full(height * width, np.inf, dtype=np.float64)
    for dv in range(-splat_radius, splat_radius + 1):
        for du in range(-splat_radius, splat_radius + 1):
            uu = u + du
            vv = v + dv
            ok = (uu >= 0) & (uu < width) & (vv >= 0) & (vv < height)
            np.minimum.at(depth, vv[ok] * width + uu[ok], z[ok])
    return depth.reshape(height, width)


def _scatter_min_depth_loop(u, v, z, height, width, splat_radius):
    depth = np.full((height, width), np.inf, dtype=np.float64)
    for k in range(u.shape[0]):
        for dv in range(-splat_radius, splat_radius + 1):
            vv = v[k] + dv
            if vv < 0 or vv >= height:
                continue
            for du in range(-splat_radius, splat_radius + 1):
                uu = u[k] + du
                if uu < 0 or uu >= width:
                    continue
                if z[k] < depth[vv, uu]:
                    depth[vv, uu] = z[k]
    return depth


# ---------------------------------------------------------------------------
# per-pixel winning point (minimum depth, lowest index on ties)
# ---------------------------------------------------------------------------

def _pixel_winners_numpy(u, v, z, depth):
    height, width = depth.shape
    owner = np.full(height * width, np.iinfo(np.int64).max, dtype=np.int64)
    idx = np.arange(u.shape[0], dtype=np.int64)
    ok = (u >= 0) & (u < width) & (v >= 0) & (v < height)
    flat = v[ok] * width + u[ok]
    hit = z[ok] == depth.reshape(-1)[flat]
    np.minimum.at(owner, flat[hit], idx[ok][hit])
    owner[owner == np.iinfo(np.int64).max] = -1
    return owner.reshape(height, width)


def _pixel_winners_loop(u, v, z, depth):
    height, width = depth.shape
    owner = np.full((height, width), -1, dtype=np.int64)
    for k in range(u.shape[0]):
        uu = u[k]
        vv = v[k]
        if uu < 0 or uu >= width or vv < 0 or vv >= height:
            continue
        if z[k] == depth[vv, uu] and owner[vv, uu] == -1:
            owner[vv, uu] = k
    return owner


# ---------------------------------------------------------------------------
# Prim MST over the implicit mutual-reachability graph
# ---------------------------------------------------------------------------

def _prim_mst_numpy(points, core):
    n = points.shape[0]
    if n < 2:
        return (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.float64))
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf, dtype=np.float64)
    parent = np.full(n, -1, dtype=np.int64)
    in_tree[0] = True
    cur = 0
    out_i = np.empty(n - 1, np.int64)
    out_j = np.empty(n - 1, np.int64)
    out_w = np.empty(n - 1, np.float64)
    for step in range(n - 1):
        diff = points - points[cur]
        d = np.sqrt((diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1])
                    + diff[:, 2] * diff[:, 2])
        mrd = np.maximum(np.maximum(core, core[cur]), d)
        upd = (~in_tree) & (mrd < best)
        best[upd] = mrd[upd]
        parent[upd] = cur
        nxt = int(np.where(in_tree, np.inf, best).argmin())
        out_i[step] = parent[nxt]
        out_j[step] = nxt
        out_w[step] = best[nxt]
        in_tree[nxt] = True
        cur = nxt
    return out_i, out_j, out_w


def _prim_mst_loop(points, core):
    n = points.shape[0]
    out_i = np.empty(max(n - 1, 0), np.int64)
    out_j = np.empty(max(n - 1, 0), np.int64)
    out_w = np.empty(max(n - 1, 0), np.float64)
    if n < 2:
        return out_i, out_j, out_w
    in_tree = np.zeros(n, dtype=np.bool_)
    best = np.full(n, np.inf, dtype=np.float64)
    parent = np.full(n, -1, dtype=np.int64)
    in_tree[0] = True
    cur = 0
    for step in range(n - 1):
        cx = points[cur, 0]
        cy = points[cur, 1]
        cz = points[cur, 2]
        ccore = core[cur]
        nxt = -1
        nxt_w = np.inf
        for i in range(n):
            if in_tree[i]:
                continue
            dx = points[i, 0] - cx
            dy = points[i, 1] - cy
            dz = points[i, 2] - cz
            d = math.sqrt((dx * dx + dy * dy) + dz * dz)
            w = core[i]
            if ccore > w:
                w = ccore
            if d > w:
                w = d
            if w < best[i]:
                best[i] = w
                parent[i] = cur
            if best[i] < nxt_w:
                nxt_w = best[i]
                nxt = i
        out_i[step] = parent[nxt]
        out_j[step] = nxt
        out_w[step] = best[nxt]
        in_tree[nxt] = True
        cur = nxt
    return out_i, out_j, out_w


# ---------------------------------------------------------------------------
# Felzenszwalb-Huttenlocher graph segmentation (union-find)
# ---------------------------------------------------------------------------

def _fh_segment_loop(ei, ej, w, n, k_scale, min_size):
    parent = np.arange(n, dtype=np.int64)
    size = np.ones(n, dtype=np.int64)
    internal = np.zeros(n, dtype=np.float64)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for e in range(ei.shape[0]):
        ri = find(ei[e])
        rj = find(ej[e])
        if ri == rj:
            continue
        we = w[e]
        if we <= internal[ri] + k_scale / size[ri] and \
           we <= internal[rj] + k_scale / size[rj]:
            if rj < ri:
                ri, rj = rj, ri
            parent[rj] = ri
            size[ri] += size[rj]
            internal[ri] = we
    for e in range(ei.shape[0]):
        ri = find(ei[e])
        rj = find(ej[e])
        if ri == rj:
            continue
        if size[ri] < min_size or size[rj] < min_size:
            if rj < ri:
                ri, rj = rj, ri
            parent[rj] = ri
            size[ri] += size[rj]
    roots = np.empty(n, dtype=np.int64)
    for x in range(n):
        roots[x] = find(x)
    return roots


def _fh_segment_numba_src(ei, ej, w, n, k_scale, min_size):  # pragma: no cover
    parent = np.arange(n, dtype=np.int64)
    size = np.ones(n, dtype=np.int64)
    internal = np.zeros(n, dtype=np.float64)
    for e in range(ei.shape[0]):
        ri = ei[e]
        while parent[ri] != ri:
            ri = parent[ri]
        rj = ej[e]
        while parent[rj] != rj:
            rj = parent[rj]
        parent[ei[e]] = ri
        parent[ej[e]] = rj
        if ri == rj:
            continue
        we = w[e]
        if we <= internal[ri] + k_scale / size[ri] and \
           we <= internal[rj] + k_scale / size[rj]:
            if rj < ri:
                ri, rj = rj, ri
            parent[rj] = ri
            size[ri] += size[rj]
            internal[ri] = we
    for e in range(ei.shape[0]):
        ri = ei[e]
        while parent[ri] != ri:
            ri = parent[ri]
        rj = ej[e]
        while parent[rj] != rj:
            rj = parent[rj]
        parent[ei[e]] = ri
        parent[ej[e]] = rj
        if ri == rj:
            continue
        if size[ri] < min_size or size[rj] < min_size:
            if rj < ri:
                ri, rj = rj, ri
            parent[rj] = ri
            size[ri] += size[rj]
    roots = np.empty(n, dtype=np.int64)
    for x in range(n):
        r = x
        while parent[r] != r:
            r = parent[r]
        roots[x] = r
    return roots


if USING_NUMBA:
    _njit = numba.njit(cache=True, nogil=True)
    scatter_min_depth = _njit(_scatter_min_depth_loop)
    pixel_winners = _njit(_pixel_winners_loop)
    prim_mst = _njit(_prim_mst_loop)
    fh_segment = _njit(_fh_segment_numba_src)
else:
    scatter_min_depth = _scatter_min_depth_numpy
    pixel_winners = _pixel_winners_numpy
    fh_segment = _fh_segment_loop
    prim_mst = _prim_mst_numpy

# Fallbacks kept importable under both backends so the benchmark and the
# parity tests can compare paths without reloading the module.
scatter_min_depth_numpy = _scatter_min_depth_numpy
pixel_winners_numpy = _pixel_winners_numpy
prim_mst_numpy = _prim_mst_numpy
fh_segment_numpy = _fh_segment_loop


def backend_name() -> str:
    return "numba" if USING_NUMBA else "numpy"
