"""Cross-view co-occurrence mask filtering.

Each mask is associated, per view, with the set of superpoints more than
half of whose points are visible in that view and project inside the mask
raster.  Masks whose visible-superpoint sets disagree with the rest of the
candidate set (low average normalized intersection) are pruned.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import PipelineError, ValidationError
from .projection import ViewMapping
from .scene import Mask2D, MaskSet, SuperpointPartition

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FilterConfig:
    score_threshold: float = 0.2
    inclusion_fraction: float = 0.5
    normalize_by_nonempty_views: bool = False

    def __post_init__(self):
        if not (0.0 <= self.score_threshold < 1.0):
            raise ValidationError("score_threshold must be in [0, 1)")
        if not (0.0 < self.inclusion_fraction <= 1.0):
            raise ValidationError("inclusion_fraction must be in (0, 1]")


class MaskSuperpointTable:
    """Sparse sets of visible superpoints per (mask, view) pair."""

    def __init__(self, mask_ids: list[int], view_ids: list[str],
                 sets: dict[tuple[int, str], np.ndarray]):
        self.mask_ids = list(mask_ids)
        self.view_ids = list(view_ids)
        self._sets = sets

    def get(self, mask_id: int, view_id: str) -> np.ndarray:
        return self._sets.get((mask_id, view_id), _EMPTY)

    @property
    def n_masks(self) -> int:
        return len(self.mask_ids)

    @property
    def n_views(self) -> int:
        return len(self.view_ids)


_EMPTY = np.empty(0, dtype=np.int64)


def visible_superpoints(mapping: ViewMapping, mask: Mask2D,
                        partition: SuperpointPartition,
                        frac: float = 0.5) -> np.ndarray:
    """Superpoints with strictly more than ``frac`` of their points visible
    in the mapping's view and inside the mask raster."""
    vis = mapping.visible
    inside = np.zeros(partition.labels.shape[0], dtype=bool)
    vi = np.nonzero(vis)[0]
    if vi.size:
        px = mapping.pixel[vi]
        inside[vi] = mask.pixels[px[:, 1], px[:, 0]]
    counts = np.bincount(partition.labels[inside], minlength=partition.count)
    totals = np.bincount(partition.labels, minlength=partition.count)
    return np.nonzero(counts > frac * totals)[0].astype(np.int64)


def build_table(masks: MaskSet, mappings: dict[str, ViewMapping],
                partition: SuperpointPartition,
                frac: float = 0.5) -> MaskSuperpointTable:
    """Evaluate every mask raster against every mapped view."""
    totals = np.bincount(partition.labels, minlength=partition.count)
    sets: dict[tuple[int, str], np.ndarray] = {}
    view_ids = sorted(mappings.keys())
    for view_id in view_ids:
        mapping = mappings[view_id]
        vi = mapping.visible_indices
        if vi.size == 0:
            continue
        px = mapping.pixel[vi]
        labels_vi = partition.labels[vi]
        for mask in masks:
            inside = mask.pixels[px[:, 1], px[:, 0]]
            counts = np.bincount(labels_vi[inside], minlength=partition.count)
            ids = np.nonzero(counts > frac * totals)[0]
            if ids.size:
                sets[(mask.mask_id, view_id)] = ids.astype(np.int64)
    return MaskSuperpointTable([m.mask_id for m in masks], view_ids, sets)


def cooccurrence_scores(table: MaskSuperpointTable,
                        n_masks: int | None = None,
                        n_views: int | None = None,
                        normalize_by_nonempty_views: bool = False
                        ) -> dict[int, float]:
    """Average normalized set intersection of each mask against all others.

    Terms where either set is empty contribute zero.  With
    ``normalize_by_nonempty_views`` the per-pair view divisor is the number
    of views where the scored mask has a non-empty set, instead of the
    total view count.
    """
    k2d = n_masks if n_masks is not None else table.n_masks
    t = n_views if n_views is not None else table.n_views
    mask_ids = table.mask_ids
    if k2d < 2:
        warnings.warn("fewer than two masks: co-occurrence undefined, "
                      "all masks pass unfiltered")
        return {m: 1.0 for m in mask_ids}
    # dense boolean incidence per view keeps the pair loop vectorized
    u_max = 0
    for m in mask_ids:
        for v in table.view_ids:
            s = table.get(m, v)
            if s.size:
                u_max = max(u_max, int(s.max()) + 1)
    scores = {m: 0.0 for m in mask_ids}
    nonempty = {m: 0 for m in mask_ids}
    pair_sums = np.zeros((len(mask_ids), len(mask_ids)))
    for v in table.view_ids:
        inc = np.zeros((len(mask_ids), max(u_max, 1)), dtype=np.float64)
        sizes = np.zeros(len(mask_ids))
        for a, m in enumerate(mask_ids):
            s = table.get(m, v)
            inc[a, s] = 1.0
            sizes[a] = s.size
            if s.size:
                nonempty[m] += 1
        inter = inc @ inc.T
        denom = np.sqrt(np.outer(sizes, sizes))
        with np.errstate(invalid="ignore", divide="ignore"):
            term = np.where(denom > 0.0, inter / denom, 0.0)
        pair_sums += term
    np.fill_diagonal(pair_sums, 0.0)
    for a, m in enumerate(mask_ids):
        t_eff = nonempty[m] if normalize_by_nonempty_views else t
        if t_eff == 0:
            scores[m] = 0.0
        else:
            scores[m] = float(pair_sums[a].sum() / ((k2d - 1) * t_eff))
    return scores


def filter_masks(masks: MaskSet, scores: dict[int, float],
                 cfg: FilterConfig) -> MaskSet:
    """Keep masks scoring at or above the threshold; ids are preserved."""
    missing = [m.mask_id for m in masks if m.mask_id not in scores]
    if missing:
        raise ValidationError(f"scores missing for mask ids {missing}")
    if len(masks) < 2:
        return masks
    kept = [m for m in masks if scores[m.mask_id] >= cfg.score_threshold]
    if not kept:
        raise PipelineError(
            f"co-occurrence filtering removed all {len(masks)} masks; "
            f"reduce score_threshold (currently {cfg.score_threshold})")
    dropped = len(masks) - len(kept)
    if dropped:
        log.info("co-occurrence filter pruned %d of %d masks", dropped, len(masks))
    return MaskSet(kept)


def write_scores_csv(masks: MaskSet, scores: dict[int, float],
                     cfg: FilterConfig, path) -> None:
    lines = ["mask_id,view_id,score,retained"]
    for m in masks:
        s = scores[m.mask_id]
        lines.append(f"{m.mask_id},{m.view_id},{s:.9f},"
                     f"{int(s >= cfg.score_threshold)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
