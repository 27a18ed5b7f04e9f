"""Open-vocabulary label assignment over final proposals.

Per-point features are averaged from dense per-view pixel feature maps over
the views where the point is visible; proposal features average their member
points; queries rank proposals by cosine similarity.  No vision-language
encoder runs here: feature maps and query embeddings arrive as files (or
from the synthetic source).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SemanticUndefinedError, ValidationError
from .projection import ViewMapping
from .scene import PointSetInstance, ProposalSet


class PixelFeatureSource:
    """Dense (H, W, D) feature map per view."""

    def __init__(self, maps: dict[str, np.ndarray]):
        if not maps:
            raise ValidationError("pixel feature source must cover >= 1 view")
        dims = {m.shape[2] for m in maps.values()}
        if len(dims) != 1:
            raise ValidationError(f"inconsistent feature dims across views: {dims}")
        self.maps = maps
        self.dim = dims.pop()

    def view_ids(self) -> list[str]:
        return sorted(self.maps.keys())

    def get(self, view_id: str) -> np.ndarray:
        return self.maps[view_id]


@dataclass(frozen=True)
class TextQuery:
    query: str
    embedding: np.ndarray

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1 or not np.isfinite(emb).all() \
                or np.linalg.norm(emb) == 0.0:
            raise ValidationError("query embedding must be finite with positive norm")
        object.__setattr__(self, "embedding", emb)


def aggregate_point_features(mappings: dict[str, ViewMapping],
                             source: PixelFeatureSource):
    """Per-point mean of pixel features over the views seeing the point.

    Returns the (N, D) feature array and a boolean flag marking points that
    are visible nowhere (their feature row is zero).
    """
    for view_id in source.view_ids():
        if view_id not in mappings:
            raise ValidationError(f"no mapping for feature view {view_id!r}")
    n = next(iter(mappings.values())).visible.shape[0]
    total = np.zeros((n, source.dim))
    count = np.zeros(n)
    for view_id in source.view_ids():
        mapping = mappings[view_id]
        fmap = source.get(view_id)
        if fmap.shape[:2] != (mapping.height, mapping.width):
            raise ValidationError(
                f"feature map for view {view_id!r} is {fmap.shape[:2]}, "
                f"mapping is ({mapping.height}, {mapping.width})")
        vi = mapping.visible_indices
        if vi.size == 0:
            continue
        px = mapping.pixel[vi]
        total[vi] += fmap[px[:, 1], px[:, 0]]
        count[vi] += 1.0
    seen = count > 0.0
    features = np.zeros_like(total)
    features[seen] = total[seen] / count[seen, None]
    return features, ~seen


def proposal_feature(proposal: PointSetInstance, point_features: np.ndarray,
                     invisible: np.ndarray) -> np.ndarray:
    """Mean feature over the proposal's visible member points."""
    usable = proposal.points[~invisible[proposal.points]]
    if usable.size == 0:
        raise SemanticUndefinedError(
            "proposal has no visible points; semantic feature undefined")
    return point_features[usable].mean(axis=0)


def rank_by_query(proposals: ProposalSet, features_by_proposal: np.ndarray,
                  query: TextQuery) -> list[tuple[int, float]]:
    """(proposal index, cosine score) sorted descending, ties by index."""
    q = query.embedding / np.linalg.norm(query.embedding)
    norms = np.linalg.norm(features_by_proposal, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = np.where(norms > 0.0, features_by_proposal @ q / norms, 0.0)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return [(i, float(scores[i])) for i in order]


def search(proposals: ProposalSet, mappings: dict[str, ViewMapping],
           source: PixelFeatureSource, query: TextQuery):
    """Convenience pipeline: aggregate, per-proposal features, rank."""
    point_features, invisible = aggregate_point_features(mappings, source)
    feats = np.zeros((len(proposals), source.dim))
    for i, p in enumerate(proposals):
        feats[i] = proposal_feature(p, point_features, invisible)
    return rank_by_query(proposals, feats, query)
