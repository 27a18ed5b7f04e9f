"""Class-agnostic instance segmentation metrics and the occlusion protocol.

Matching is greedy in descending prediction confidence: each prediction
claims the unmatched ground-truth instance of highest IoU when that IoU
clears the threshold, otherwise it counts as a false positive.  AP is the
area under the all-point interpolated precision-recall curve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .scene import Mask2D, MaskSet, ProposalSet

_MAP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = (0.25,) + _MAP_THRESHOLDS

    def __post_init__(self):
        ts = tuple(float(t) for t in self.iou_thresholds)
        if any(not (0.0 < t < 1.0) for t in ts):
            raise ValidationError("IoU thresholds must lie in (0, 1)")
        if list(ts) != sorted(ts):
            raise ValidationError("IoU thresholds must be sorted ascending")
        for needed in _MAP_THRESHOLDS:
            if not any(abs(t - needed) < 1e-9 for t in ts):
                raise ValidationError(f"mAP requires threshold {needed}")
        object.__setattr__(self, "iou_thresholds", ts)


@dataclass(frozen=True)
class EvalReport:
    ap_per_threshold: dict[float, float]
    mAP: float
    ap50: float
    ap25: float
    matches: list[tuple[int, int, float]] = field(default_factory=list)
    instance_count: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "mAP": self.mAP, "AP50": self.ap50, "AP25": self.ap25,
            "ap_per_threshold": {f"{k:.2f}": v
                                 for k, v in sorted(self.ap_per_threshold.items())},
            "instance_count": self.instance_count,
            "matches": [{"prediction": p, "gt": g, "iou": i}
                        for p, g, i in self.matches],
        }, indent=1, sort_keys=True) + "\n"


def _gt_instances(ground_truth: np.ndarray) -> list[np.ndarray]:
    ids = np.unique(ground_truth)
    ids = ids[ids >= 0]
    return [np.nonzero(ground_truth == g)[0] for g in ids]


def match_and_ap(predictions: ProposalSet, ground_truth: np.ndarray,
                 theta: float):
    """AP at one IoU threshold plus the match records."""
    gt_sets = _gt_instances(np.asarray(ground_truth))
    if not gt_sets:
        raise ValidationError("ground truth contains no instances; AP undefined")
    if len(predictions) == 0:
        return 0.0, []
    order = sorted(range(len(predictions.proposals)),
                   key=lambda i: (-predictions.proposals[i].confidence, i))
    gt_taken = [False] * len(gt_sets)
    tp = np.zeros(len(order))
    matches = []
    for rank, idx in enumerate(order):
        pred = predictions.proposals[idx]
        best_iou, best_g = 0.0, -1
        for g, gt_pts in enumerate(gt_sets):
            if gt_taken[g]:
                continue
            inter = np.intersect1d(pred.points, gt_pts, assume_unique=True).size
            union = pred.size + gt_pts.size - inter
            iou = inter / union
            if iou > best_iou:
                best_iou, best_g = iou, g
        if best_g >= 0 and best_iou >= theta:
            gt_taken[best_g] = True
            tp[rank] = 1.0
            matches.append((idx, best_g, float(best_iou)))
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    recall = cum_tp / len(gt_sets)
    precision = cum_tp / (cum_tp + cum_fp)
    # all-point interpolation: monotone precision envelope from the right
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, envelope):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap), matches


def evaluate(predictions: ProposalSet, ground_truth: np.ndarray,
             cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """AP per threshold, mAP over 0.50..0.95, and fixed 0.50/0.25 taps."""
    ap_per = {}
    matches50 = []
    for theta in cfg.iou_thresholds:
        ap, matches = match_and_ap(predictions, ground_truth, theta)
        ap_per[theta] = ap
        if abs(theta - 0.5) < 1e-9:
            matches50 = matches
    m_ap = float(np.mean([ap_per[t] for t in _MAP_THRESHOLDS]))
    return EvalReport(ap_per_threshold=ap_per, mAP=m_ap,
                      ap50=ap_per.get(0.5, 0.0), ap25=ap_per.get(0.25, 0.0),
                      matches=matches50, instance_count=len(predictions))


def write_ap_csv(report: EvalReport, path) -> None:
    lines = ["iou_threshold,ap"]
    for t, ap in sorted(report.ap_per_threshold.items()):
        lines.append(f"{t:.2f},{ap:.9f}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def patch_drop(masks: MaskSet, percentage: float, rng_seed: int) -> MaskSet:
    """Zero a uniformly random floor(percentage%) of each mask's set pixels.

    Masks are processed independently in canonical (view, id) order with a
    single seeded generator, so results are reproducible.  A mask emptied
    entirely is dropped.
    """
    if not (0.0 <= percentage < 100.0):
        raise ValidationError(f"percentage must be in [0, 100), got {percentage}")
    rng = np.random.default_rng(rng_seed)
    out = []
    for mask in masks:
        if percentage == 0.0:
            out.append(mask)
            continue
        set_idx = np.nonzero(mask.pixels.reshape(-1))[0]
        n_drop = int(np.floor(percentage / 100.0 * set_idx.size))
        if n_drop == 0:
            out.append(mask)
            continue
        drop = rng.choice(set_idx, size=n_drop, replace=False)
        flat = mask.pixels.reshape(-1).copy()
        flat[drop] = False
        if not flat.any():
            continue
        out.append(Mask2D(view_id=mask.view_id, mask_id=mask.mask_id,
                          pixels=flat.reshape(mask.pixels.shape)))
    return MaskSet(out)
