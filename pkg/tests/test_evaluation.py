"""AP matching protocol against hand computation, plus the patch-drop
occlusion protocol."""

import numpy as np
import pytest

from liftseg.errors import ValidationError
from liftseg.evaluation import (EvalConfig, evaluate, match_and_ap, patch_drop)
from liftseg.scene import (Mask2D, MaskSet, PointSetInstance, ProposalSet,
                           Provenance)


def inst(pts, conf):
    return PointSetInstance(points=np.asarray(pts, np.int64),
                            provenance=Provenance("merged", ("v",)),
                            confidence=conf)


def proposals(items, n_points, n_views=10):
    return ProposalSet(proposals=tuple(items), n_points=n_points,
                       n_views=n_views)


class TestMatchAndAP:
    def test_perfect_predictor(self):
        gt = np.array([0] * 5 + [1] * 5 + [-1] * 2)
        preds = proposals([inst(range(0, 5), 1.0), inst(range(5, 10), 0.9)], 12)
        for theta in (0.25, 0.5, 0.95):
            ap, matches = match_and_ap(preds, gt, theta)
            assert ap == pytest.approx(1.0)
            assert len(matches) == 2

    def test_empty_predictions(self):
        gt = np.array([0, 0, 1, 1])
        ap, matches = match_and_ap(proposals([], 4), gt, 0.5)
        assert ap == 0.0 and matches == []

    def test_empty_gt_rejected(self):
        gt = np.full(4, -1)
        with pytest.raises(ValidationError):
            match_and_ap(proposals([inst([0, 1], 1.0)], 4), gt, 0.5)

    def test_hand_fixture(self):
        """3 GT instances (10 points each), 4 predictions with hand-set
        overlaps and confidences; AP at theta=0.5 computed by hand.

        GT: A=[0..9], B=[10..19], C=[20..29].
        P1 conf 0.9: A exactly            -> IoU 1.0   TP
        P2 conf 0.8: [10..15]+[40..43]    -> IoU vs B = 6/14 = 0.43  FP
        P3 conf 0.7: [10..17]             -> IoU vs B = 8/10 = 0.8   TP
        P4 conf 0.6: [20..24]             -> IoU vs C = 5/10 = 0.5   TP
        Ranked TP,FP,TP,TP:
          precision 1, 1/2, 2/3, 3/4; recall 1/3, 1/3, 2/3, 1
          envelope  1, 3/4, 3/4, 3/4
          AP = 1/3*1 + 1/3*3/4 + 1/3*3/4 = 1/3 + 1/2 = 0.8333...
        """
        gt = np.full(50, -1)
        gt[0:10] = 0
        gt[10:20] = 1
        gt[20:30] = 2
        preds = proposals([
            inst(range(0, 10), 0.9),
            inst(list(range(10, 16)) + list(range(40, 44)), 0.8),
            inst(range(10, 18), 0.7),
            inst(range(20, 25), 0.6),
        ], 50)
        ap, matches = match_and_ap(preds, gt, 0.5)
        assert ap == pytest.approx(1 / 3 + 1 / 2, abs=1e-9)
        assert {(p, g) for p, g, _ in matches} == {(0, 0), (2, 1), (3, 2)}

    def test_greedy_claims_best_unmatched(self):
        # high-confidence prediction takes the GT; the next one cannot reuse it
        gt = np.array([0] * 10)
        preds = proposals([inst(range(0, 10), 0.9), inst(range(0, 10), 0.5)], 10)
        ap, matches = match_and_ap(preds, gt, 0.5)
        assert len(matches) == 1
        # one TP at rank 1, one FP at rank 2: envelope keeps AP at 1.0
        assert ap == pytest.approx(1.0)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(0)
        gt = np.repeat(np.arange(4), 25)
        items = []
        for g in range(4):
            size = int(rng.integers(10, 25))
            pts = np.sort(rng.choice(np.arange(g * 25, g * 25 + 25), size=size,
                                     replace=False))
            items.append(inst(pts, float(rng.integers(1, 10)) / 10))
        preds = proposals(items, 100)
        last = 1.1
        for theta in (0.25, 0.5, 0.75, 0.95):
            ap, _ = match_and_ap(preds, gt, theta)
            assert ap <= last + 1e-12
            last = ap

    def test_trailing_fp_never_increases_ap(self):
        rng = np.random.default_rng(1)
        gt = np.repeat(np.arange(3), 20)
        items = [inst(np.arange(g * 20, g * 20 + 18), 0.5 + 0.1 * g)
                 for g in range(3)]
        base = match_and_ap(proposals(items, 70), gt, 0.5)[0]
        worse = items + [inst([60, 61, 62], 0.01)]
        with_fp = match_and_ap(proposals(worse, 70), gt, 0.5)[0]
        assert with_fp <= base + 1e-12

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(2)
        gt = np.repeat(np.arange(3), 15)
        items = [inst(np.arange(g * 15, g * 15 + int(rng.integers(8, 15))),
                      float(rng.integers(1, 10)) / 10) for g in range(3)]
        preds = proposals(items, 45)
        base = evaluate(preds, gt)
        remap = np.array([2, 0, 1])[gt]
        again = evaluate(preds, remap)
        assert base.mAP == pytest.approx(again.mAP)
        assert base.ap50 == pytest.approx(again.ap50)


class TestEvaluate:
    def test_report_fields(self):
        gt = np.array([0] * 5 + [1] * 5)
        preds = proposals([inst(range(0, 5), 1.0), inst(range(5, 10), 0.9)], 10)
        rep = evaluate(preds, gt)
        assert rep.mAP == pytest.approx(1.0)
        assert rep.ap50 == pytest.approx(1.0)
        assert rep.ap25 == pytest.approx(1.0)
        assert rep.instance_count == 2
        assert len(rep.ap_per_threshold) == len(EvalConfig().iou_thresholds)

    def test_single_all_points_prediction(self):
        # one blob prediction over a 2-instance scene: matches the larger GT
        # at low thresholds only
        gt = np.array([0] * 30 + [1] * 10)
        preds = proposals([inst(range(0, 40), 1.0)], 40)
        rep = evaluate(preds, gt)
        # IoU vs A = 30/40 = 0.75, vs B = 0.25; match A while theta <= 0.75
        assert rep.ap25 == pytest.approx(0.5)  # recall 1/2, precision 1
        assert rep.ap_per_threshold[0.75] == pytest.approx(0.5)
        assert rep.ap_per_threshold[0.8] == 0.0

    def test_mAP_needs_standard_grid(self):
        with pytest.raises(ValidationError):
            EvalConfig(iou_thresholds=(0.5, 0.75))

    def test_json_report(self):
        gt = np.array([0] * 5)
        rep = evaluate(proposals([inst(range(5), 1.0)], 5), gt)
        doc = rep.to_json()
        assert '"mAP": 1.0' in doc


class TestPatchDrop:
    def make_masks(self, sizes, w=20, h=20, seed=0):
        rng = np.random.default_rng(seed)
        masks = []
        for i, s in enumerate(sizes, start=1):
            flat = rng.choice(w * h, size=s, replace=False)
            pix = np.zeros(w * h, bool)
            pix[flat] = True
            masks.append(Mask2D("v", i, pix.reshape(h, w)))
        return MaskSet(masks)

    def test_zero_is_identity(self):
        ms = self.make_masks([50, 80])
        out = patch_drop(ms, 0.0, rng_seed=1)
        for a, b in zip(ms, out):
            assert np.array_equal(a.pixels, b.pixels)

    def test_ninety_percent_of_hundred(self):
        ms = self.make_masks([100])
        out = patch_drop(ms, 90.0, rng_seed=1)
        assert out.get(1).area == 10

    def test_floor_of_fraction(self):
        ms = self.make_masks([7])
        out = patch_drop(ms, 50.0, rng_seed=1)
        assert out.get(1).area == 7 - 3  # floor(0.5 * 7) = 3 dropped

    def test_deterministic(self):
        ms = self.make_masks([64, 90])
        a = patch_drop(ms, 30.0, rng_seed=7)
        b = patch_drop(ms, 30.0, rng_seed=7)
        for x, y in zip(a, b):
            assert np.array_equal(x.pixels, y.pixels)

    def test_subset_of_original(self):
        ms = self.make_masks([120])
        out = patch_drop(ms, 60.0, rng_seed=3)
        assert not (out.get(1).pixels & ~ms.get(1).pixels).any()

    def test_invalid_percentage(self):
        ms = self.make_masks([10])
        with pytest.raises(ValidationError):
            patch_drop(ms, 100.0, rng_seed=0)
