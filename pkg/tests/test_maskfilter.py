"""Superpoint-visibility sets and co-occurrence scoring."""

import numpy as np
import pytest

from liftseg.errors import PipelineError, ValidationError
from liftseg.maskfilter import (FilterConfig, MaskSuperpointTable, build_table,
                                cooccurrence_scores, filter_masks,
                                visible_superpoints)
from liftseg.projection import MappingConfig, Strategy, ViewMapping
from liftseg.scene import Mask2D, MaskSet, SuperpointPartition


def hand_mapping(view_id, n, visible_idx, pixels, w=8, h=8):
    visible = np.zeros(n, dtype=bool)
    visible[list(visible_idx)] = True
    pix = np.full((n, 2), -1, dtype=np.int64)
    for i, (u, v) in pixels.items():
        pix[i] = (u, v)
    return ViewMapping(view_id=view_id, width=w, height=h,
                       depth=np.full((h, w), np.inf), visible=visible,
                       pixel=pix, z=np.ones(n),
                       strategy=Strategy.OCCLUSION_AWARE, tau_vis=0.1)


def raster(w, h, coords):
    pix = np.zeros((h, w), dtype=bool)
    for u, v in coords:
        pix[v, u] = True
    return pix


class TestVisibleSuperpoints:
    def make_fixture(self):
        # 20 points over 4 superpoints of 5 points each
        labels = np.repeat(np.arange(4), 5)
        part = SuperpointPartition(labels=labels, superpoint_count=4)
        return part

    def test_full_containment(self):
        part = self.make_fixture()
        # every point of superpoint 0 visible at pixels inside the mask
        mapping = hand_mapping("v", 20, range(5), {i: (i, 0) for i in range(5)})
        mask = Mask2D("v", 1, raster(8, 8, [(i, 0) for i in range(5)]))
        got = visible_superpoints(mapping, mask, part, frac=0.5)
        assert list(got) == [0]

    def test_exact_half_excluded(self):
        part = self.make_fixture()
        # superpoint 0 has 10 of... exactly 5 of 10? use frac boundary:
        # 5-point superpoint with 2 qualifying points at frac=0.4 -> 0.4 not > 0.4
        mapping = hand_mapping("v", 20, [0, 1], {0: (0, 0), 1: (1, 0)})
        mask = Mask2D("v", 1, raster(8, 8, [(0, 0), (1, 0)]))
        got = visible_superpoints(mapping, mask, part, frac=0.4)
        assert got.size == 0  # strict > per the association rule
        got = visible_superpoints(mapping, mask, part, frac=0.39)
        assert list(got) == [0]

    def test_hand_enumerated_sets(self):
        # 40-point scene: 4 superpoints x 10 points; two masks in one view
        labels = np.repeat(np.arange(4), 10)
        part = SuperpointPartition(labels=labels, superpoint_count=4)
        visible = list(range(10)) + list(range(10, 16)) + list(range(20, 30))
        pixels = {}
        for i in range(10):
            pixels[i] = (0, i % 8)        # sp0 -> column 0
        for i in range(10, 16):
            pixels[i] = (2, i % 8)        # sp1 (6 visible) -> column 2
        for i in range(20, 30):
            pixels[i] = (5, i % 8)        # sp2 -> column 5
        mapping = hand_mapping("v", 40, visible, pixels)
        mask_a = Mask2D("v", 1, raster(8, 8, [(0, r) for r in range(8)]
                                       + [(2, r) for r in range(8)]))
        mask_b = Mask2D("v", 2, raster(8, 8, [(5, r) for r in range(8)]))
        # mask A: sp0 fully inside (10/10), sp1 6/10 -> both > 0.5
        assert list(visible_superpoints(mapping, mask_a, part)) == [0, 1]
        # mask B: sp2 only
        assert list(visible_superpoints(mapping, mask_b, part)) == [2]


def table_from_sets(sets):
    """sets: {(mask_id, view_id): iterable of superpoint ids}"""
    mask_ids = sorted({m for m, _v in sets})
    view_ids = sorted({v for _m, v in sets})
    data = {k: np.array(sorted(v), dtype=np.int64)
            for k, v in sets.items() if len(v)}
    return MaskSuperpointTable(mask_ids, view_ids, data)


class TestCooccurrence:
    def test_perfect_agreement(self):
        table = table_from_sets({(1, "a"): {0, 1}, (2, "a"): {0, 1}})
        scores = cooccurrence_scores(table, n_masks=2, n_views=1)
        assert scores[1] == pytest.approx(1.0)
        assert scores[2] == pytest.approx(1.0)

    def test_disjoint_sets(self):
        table = table_from_sets({(1, "a"): {0}, (2, "a"): {1},
                                 (1, "b"): {0}, (2, "b"): {1}})
        scores = cooccurrence_scores(table, n_masks=2, n_views=2)
        assert scores[1] == 0.0 and scores[2] == 0.0

    def test_hand_fixture_three_masks_two_views(self):
        # view a: P1={A,B}, P2={B,C}, P3=empty
        # view b: P1={A},   P2={A,B,C}, P3={B}
        table = table_from_sets({
            (1, "a"): {0, 1}, (2, "a"): {1, 2}, (3, "a"): set(),
            (1, "b"): {0}, (2, "b"): {0, 1, 2}, (3, "b"): {1},
        })
        scores = cooccurrence_scores(table, n_masks=3, n_views=2)
        # c_1 = 1/4 * [ |{A,B} ^ {B,C}|/sqrt(4) + |{A} ^ {A,B,C}|/sqrt(3)
        #               + 0 + |{A} ^ {B}|/sqrt(1) ]
        c1 = 0.25 * (1 / 2 + 1 / np.sqrt(3))
        # c_2 = 1/4 * [ 1/2 + 1/sqrt(3) + 0 + |{A,B,C} ^ {B}|/sqrt(3) ]
        c2 = 0.25 * (1 / 2 + 1 / np.sqrt(3) + 1 / np.sqrt(3))
        # c_3 = 1/4 * [ 0 + |{B} ^ {A}|/1 + 0 + |{B} ^ {A,B,C}|/sqrt(3) ]
        c3 = 0.25 * (1 / np.sqrt(3))
        assert scores[1] == pytest.approx(c1, abs=1e-9)
        assert scores[2] == pytest.approx(c2, abs=1e-9)
        assert scores[3] == pytest.approx(c3, abs=1e-9)

    def test_single_mask_warns_and_passes(self):
        table = table_from_sets({(1, "a"): {0}})
        with pytest.warns(UserWarning):
            scores = cooccurrence_scores(table, n_masks=1, n_views=1)
        assert scores[1] == 1.0

    def test_range_property_random_tables(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            k = int(rng.integers(2, 6))
            t = int(rng.integers(1, 4))
            u = int(rng.integers(1, 8))
            sets = {}
            for m in range(k):
                for v in range(t):
                    size = int(rng.integers(0, u + 1))
                    sets[(m, f"v{v}")] = set(
                        rng.choice(u, size=size, replace=False).tolist())
            scores = cooccurrence_scores(table_from_sets(sets),
                                         n_masks=k, n_views=t)
            for val in scores.values():
                assert 0.0 <= val <= 1.0 + 1e-12

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        sets = {(m, f"v{v}"): set(rng.choice(6, size=rng.integers(0, 5),
                                             replace=False).tolist())
                for m in range(4) for v in range(2)}
        base = cooccurrence_scores(table_from_sets(sets), n_masks=4, n_views=2)
        shuffled = {(3 - m, v): s for (m, v), s in sets.items()}
        perm = cooccurrence_scores(table_from_sets(shuffled), n_masks=4,
                                   n_views=2)
        for m in range(4):
            assert base[m] == pytest.approx(perm[3 - m], abs=1e-12)

    def test_duplicating_a_mask_never_decreases_its_score(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            sets = {(m, f"v{v}"): set(rng.choice(6, size=rng.integers(1, 5),
                                                 replace=False).tolist())
                    for m in range(3) for v in range(2)}
            base = cooccurrence_scores(table_from_sets(sets), n_masks=3,
                                       n_views=2)
            dup = dict(sets)
            for v in range(2):
                dup[(3, f"v{v}")] = sets[(0, f"v{v}")]
            boosted = cooccurrence_scores(table_from_sets(dup), n_masks=4,
                                          n_views=2)
            assert boosted[0] >= base[0] - 1e-12


class TestFilter:
    def make_masks(self, ids):
        pix = np.ones((4, 4), dtype=bool)
        return MaskSet([Mask2D("v", i, pix) for i in ids])

    def test_threshold_keeps_top_two(self):
        masks = self.make_masks([1, 2, 3])
        scores = {1: 0.9, 2: 0.25, 3: 0.05}
        kept = filter_masks(masks, scores, FilterConfig(score_threshold=0.2))
        assert [m.mask_id for m in kept] == [1, 2]

    def test_zero_threshold_is_identity(self):
        masks = self.make_masks([1, 2, 3])
        scores = {1: 0.9, 2: 0.0, 3: 0.05}
        kept = filter_masks(masks, scores, FilterConfig(score_threshold=0.0))
        assert len(kept) == 3

    def test_all_removed_raises(self):
        masks = self.make_masks([1, 2])
        with pytest.raises(PipelineError):
            filter_masks(masks, {1: 0.01, 2: 0.02},
                         FilterConfig(score_threshold=0.5))

    def test_missing_scores_rejected(self):
        masks = self.make_masks([1, 2])
        with pytest.raises(ValidationError):
            filter_masks(masks, {1: 0.5}, FilterConfig())

    def test_idempotent_on_fixed_scores(self):
        masks = self.make_masks([1, 2, 3])
        scores = {1: 0.9, 2: 0.25, 3: 0.05}
        cfg = FilterConfig(score_threshold=0.2)
        once = filter_masks(masks, scores, cfg)
        twice = filter_masks(once, scores, cfg)
        assert [m.mask_id for m in once] == [m.mask_id for m in twice]


@pytest.mark.xfail(reason="On synthetic orbit corpora the literal visibility "
                          "co-occurrence score ranks union (under-segmented) "
                          "masks above clean ones: a bigger raster co-selects "
                          "more superpoints with every partner, which "
                          "outweighs the sqrt-size penalty (see decisions "
                          "ledger).", strict=False)
def test_injected_merged_mask_ranks_lowest_among_touching():
    from liftseg.projection import build_mappings
    from liftseg.synth import CorruptionConfig, SynthConfig, generate_scene, render_masks

    cfg = SynthConfig(rng_seed=1, object_count=6, camera_count=20,
                      corruption=CorruptionConfig(merge_mask_probability=0.15))
    scene, gt = generate_scene(cfg)
    masks, origins = render_masks(scene, gt, cfg)
    mappings = build_mappings(scene.cloud, list(scene.views), MappingConfig())
    table = build_table(masks, mappings, scene.partition)
    scores = cooccurrence_scores(table, n_masks=len(masks), n_views=20)
    checked = 0
    for m in masks:
        objs = origins[m.mask_id][1]
        if len(objs) < 2:
            continue
        touching = [scores[x.mask_id] for x in masks if x.mask_id != m.mask_id
                    and set(origins[x.mask_id][1]) & set(objs)]
        assert all(scores[m.mask_id] < t for t in touching)
        checked += 1
    assert checked > 0
