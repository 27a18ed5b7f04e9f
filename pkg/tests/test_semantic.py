"""Visibility-weighted feature aggregation and query ranking."""

import numpy as np
import pytest

from liftseg.errors import SemanticUndefinedError, ValidationError
from liftseg.projection import Strategy, ViewMapping
from liftseg.scene import PointSetInstance, ProposalSet, Provenance
from liftseg.semantic import (PixelFeatureSource, TextQuery,
                              aggregate_point_features, proposal_feature,
                              rank_by_query)


def mapping_with(view_id, n, pixel_of, w=4, h=4):
    visible = np.zeros(n, dtype=bool)
    pix = np.full((n, 2), -1, dtype=np.int64)
    for i, uv in pixel_of.items():
        visible[i] = True
        pix[i] = uv
    return ViewMapping(view_id=view_id, width=w, height=h,
                       depth=np.full((h, w), np.inf), visible=visible,
                       pixel=pix, z=np.ones(n),
                       strategy=Strategy.OCCLUSION_AWARE, tau_vis=0.1)


class TestAggregate:
    def test_single_view_exact(self):
        fmap = np.zeros((4, 4, 2))
        fmap[1, 2] = (0.3, 0.7)
        source = PixelFeatureSource({"a": fmap})
        mappings = {"a": mapping_with("a", 3, {0: (2, 1)})}
        feats, invisible = aggregate_point_features(mappings, source)
        assert np.allclose(feats[0], [0.3, 0.7])
        assert not invisible[0] and invisible[1] and invisible[2]

    def test_cancellation_flagged_degenerate(self):
        fa = np.zeros((4, 4, 2))
        fa[0, 0] = (1.0, 0.0)
        fb = np.zeros((4, 4, 2))
        fb[0, 0] = (-1.0, 0.0)
        source = PixelFeatureSource({"a": fa, "b": fb})
        mappings = {"a": mapping_with("a", 1, {0: (0, 0)}),
                    "b": mapping_with("b", 1, {0: (0, 0)})}
        feats, invisible = aggregate_point_features(mappings, source)
        assert np.allclose(feats[0], 0.0)
        assert not invisible[0]  # seen, but degenerate zero mean

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        n, w, h, d = 30, 6, 5, 4
        mappings = {}
        maps = {}
        for v in ("a", "b", "c"):
            vis = rng.random(n) < 0.6
            pix = {i: (int(rng.integers(0, w)), int(rng.integers(0, h)))
                   for i in range(n) if vis[i]}
            mappings[v] = mapping_with(v, n, pix, w=w, h=h)
            maps[v] = rng.normal(size=(h, w, d))
        source = PixelFeatureSource(maps)
        feats, invisible = aggregate_point_features(mappings, source)
        for i in range(n):
            acc, cnt = np.zeros(d), 0
            for v in ("a", "b", "c"):
                m = mappings[v]
                if m.visible[i]:
                    u, vv = m.pixel[i]
                    acc += maps[v][vv, u]
                    cnt += 1
            if cnt:
                assert np.allclose(feats[i], acc / cnt, atol=1e-12)
            else:
                assert invisible[i] and np.allclose(feats[i], 0.0)

    def test_view_permutation_commutes(self):
        rng = np.random.default_rng(1)
        n = 10
        maps = {v: rng.normal(size=(4, 4, 3)) for v in ("a", "b")}
        mappings = {v: mapping_with(v, n, {i: (i % 4, i % 4) for i in range(n)})
                    for v in ("a", "b")}
        f1, _ = aggregate_point_features(mappings, PixelFeatureSource(maps))
        rev = {"b": maps["b"], "a": maps["a"]}
        f2, _ = aggregate_point_features(mappings, PixelFeatureSource(rev))
        assert np.array_equal(f1, f2)

    def test_inconsistent_dims_rejected(self):
        with pytest.raises(ValidationError):
            PixelFeatureSource({"a": np.zeros((4, 4, 2)),
                                "b": np.zeros((4, 4, 3))})


class TestProposalFeature:
    def test_constant_mean(self):
        feats = np.tile([0.2, 0.8], (10, 1))
        inv = np.zeros(10, bool)
        p = PointSetInstance(points=np.arange(5),
                             provenance=Provenance("merged", ("v",)))
        assert np.allclose(proposal_feature(p, feats, inv), [0.2, 0.8])

    def test_midpoint(self):
        feats = np.zeros((4, 2))
        feats[0] = (1, 0)
        feats[1] = (0, 1)
        inv = np.zeros(4, bool)
        p = PointSetInstance(points=np.array([0, 1]),
                             provenance=Provenance("merged", ("v",)))
        assert np.allclose(proposal_feature(p, feats, inv), [0.5, 0.5])

    def test_invisible_points_excluded(self):
        feats = np.zeros((4, 2))
        feats[0] = (1, 0)
        inv = np.array([False, True, True, True])
        p = PointSetInstance(points=np.array([0, 1, 2]),
                             provenance=Provenance("merged", ("v",)))
        assert np.allclose(proposal_feature(p, feats, inv), [1.0, 0.0])

    def test_fully_invisible_proposal_errors(self):
        feats = np.zeros((4, 2))
        inv = np.ones(4, bool)
        p = PointSetInstance(points=np.array([0, 1]),
                             provenance=Provenance("merged", ("v",)))
        with pytest.raises(SemanticUndefinedError):
            proposal_feature(p, feats, inv)


class TestRanking:
    def props(self, k):
        return ProposalSet(
            proposals=tuple(PointSetInstance(points=np.array([i]),
                                             provenance=Provenance("merged",
                                                                   ("v",)))
                            for i in range(k)),
            n_points=k, n_views=1)

    def test_exact_match_ranks_first(self):
        feats = np.array([[1.0, 0], [0.5, 0.5], [0, 1.0]])
        ranking = rank_by_query(self.props(3), feats,
                                TextQuery("q", np.array([0.0, 1.0])))
        assert ranking[0][0] == 2
        assert ranking[0][1] == pytest.approx(1.0)

    def test_orthogonal_all_zero_stable_order(self):
        feats = np.array([[1.0, 0], [1.0, 0], [1.0, 0]])
        ranking = rank_by_query(self.props(3), feats,
                                TextQuery("q", np.array([0.0, 1.0])))
        assert [i for i, _s in ranking] == [0, 1, 2]
        assert all(abs(s) < 1e-12 for _i, s in ranking)

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        feats = rng.normal(size=(6, 4))
        q = TextQuery("q", rng.normal(size=4))
        base = [i for i, _ in rank_by_query(self.props(6), feats, q)]
        scaled = [i for i, _ in rank_by_query(self.props(6), feats * 37.5, q)]
        assert base == scaled

    def test_synthetic_retrieval_all_objects(self):
        from liftseg.pipeline import PipelineConfig, run_pipeline
        from liftseg.maskfilter import FilterConfig
        from liftseg.projection import MappingConfig, build_mappings
        from liftseg.scene import SceneBundle
        from liftseg.semantic import search
        from liftseg.synth import SynthConfig, generate_scene, pixel_feature_maps, render_masks

        cfg = SynthConfig(rng_seed=1, object_count=4, points_per_object=700,
                          camera_count=8, width=64, height=64)
        scene, gt = generate_scene(cfg)
        masks, _ = render_masks(scene, gt, cfg)
        scene = SceneBundle(cloud=scene.cloud, views=scene.views,
                            partition=scene.partition, features=scene.features,
                            masks=masks)
        pcfg = PipelineConfig(view_fraction=1.0,
                              mask_filter=FilterConfig(
                                  score_threshold=0.02,
                                  normalize_by_nonempty_views=True))
        res = run_pipeline(scene, pcfg)
        source = pixel_feature_maps(scene, gt, noise_sigma=0.0, rng_seed=0)
        mappings = build_mappings(scene.cloud, list(scene.views),
                                  MappingConfig())
        for o in range(4):
            ranking = search(res.proposals, mappings, source,
                             TextQuery(f"object {o}", gt.prototypes[o]))
            top = res.proposals.proposals[ranking[0][0]]
            assert (gt.instance_ids[top.points] == o).mean() >= 0.8
