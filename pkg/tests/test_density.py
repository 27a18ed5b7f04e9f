"""Density clustering against brute-force oracles and generated fixtures."""

import numpy as np
import pytest
from scipy.sparse.csgraph import minimum_spanning_tree

from liftseg.density import (ClusterConfig, core_distances, extract_clusters,
                             hdbscan, mutual_reachability_mst)


def adjusted_rand_index(a, b):
    """Small self-contained ARI for label comparisons."""
    a = np.asarray(a)
    b = np.asarray(b)
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    table = np.zeros((len(ua), len(ub)), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    comb = lambda x: x * (x - 1) / 2.0
    sum_ij = comb(table).sum()
    sum_a = comb(table.sum(axis=1)).sum()
    sum_b = comb(table.sum(axis=0)).sum()
    total = comb(len(a))
    expected = sum_a * sum_b / total
    max_idx = (sum_a + sum_b) / 2.0
    return (sum_ij - expected) / (max_idx - expected)


def two_blobs(seed=42, n=200, separation=10.0):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, 1.0, size=(n, 3))
    b = rng.normal(0, 1.0, size=(n, 3)) + np.array([separation, 0.0, 0.0])
    labels = np.concatenate([np.zeros(n, np.int64), np.ones(n, np.int64)])
    return np.vstack([a, b]), labels


class TestCoreDistances:
    def test_collinear_hand_geometry(self):
        pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
        assert np.allclose(core_distances(pts, 1), [1.0, 1.0, 1.0])

    def test_k_too_large_all_infinite(self):
        pts = np.zeros((3, 3))
        assert np.isinf(core_distances(pts, 5)).all()

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(300, 3))
        got = core_distances(pts, 10)
        d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
        oracle = np.sort(d, axis=1)[:, 10]
        assert np.array_equal(got, oracle)


class TestMST:
    def test_two_points(self):
        pts = np.array([[0.0, 0, 0], [3.0, 0, 0]])
        core = np.array([1.0, 5.0])
        mst = mutual_reachability_mst(pts, core)
        assert mst.shape == (1, 3)
        assert mst[0, 2] == 5.0  # max(core_i, core_j, d)

    def test_square_hand_computation(self):
        # unit square, k=1: core distances are all 1 (nearest side neighbor);
        # mutual reachability = max(1, 1, d); MST uses three side edges
        pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 1, 0], [0.0, 1, 0]])
        core = core_distances(pts, 1)
        assert np.allclose(core, 1.0)
        mst = mutual_reachability_mst(pts, core)
        assert mst[:, 2].sum() == pytest.approx(3.0)

    def test_matches_dense_graph_oracle(self):
        rng = np.random.default_rng(7)
        for trial in range(5):
            pts = rng.normal(size=(200, 3))
            core = core_distances(pts, 15)
            mst = mutual_reachability_mst(pts, core)
            d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
            mrd = np.maximum(d, np.maximum(core[:, None], core[None, :]))
            np.fill_diagonal(mrd, 0.0)
            ref = minimum_spanning_tree(mrd).toarray()
            ref_w = np.sort(ref[ref > 0])
            assert np.array_equal(np.sort(mst[:, 2]), ref_w)


class TestExtract:
    def test_fewer_points_than_mu_all_noise(self):
        pts = np.random.default_rng(0).normal(size=(10, 3))
        res = hdbscan(pts, ClusterConfig(min_cluster_size=30))
        assert res.n_clusters == 0
        assert (res.labels == -1).all()

    def test_two_blobs(self):
        pts, gen = two_blobs()
        res = hdbscan(pts, ClusterConfig(min_cluster_size=30))
        assert res.n_clusters == 2
        assert adjusted_rand_index(res.labels, gen) >= 0.99

    def test_single_blob(self):
        pts, _ = two_blobs()
        res = hdbscan(pts[:200], ClusterConfig(min_cluster_size=30))
        assert res.n_clusters == 1
        assert (res.labels == 0).mean() >= 0.95

    def test_no_cluster_smaller_than_mu(self):
        rng = np.random.default_rng(9)
        pts = rng.uniform(0, 4, size=(500, 3))
        res = hdbscan(pts, ClusterConfig(min_cluster_size=25))
        for c in range(res.n_clusters):
            assert (res.labels == c).sum() >= 25

    def test_infinite_core_forces_noise(self):
        pts = np.random.default_rng(0).normal(size=(5, 3))
        core = np.full(5, np.inf)
        mst = mutual_reachability_mst(pts, core)
        res = extract_clusters(mst, mu=2, n_points=5)
        assert res.n_clusters == 0


class TestInvariances:
    def test_rigid_motion(self):
        pts, _ = two_blobs(seed=3)
        base = hdbscan(pts, ClusterConfig(min_cluster_size=30))
        angle = 0.7
        rot = np.array([[np.cos(angle), -np.sin(angle), 0],
                        [np.sin(angle), np.cos(angle), 0], [0, 0, 1.0]])
        moved = pts @ rot.T + np.array([5.0, -2.0, 1.0])
        res = hdbscan(moved, ClusterConfig(min_cluster_size=30))
        assert adjusted_rand_index(base.labels, res.labels) >= 0.99

    def test_uniform_scale(self):
        pts, _ = two_blobs(seed=4)
        base = hdbscan(pts, ClusterConfig(min_cluster_size=30))
        res = hdbscan(pts * 7.5, ClusterConfig(min_cluster_size=30))
        assert adjusted_rand_index(base.labels, res.labels) >= 0.99

    def test_deterministic(self):
        pts, _ = two_blobs(seed=5)
        a = hdbscan(pts, ClusterConfig(min_cluster_size=30))
        b = hdbscan(pts, ClusterConfig(min_cluster_size=30))
        assert np.array_equal(a.labels, b.labels)


class TestConfig:
    def test_mu_floor(self):
        from liftseg.errors import ValidationError
        with pytest.raises(ValidationError):
            ClusterConfig(min_cluster_size=1)

    def test_min_samples_default(self):
        assert ClusterConfig(min_cluster_size=30).k == 30
        assert ClusterConfig(min_cluster_size=30, min_samples=10).k == 10
