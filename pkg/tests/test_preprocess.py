from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidar_roads.cloud import PointCloud
from lidar_roads.preprocess import (
    NOISE,
    DbscanParams,
    OutlierFilterParams,
    dbscan,
    drop_small_clusters,
    remove_statistical_outliers,
)

from _oracles import brute_dbscan, brute_knn_means


def _lattice(n: int = 10) -> np.ndarray:
    xs, ys = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float))
    return np.column_stack([xs.ravel(), ys.ravel(), np.zeros(n * n)])


def _blob_cloud(rng: np.random.Generator, n_blobs: int = 3) -> PointCloud:
    parts = []
    for _ in range(n_blobs):
        centre = rng.uniform(0, 40, 3)
        parts.append(rng.normal(centre, 1.0, (int(rng.integers(8, 40)), 3)))
    parts.append(rng.uniform(0, 40, (int(rng.integers(3, 15)), 3)))
    return PointCloud(np.vstack(parts))


class TestOutlierFilter:
    def test_lattice_corners_trimmed(self):
        """On a 10x10 unit lattice with k=4, the corner points are the
        dense-interval outliers: their mean 4-NN distance is (2 + sqrt(2))/4
        ~ 1.3536, about 3.9 sigma above the global mean, so the two-sided
        alpha=2 interval removes exactly the four corners."""
        cloud = PointCloud(_lattice())
        kept, removed = remove_statistical_outliers(
            cloud, OutlierFilterParams(k=4, alpha=2.0)
        )
        removed_xy = {(float(p[0]), float(p[1])) for p in removed.xyz}
        assert removed_xy == {(0.0, 0.0), (9.0, 0.0), (0.0, 9.0), (9.0, 9.0)}
        assert len(kept) == 96

    def test_matches_brute_force_interval(self):
        rng = np.random.default_rng(5)
        for trial in range(10):
            xyz = rng.uniform(0, 10, (int(rng.integers(10, 120)), 3))
            k = int(rng.integers(2, 8))
            alpha = float(rng.uniform(0.5, 3.0))
            cloud = PointCloud(xyz)
            kept, removed = remove_statistical_outliers(
                cloud, OutlierFilterParams(k=k, alpha=alpha)
            )
            mu_i = brute_knn_means(cloud.xyz, k)
            lo = mu_i.mean() - alpha * mu_i.std()
            hi = mu_i.mean() + alpha * mu_i.std()
            want_keep = (mu_i >= lo) & (mu_i <= hi)
            assert len(kept) == int(want_keep.sum()), f"trial {trial}"
            assert np.array_equal(kept.xyz, cloud.xyz[want_keep])

    def test_far_point_removed(self):
        xyz = np.vstack([_lattice(), [[30.0, 30.0, 0.0]]])
        cloud = PointCloud(xyz)
        _kept, removed = remove_statistical_outliers(
            cloud, OutlierFilterParams(k=4, alpha=2.0)
        )
        assert [30.0, 30.0, 0.0] in removed.xyz.tolist()

    def test_order_preserved(self):
        rng = np.random.default_rng(9)
        cloud = PointCloud(rng.uniform(0, 5, (50, 3)))
        kept, _ = remove_statistical_outliers(cloud, OutlierFilterParams(k=3))
        mu_i = brute_knn_means(cloud.xyz, 3)
        keep = np.abs(mu_i - mu_i.mean()) <= 2.0 * mu_i.std() + 1e-12
        assert np.array_equal(kept.xyz, cloud.xyz[keep])

    def test_needs_more_points_than_k(self):
        with pytest.raises(ValueError, match="more than k"):
            remove_statistical_outliers(
                PointCloud(np.zeros((4, 3))), OutlierFilterParams(k=4)
            )

    def test_params_validated(self):
        with pytest.raises(ValueError):
            OutlierFilterParams(k=0)
        with pytest.raises(ValueError):
            OutlierFilterParams(alpha=0.0)


class TestDbscan:
    def test_matches_brute_force_on_random_clouds(self):
        rng = np.random.default_rng(17)
        for trial in range(15):
            cloud = _blob_cloud(rng)
            eps = float(rng.uniform(0.8, 3.0))
            min_pts = int(rng.integers(3, 10))
            got = dbscan(cloud, DbscanParams(eps=eps, min_pts=min_pts))
            want = brute_dbscan(cloud.xyz, eps, min_pts)
            _assert_dbscan_equivalent(cloud.xyz, got, want, eps, min_pts, trial)

    def test_two_separated_blobs(self):
        a = np.random.default_rng(0).normal([0, 0, 0], 0.3, (30, 3))
        b = np.random.default_rng(1).normal([100, 0, 0], 0.3, (30, 3))
        labels = dbscan(PointCloud(np.vstack([a, b])), DbscanParams(eps=2, min_pts=5))
        assert set(labels[:30]) == {0}
        assert set(labels[30:]) == {1}

    def test_sparse_points_are_noise(self):
        xyz = np.array([[0, 0, 0], [50, 0, 0], [0, 50, 0]], dtype=float)
        labels = dbscan(PointCloud(xyz), DbscanParams(eps=2, min_pts=2))
        assert np.array_equal(labels, [NOISE, NOISE, NOISE])

    def test_labels_contiguous_and_first_occurrence_ordered(self):
        rng = np.random.default_rng(23)
        cloud = _blob_cloud(rng, n_blobs=4)
        labels = dbscan(cloud, DbscanParams(eps=2.0, min_pts=5))
        seen = [lab for lab in labels if lab != NOISE]
        uniq = sorted(set(seen))
        assert uniq == list(range(len(uniq)))
        first_index = {lab: int(np.nonzero(labels == lab)[0][0]) for lab in uniq}
        ordered = sorted(uniq, key=lambda lab: first_index[lab])
        assert ordered == uniq

    def test_core_count_is_self_inclusive(self):
        # three collinear points within eps: each neighbourhood holds all
        # three, so min_pts=3 makes every point core
        xyz = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
        labels = dbscan(PointCloud(xyz), DbscanParams(eps=2.5, min_pts=3))
        assert np.array_equal(labels, [0, 0, 0])

    def test_params_validated(self):
        with pytest.raises(ValueError):
            DbscanParams(eps=0.0)
        with pytest.raises(ValueError):
            DbscanParams(min_pts=0)


def _assert_dbscan_equivalent(xyz, got, want, eps, min_pts, trial):
    """Same noise set, same core partition; borders may differ in cluster."""
    dist = np.sqrt(((xyz[:, None, :] - xyz[None, :, :]) ** 2).sum(axis=2))
    core = (dist <= eps).sum(axis=1) >= min_pts
    assert np.array_equal(got == NOISE, want == NOISE), f"trial {trial}: noise sets"
    core_idx = np.nonzero(core)[0]
    for i in core_idx:
        same_got = got[core_idx] == got[i]
        same_want = want[core_idx] == want[i]
        assert np.array_equal(same_got, same_want), f"trial {trial}: core partition"
    border = (got != NOISE) & ~core
    for i in np.nonzero(border)[0]:
        cluster_cores = core_idx[got[core_idx] == got[i]]
        assert dist[i, cluster_cores].min() <= eps, f"trial {trial}: border {i}"


class TestDropSmallClusters:
    def test_small_clusters_and_noise_dropped(self):
        xyz = np.zeros((7, 3))
        labels = np.array([0, 0, 0, 1, 1, NOISE, NOISE])
        cloud = PointCloud(np.arange(21, dtype=float).reshape(7, 3))
        out = drop_small_clusters(cloud, labels, min_size=3)
        assert np.array_equal(out.xyz, cloud.xyz[:3])

    def test_noise_never_kept_even_if_numerous(self):
        cloud = PointCloud(np.zeros((5, 3)))
        labels = np.full(5, NOISE)
        assert len(drop_small_clusters(cloud, labels, min_size=1)) == 0

    def test_mismatched_labels_rejected(self):
        with pytest.raises(ValueError):
            drop_small_clusters(PointCloud(np.zeros((3, 3))), np.zeros(2, dtype=int), 1)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31), min_pts=st.integers(2, 8))
def test_dbscan_core_points_never_noise(seed, min_pts):
    rng = np.random.default_rng(seed)
    cloud = _blob_cloud(rng)
    eps = 1.5
    labels = dbscan(cloud, DbscanParams(eps=eps, min_pts=min_pts))
    dist = np.sqrt(((cloud.xyz[:, None, :].astype(np.float64)
                     - cloud.xyz[None, :, :].astype(np.float64)) ** 2).sum(axis=2))
    core = (dist <= eps).sum(axis=1) >= min_pts
    assert (labels[core] != NOISE).all()
    assert (labels >= NOISE).all()
