"""Noise removal ahead of ground filtering.

Two stages: a statistical outlier filter driven by mean k-NN distances, and
density clustering that discards sparse clutter while keeping the connected
road structure intact.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .cloud import PointCloud

logger = logging.getLogger(__name__)

NOISE = -1


@dataclass(frozen=True)
class OutlierFilterParams:
    """k nearest neighbours and the width of the acceptance interval."""

    k: int = 8
    alpha: float = 2.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 2.0
    min_pts: int = 10

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")


def remove_statistical_outliers(
    cloud: PointCloud,
    params: OutlierFilterParams = OutlierFilterParams(),
    workers: int = -1,
) -> tuple[PointCloud, PointCloud]:
    """Drop points whose mean k-NN distance falls outside the global interval.

    For each point, the mean distance mu_i to its k nearest neighbours
    (excluding itself) is computed.  With mu and sigma the mean and standard
    deviation of all mu_i, a point is removed iff mu_i lies outside
    [mu - alpha*sigma, mu + alpha*sigma].  Both tails are trimmed: points in
    anomalously dense pockets are removed along with isolated ones.

    Returns
    -------
    (kept, removed), preserving the input order within each part.
    """
    n = len(cloud)
    if n <= params.k:
        raise ValueError(f"need more than k={params.k} points, got {n}")
    pts = cloud.xyz.astype(np.float64)
    tree = cKDTree(pts)
    # k+1 because the query set is the data set and self comes back at d=0
    dists, _ = tree.query(pts, k=params.k + 1, workers=workers)
    mu_i = dists[:, 1:].mean(axis=1)
    mu = mu_i.mean()
    sigma = mu_i.std()
    lo, hi = mu - params.alpha * sigma, mu + params.alpha * sigma
    keep = (mu_i >= lo) & (mu_i <= hi)
    logger.info(
        "outlier filter: removed %d of %d points (mu=%.3f sigma=%.3f)",
        int((~keep).sum()), n, mu, sigma,
    )
    return cloud.subset(keep), cloud.subset(~keep)


def _core_components(core_pts: np.ndarray, eps: float) -> np.ndarray:
    """Connected components of core points under distance <= eps.

    Exact, but avoids materializing the full neighbour graph: points are
    bucketed into grid cells whose diagonal is slightly below eps, so all
    cores sharing a cell are mutually reachable for free, and only nearby
    cell pairs need a min-distance check.
    """
    n = len(core_pts)
    cell = eps / np.sqrt(3.0) * (1.0 - 1e-9)
    keys = np.floor((core_pts - core_pts.min(axis=0)) / cell).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    ncell = len(uniq)
    order = np.argsort(inverse, kind="stable")
    starts = np.searchsorted(inverse[order], np.arange(ncell + 1))
    members = [order[starts[i]:starts[i + 1]] for i in range(ncell)]
    cell_of = {tuple(k): i for i, k in enumerate(uniq)}

    parent = np.arange(ncell)

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    # Offsets whose nearest-corner gap can still be within eps.  Only half
    # the neighbourhood is scanned; the other half is covered symmetrically.
    offsets = []
    for dx in range(-2, 3):
        for dy in range(-2, 3):
            for dz in range(-2, 3):
                if (dx, dy, dz) <= (0, 0, 0):
                    continue
                gap = np.sqrt(
                    max(abs(dx) - 1, 0) ** 2
                    + max(abs(dy) - 1, 0) ** 2
                    + max(abs(dz) - 1, 0) ** 2
                ) * cell
                if gap <= eps:
                    offsets.append((dx, dy, dz))

    for i in range(ncell):
        kx, ky, kz = uniq[i]
        pi = None
        for off in offsets:
            j = cell_of.get((kx + off[0], ky + off[1], kz + off[2]))
            if j is None:
                continue
            ri, rj = find(i), find(j)
            if ri == rj:
                continue
            if pi is None:
                pi = core_pts[members[i]]
            if (cdist(pi, core_pts[members[j]]) <= eps).any():
                parent[ri] = rj

    roots = np.fromiter((find(i) for i in range(ncell)), dtype=np.int64, count=ncell)
    comp = np.empty(n, dtype=np.int64)
    comp[:] = roots[inverse]
    return comp


def dbscan(cloud: PointCloud, params: DbscanParams = DbscanParams()) -> np.ndarray:
    """Density clustering with the standard core/border/noise semantics.

    A point is core iff it has at least ``min_pts`` neighbours within
    ``eps`` (itself included).  Core points reachable through chains of
    core neighbours share a cluster; a non-core point within eps of a core
    joins that core's cluster (ties resolved by the nearest core); all other
    points are labelled ``NOISE`` (-1).

    The partition of core points is a property of the data alone and does
    not depend on input order.  Cluster ids are assigned by ascending first
    member index, so labels are deterministic for a given cloud.
    """
    n = len(cloud)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    pts = cloud.xyz.astype(np.float64)
    tree = cKDTree(pts)
    counts = tree.query_ball_point(pts, params.eps, return_length=True, workers=-1)
    core = counts >= params.min_pts
    n_core = int(core.sum())
    if n_core == 0:
        return labels

    core_idx = np.nonzero(core)[0]
    comp = _core_components(pts[core_idx], params.eps)
    labels[core_idx] = comp

    border = np.nonzero(~core)[0]
    if len(border) > 0:
        core_tree = cKDTree(pts[core_idx])
        d, j = core_tree.query(pts[border], k=1, workers=-1)
        near = d <= params.eps
        labels[border[near]] = comp[j[near]]

    # stable relabel: cluster ids ordered by first occurrence
    clustered = labels != NOISE
    _, first = np.unique(labels[clustered], return_index=True)
    remap = {labels[clustered][i]: rank for rank, i in enumerate(np.sort(first))}
    labels[clustered] = np.array([remap[v] for v in labels[clustered]])
    logger.info(
        "dbscan: %d clusters, %d noise of %d points (eps=%.2f min_pts=%d)",
        len(remap), int((labels == NOISE).sum()), n, params.eps, params.min_pts,
    )
    return labels


def drop_small_clusters(
    cloud: PointCloud, labels: np.ndarray, min_size: int
) -> PointCloud:
    """Keep only points whose cluster has at least ``min_size`` members.

    Noise points never survive.  Input order is preserved.
    """
    labels = np.asarray(labels)
    if labels.shape != (len(cloud),):
        raise ValueError("labels must have one entry per point")
    keep = np.zeros(len(cloud), dtype=bool)
    clustered = labels != NOISE
    if clustered.any():
        ids, sizes = np.unique(labels[clustered], return_counts=True)
        big = set(ids[sizes >= min_size].tolist())
        keep = np.array([v in big for v in labels.tolist()]) & clustered
    return cloud.subset(keep)
