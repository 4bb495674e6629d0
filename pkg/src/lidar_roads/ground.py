"""Ground extraction: grid chunking, per-chunk plane fitting, Z-band filtering.

The cloud is cut into square XY chunks.  Each chunk gets a RANSAC plane fit
and is classified by the plane's tilt and inlier ratio:

* ``vertical``    tilt above the cutoff, e.g. a building facade; dropped.
* ``pure-plane``  a clean ground patch; the plane inliers are kept.
* ``mixed``       ground plus structure; points within an adaptive low-Z
                  band (percentile anchor plus a fixed allowance) are kept.
* ``unordered``   no usable plane structure; the low-Z band is kept only
                  when it is dense enough to be more than stray clutter.

A trailing density pass removes isolated residues that survive per-chunk
filtering but connect to nothing.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .cloud import BoundingBox2D, PointCloud, bounding_box, concat
from .preprocess import DbscanParams, dbscan, drop_small_clusters

logger = logging.getLogger(__name__)

PURE_PLANE = "pure-plane"
MIXED = "mixed"
UNORDERED = "unordered"
VERTICAL = "vertical"

# A chunk is "mixed" rather than "unordered" when the low-Z band holds at
# least this fraction of its points, i.e. there is a dominant low mode.
_DOMINANT_BAND_FRACTION = 0.3


@dataclass(frozen=True)
class GroundFilterParams:
    chunk_size: float = 10.0
    ransac_distance: float = 0.3
    ransac_iters: int = 200
    max_tilt_deg: float = 60.0
    z_percentile: float = 0.10
    z_band: float = 0.30
    min_inlier_ratio: float = 0.8

    def __post_init__(self) -> None:
        if self.chunk_size <= 0:
            raise ValueError("chunk_size must be positive")
        if self.ransac_distance <= 0:
            raise ValueError("ransac_distance must be positive")
        if self.ransac_iters < 1:
            raise ValueError("ransac_iters must be >= 1")
        if not 0 < self.max_tilt_deg <= 90:
            raise ValueError("max_tilt_deg must be in (0, 90]")
        if not 0 <= self.z_percentile <= 1:
            raise ValueError("z_percentile must be in [0, 1]")
        if self.z_band < 0:
            raise ValueError("z_band must be non-negative")
        if not 0 < self.min_inlier_ratio <= 1:
            raise ValueError("min_inlier_ratio must be in (0, 1]")


@dataclass(frozen=True)
class GridChunk:
    """One occupied grid cell: tight member bounds, members, cell index."""

    bounds: BoundingBox2D
    points: PointCloud
    cell: tuple[int, int]


@dataclass(frozen=True)
class PlaneModel:
    """Plane n.p + d = 0 with unit normal and canonical orientation nz >= 0."""

    normal: np.ndarray
    d: float
    inlier_ratio: float

    def distances(self, xyz: np.ndarray) -> np.ndarray:
        """Unsigned point-plane distances."""
        return np.abs(np.asarray(xyz, dtype=np.float64) @ self.normal + self.d)


@dataclass(frozen=True)
class ChunkVerdict:
    kind: str
    kept: PointCloud


def partition_grid(cloud: PointCloud, chunk_size: float) -> list[GridChunk]:
    """Split the cloud into square XY cells of side ``chunk_size``.

    Cell index is ``floor((coord - min) / chunk_size)`` per axis, so a point
    exactly on an interior boundary lands in the higher cell; cells are
    right/top exclusive except the last, which absorbs the global maximum.
    Each chunk's bounds are the tight extent of its members.  Empty cells
    are omitted; chunks are returned in ascending (ix, iy) order.
    """
    if chunk_size <= 0:
        raise ValueError("chunk_size must be positive")
    if len(cloud) == 0:
        raise ValueError("cannot partition an empty cloud")
    box = bounding_box(cloud)
    nx = max(1, math.ceil(box.width / chunk_size))
    ny = max(1, math.ceil(box.height / chunk_size))
    xy = cloud.xyz[:, :2].astype(np.float64)
    ix = np.minimum(np.floor((xy[:, 0] - box.x_min) / chunk_size).astype(np.int64), nx - 1)
    iy = np.minimum(np.floor((xy[:, 1] - box.y_min) / chunk_size).astype(np.int64), ny - 1)
    flat = ix * ny + iy
    order = np.argsort(flat, kind="stable")
    keys, starts = np.unique(flat[order], return_index=True)
    starts = np.append(starts, len(flat))
    chunks = []
    for k, key in enumerate(keys):
        members = order[starts[k]:starts[k + 1]]
        sub = cloud.subset(np.sort(members))
        mx, my = sub.x, sub.y
        chunks.append(
            GridChunk(
                bounds=BoundingBox2D(float(mx.min()), float(mx.max()),
                                     float(my.min()), float(my.max())),
                points=sub,
                cell=(int(key // ny), int(key % ny)),
            )
        )
    return chunks


def _canonical(normal: np.ndarray) -> np.ndarray:
    """Flip the unit normal so nz > 0, or lexicographically positive if nz == 0."""
    if normal[2] < 0:
        return -normal
    if normal[2] == 0:
        for c in (normal[0], normal[1]):
            if c != 0:
                return normal if c > 0 else -normal
    return normal


def ransac_plane(
    points: PointCloud,
    distance: float,
    iters: int,
    seed: int | np.random.SeedSequence,
) -> PlaneModel:
    """Fit a plane by repeated 3-point sampling, keeping the best sample.

    Each iteration draws three distinct points, forms their plane and counts
    inliers within ``distance``.  The returned model is the sampled plane
    with the highest count (no refinement step); ties keep the earliest
    sample, so results are fully determined by ``seed``.

    Raises ValueError when fewer than 3 points are given or when every
    sampled triple is degenerate (collinear).
    """
    n = len(points)
    if n < 3:
        raise ValueError(f"plane fit needs >= 3 points, got {n}")
    if distance <= 0:
        raise ValueError("distance must be positive")
    pts = points.xyz.astype(np.float64)
    rng = np.random.default_rng(seed)
    best_count = -1
    best: tuple[np.ndarray, float] | None = None
    for _ in range(iters):
        i, j, k = rng.choice(n, size=3, replace=False)
        v1 = pts[j] - pts[i]
        v2 = pts[k] - pts[i]
        normal = np.cross(v1, v2)
        norm = np.linalg.norm(normal)
        scale = np.linalg.norm(v1) * np.linalg.norm(v2)
        if scale == 0 or norm <= 1e-9 * scale:
            continue
        normal = _canonical(normal / norm)
        d = -float(normal @ pts[i])
        count = int((np.abs(pts @ normal + d) <= distance).sum())
        if count > best_count:
            best_count = count
            best = (normal, d)
    if best is None:
        raise ValueError("all RANSAC samples were degenerate")
    normal, d = best
    return PlaneModel(normal=normal, d=d, inlier_ratio=best_count / n)


def tilt_angle(plane: PlaneModel) -> float:
    """Angle in degrees between the plane normal and vertical, in [0, 90]."""
    nz = min(1.0, abs(float(plane.normal[2])))
    return math.degrees(math.acos(nz))


def _low_z_band(z: np.ndarray, params: GroundFilterParams) -> np.ndarray:
    anchor = np.quantile(z.astype(np.float64), params.z_percentile)
    return z <= anchor + params.z_band


def filter_chunk(
    chunk: GridChunk,
    params: GroundFilterParams,
    seed: int | np.random.SeedSequence,
    min_band_pts: int = 10,
) -> ChunkVerdict:
    """Classify one chunk and select its ground points.

    Decision order: fewer than 3 points passes through as ``unordered``;
    a plane steeper than ``max_tilt_deg`` (ties kept as ground) marks the
    chunk ``vertical`` and drops everything; a flat, well-supported plane
    (inlier ratio at or above ``min_inlier_ratio``) is ``pure-plane`` and
    keeps the inliers; otherwise the adaptive low-Z band decides.  The band
    spans up to ``z_band`` above the ``z_percentile`` anchor.  When the band
    holds a dominant share of the chunk the verdict is ``mixed`` and the
    band is kept; otherwise ``unordered``, keeping the band only when it has
    at least ``min_band_pts`` members.

    Kept sets grow monotonically with ``z_band``: every verdict that
    consults the band keeps a superset of what a narrower band would keep.
    """
    pts = chunk.points
    if len(pts) < 3:
        return ChunkVerdict(kind=UNORDERED, kept=pts)
    plane = ransac_plane(pts, params.ransac_distance, params.ransac_iters, seed)
    tilt = tilt_angle(plane)
    if tilt > params.max_tilt_deg:
        return ChunkVerdict(kind=VERTICAL, kept=pts.subset(np.zeros(len(pts), bool)))
    if plane.inlier_ratio >= params.min_inlier_ratio:
        inliers = plane.distances(pts.xyz) <= params.ransac_distance
        return ChunkVerdict(kind=PURE_PLANE, kept=pts.subset(inliers))
    band = _low_z_band(pts.z, params)
    if band.mean() >= _DOMINANT_BAND_FRACTION:
        return ChunkVerdict(kind=MIXED, kept=pts.subset(band))
    if int(band.sum()) >= min_band_pts:
        return ChunkVerdict(kind=UNORDERED, kept=pts.subset(band))
    return ChunkVerdict(kind=UNORDERED, kept=pts.subset(np.zeros(len(pts), bool)))


def filter_ground(
    cloud: PointCloud,
    params: GroundFilterParams = GroundFilterParams(),
    seed: int = 0,
    dbscan_params: DbscanParams | None = None,
) -> PointCloud:
    """Run the per-chunk filter over the whole cloud and clean up residues.

    Each chunk draws its RANSAC samples from an independent stream derived
    from ``(seed, cell index)``, so results do not depend on chunk
    iteration order.  Kept chunks are concatenated in ascending cell order,
    then a density pass (``dbscan_params``, defaulting to eps=2, min_pts=10)
    discards residues that are noise or form clusters below ``min_pts``.
    """
    if len(cloud) == 0:
        raise ValueError("cannot ground-filter an empty cloud")
    dbp = dbscan_params if dbscan_params is not None else DbscanParams()
    chunks = partition_grid(cloud, params.chunk_size)
    kept_parts = []
    census: dict[str, int] = {}
    for chunk in chunks:
        chunk_seed = np.random.SeedSequence((seed, chunk.cell[0], chunk.cell[1]))
        verdict = filter_chunk(chunk, params, chunk_seed)
        census[verdict.kind] = census.get(verdict.kind, 0) + 1
        if len(verdict.kept) > 0:
            kept_parts.append(verdict.kept)
    logger.info("ground filter chunk census: %s", census)
    if not kept_parts:
        return PointCloud(np.empty((0, 3), dtype=np.float32))
    kept = concat(kept_parts)
    labels = dbscan(kept, dbp)
    cleaned = drop_small_clusters(kept, labels, dbp.min_pts)
    logger.info(
        "ground filter: %d -> %d points (%d dropped by residue pass)",
        len(cloud), len(cleaned), len(kept) - len(cleaned),
    )
    return cleaned


def add_alignment_corners(
    road: PointCloud, original_bbox: BoundingBox2D, z: float
) -> PointCloud:
    """Append the four corner points of the original extent at height ``z``.

    Rasterization later excludes these anchors from the foreground but uses
    them to pin the image extent, so rasters derived from filtered clouds
    stay aligned with rasters of the originals.  The corners are appended
    after the road points in the fixed order of ``BoundingBox2D.corners``.
    """
    corners_xy = original_bbox.corners()
    corners = np.column_stack([corners_xy, np.full(4, z)])
    return concat([road, PointCloud(corners)])
