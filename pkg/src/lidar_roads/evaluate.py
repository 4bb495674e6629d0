"""Cloud-to-cloud IoU, the TP/FP/FN overlay image and reduction statistics.

The IoU metric voxel-downsamples both clouds, then counts a downsampled
point of the first cloud as intersecting when it has a neighbour in the
second within a distance threshold; the union follows by inclusion-
exclusion over the two downsampled sizes.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, bounding_box, voxel_downsample
from .raster import Georef, Raster

logger = logging.getLogger(__name__)

# Overlay class codes and their palette (background, TP, FP, FN).
OVERLAY_BACKGROUND = 0
OVERLAY_TP = 1
OVERLAY_FP = 2
OVERLAY_FN = 3
OVERLAY_PALETTE = {
    OVERLAY_BACKGROUND: (0, 0, 0),
    OVERLAY_TP: (0, 200, 0),
    OVERLAY_FP: (220, 40, 40),
    OVERLAY_FN: (40, 90, 220),
}


@dataclass(frozen=True)
class IoUParams:
    voxel: float = 0.5
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.voxel <= 0:
            raise ValueError("voxel must be positive")
        if self.threshold < 0:
            raise ValueError("threshold must be non-negative")


@dataclass(frozen=True)
class IoUReport:
    """Result of one IoU evaluation.

    ``n1``/``n2`` are the downsampled sizes actually matched, so
    ``union == n1 + n2 - intersection`` holds exactly.
    """

    iou: float
    intersection: int
    union: int
    n1: int
    n2: int
    voxel: float
    threshold: float
    elapsed_s: float

    def to_json(self) -> dict:
        return {
            "iou": self.iou,
            "intersection": self.intersection,
            "union": self.union,
            "n1": self.n1,
            "n2": self.n2,
            "voxel": self.voxel,
            "threshold": self.threshold,
            "elapsed_s": self.elapsed_s,
        }


def iou(
    cloud1: PointCloud, cloud2: PointCloud, params: IoUParams = IoUParams()
) -> IoUReport:
    """Overlap ratio of two clouds after voxel downsampling.

    Both clouds are reduced to voxel centroids (each anchored at its own
    minimum corner).  A centroid of the first cloud is in the intersection
    iff some centroid of the second lies within ``threshold`` (inclusive);
    the union is ``n1 + n2 - intersection``.  Identical clouds score 1.0,
    clouds farther apart than the threshold everywhere score 0.0.

    Raises ValueError when either cloud is empty.
    """
    if len(cloud1) == 0 or len(cloud2) == 0:
        raise ValueError("IoU requires two non-empty clouds")
    start = time.perf_counter()
    d1 = voxel_downsample(cloud1, params.voxel).xyz.astype(np.float64)
    d2 = voxel_downsample(cloud2, params.voxel).xyz.astype(np.float64)
    tree = cKDTree(d2)
    dist, _ = tree.query(d1, k=1, workers=-1)
    intersection = int((dist <= params.threshold).sum())
    union = len(d1) + len(d2) - intersection
    elapsed = time.perf_counter() - start
    report = IoUReport(
        iou=intersection / union,
        intersection=intersection,
        union=union,
        n1=len(d1),
        n2=len(d2),
        voxel=params.voxel,
        threshold=params.threshold,
        elapsed_s=elapsed,
    )
    logger.info("iou=%.4f (%d/%d), %.3fs", report.iou, intersection, union, elapsed)
    return report


def overlay(
    truth_mask: Raster, extracted: PointCloud, georef: Georef | None = None
) -> np.ndarray:
    """Classify each pixel of the truth grid against the extracted cloud.

    The cloud is rasterized onto the mask's grid (``georef`` may override
    the frame but must describe the same grid shape).  Classes: 0
    background, 1 true positive (mask and cloud), 2 false positive (cloud
    only), 3 false negative (mask only); together the nonzero classes
    partition the union of the two foregrounds.  An empty extraction has
    no foreground, so every mask pixel comes out false-negative.

    Raises ValueError when a non-empty cloud's extent is disjoint from
    the mask.
    """
    frame = georef if georef is not None else truth_mask.georef
    if (frame.width, frame.height) != (truth_mask.georef.width, truth_mask.georef.height):
        raise ValueError("override georef must match the mask grid shape")
    cloud_fg = np.zeros((frame.height, frame.width), dtype=bool)
    if len(extracted) > 0:
        box = bounding_box(extracted)
        ext = frame.extent()
        if (box.x_max < ext.x_min or box.x_min > ext.x_max
                or box.y_max < ext.y_min or box.y_min > ext.y_max):
            raise ValueError("extracted cloud extent is disjoint from the mask")
        cols, rows = frame.world_to_pixel(extracted.x, extracted.y)
        inside = (cols >= 0) & (cols < frame.width) & (rows >= 0) & (rows < frame.height)
        cloud_fg[rows[inside], cols[inside]] = True
    mask_fg = truth_mask.foreground()
    classes = np.zeros(cloud_fg.shape, dtype=np.uint8)
    classes[mask_fg & cloud_fg] = OVERLAY_TP
    classes[~mask_fg & cloud_fg] = OVERLAY_FP
    classes[mask_fg & ~cloud_fg] = OVERLAY_FN
    return classes


@dataclass(frozen=True)
class RunStats:
    """Point-count bookkeeping for one pipeline run."""

    original_points: int
    kept_points: int
    reduction_pct: float
    elapsed_s: float

    def to_json(self) -> dict:
        return {
            "original_points": self.original_points,
            "kept_points": self.kept_points,
            "reduction_pct": self.reduction_pct,
            "elapsed_s": self.elapsed_s,
        }


def run_stats(original: int, kept: int, elapsed: float) -> RunStats:
    """Reduction of ``kept`` relative to ``original`` as a percentage."""
    if original <= 0:
        raise ValueError("original point count must be positive")
    if kept < 0 or kept > original:
        raise ValueError("kept count must lie in [0, original]")
    if elapsed < 0:
        raise ValueError("elapsed time must be non-negative")
    return RunStats(
        original_points=original,
        kept_points=kept,
        reduction_pct=100.0 * (1.0 - kept / original),
        elapsed_s=elapsed,
    )


def mask_to_cloud(mask: Raster) -> PointCloud:
    """Lift mask foreground pixels to a planar cloud at their world centres.

    Z is zero for every point; useful for comparing a 2D ground-truth mask
    against an extracted cloud that has been flattened the same way.
    """
    rows, cols = np.nonzero(mask.foreground())
    if len(rows) == 0:
        raise ValueError("mask has no foreground pixels")
    x, y = mask.georef.pixel_to_world(cols, rows)
    return PointCloud(np.column_stack([x, y, np.zeros(len(x))]))


def flatten_cloud(cloud: PointCloud) -> PointCloud:
    """Copy of the cloud with Z forced to zero (for mask comparisons)."""
    xyz = cloud.xyz.copy()
    xyz[:, 2] = 0.0
    return PointCloud(xyz)
