"""Synthetic labelled street scenes for pipeline tests and benchmarks.

Each scene is a road ribbon (straight, looped, crossing, sloped or with a
sinusoidal drift) plus optional box buildings, vegetation blobs and uniform
outlier noise.  Every point carries a label, and the scene records the true
centreline and a binary road mask, so extraction quality can be scored
without manual annotation.  Generation is fully determined by the spec.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud
from .evaluate import IoUParams, IoUReport, iou
from .raster import Georef, Raster

logger = logging.getLogger(__name__)

ROAD, BUILDING, VEGETATION, OUTLIER = range(4)
LABEL_NAMES = ("road", "building", "vegetation", "outlier")

KINDS = ("straight", "loop", "intersection", "ramp", "drift")

_ROUGHNESS = 0.02          # road surface z jitter, +- metres
_FACADE_DENSITY_FACTOR = 2.0   # facades sample at twice the road density
_BUILDING_SIDE = 12.0
_BUILDING_HEIGHT = 8.0
_BUILDING_GAP = 8.0        # clearance between road edge and nearest wall
_DRIFT_AMPLITUDE = 3.0
_RAMP_GRADE_DEG = 10.0
_MASK_PIXEL = 0.5


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "straight"
    road_width: float = 8.0
    extent: float = 100.0
    density: float = 50.0
    building_count: int = 3
    noise_fraction: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.road_width <= 0:
            raise ValueError("road_width must be positive")
        if self.extent < 4 * self.road_width:
            raise ValueError("extent must be at least four road widths")
        if self.density <= 0:
            raise ValueError("density must be positive")
        if self.building_count < 0:
            raise ValueError("building_count must be non-negative")
        if not 0 <= self.noise_fraction < 1:
            raise ValueError("noise_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class LabelledCloud:
    """A generated scene: points, per-point labels, and its ground truth."""

    spec: SceneSpec
    cloud: PointCloud
    labels: np.ndarray
    truth_centerline: np.ndarray
    truth_mask: Raster

    def points_with_label(self, label: int) -> PointCloud:
        return self.cloud.subset(self.labels == label)


def _centerline_samples(spec: SceneSpec, step: float = 0.5) -> list[np.ndarray]:
    """Dense (M, 3) samples of each true centreline, one array per road."""
    e = spec.extent
    half = e / 2.0
    if spec.kind in ("straight", "ramp", "drift"):
        x = np.arange(0.0, e + step / 2, step)
        if spec.kind == "drift":
            y = half + _DRIFT_AMPLITUDE * np.sin(2.0 * np.pi * x / e)
        else:
            y = np.full_like(x, half)
        z = np.tan(math.radians(_RAMP_GRADE_DEG)) * x if spec.kind == "ramp" \
            else np.zeros_like(x)
        return [np.column_stack([x, y, z])]
    if spec.kind == "intersection":
        x = np.arange(0.0, e + step / 2, step)
        road_a = np.column_stack([x, np.full_like(x, half), np.zeros_like(x)])
        road_b = np.column_stack([np.full_like(x, half), x, np.zeros_like(x)])
        return [road_a, road_b]
    # loop: closed circle, first sample repeated at the end
    radius = 0.3 * e
    n = max(8, int(math.ceil(2.0 * np.pi * radius / step)))
    t = np.linspace(0.0, 2.0 * np.pi, n + 1)
    ring = np.column_stack([half + radius * np.cos(t),
                            half + radius * np.sin(t),
                            np.zeros_like(t)])
    ring[-1] = ring[0]    # exact closure; sin(2*pi) rounds to -2.4e-16
    return [ring]


def _sample_road(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform road-surface points around each centreline."""
    e, w = spec.extent, spec.road_width
    half = e / 2.0
    parts = []
    if spec.kind in ("straight", "ramp", "drift", "intersection"):
        n = int(round(e * w * spec.density))
        for axis in range(2 if spec.kind == "intersection" else 1):
            t = rng.uniform(0.0, e, n)
            u = rng.uniform(-w / 2.0, w / 2.0, n)
            dz = rng.uniform(-_ROUGHNESS, _ROUGHNESS, n)
            if spec.kind == "drift":
                centre = half + _DRIFT_AMPLITUDE * np.sin(2.0 * np.pi * t / e)
                slope = _DRIFT_AMPLITUDE * 2.0 * np.pi / e * np.cos(2.0 * np.pi * t / e)
                norm = np.sqrt(1.0 + slope ** 2)
                x = t + u * (-slope / norm)
                y = centre + u * (1.0 / norm)
                parts.append(np.column_stack([x, y, dz]))
            elif axis == 0:
                z = np.tan(math.radians(_RAMP_GRADE_DEG)) * t if spec.kind == "ramp" \
                    else np.zeros(n)
                parts.append(np.column_stack([t, half + u, z + dz]))
            else:
                parts.append(np.column_stack([half + u, t, dz]))
    else:
        radius = 0.3 * e
        n = int(round(2.0 * np.pi * radius * w * spec.density))
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        r = radius + rng.uniform(-w / 2.0, w / 2.0, n)
        dz = rng.uniform(-_ROUGHNESS, _ROUGHNESS, n)
        parts.append(np.column_stack([half + r * np.cos(theta),
                                      half + r * np.sin(theta), dz]))
    return np.vstack(parts)


def _building_centres(spec: SceneSpec) -> list[tuple[float, float]]:
    """Deterministic building positions clear of every road."""
    e, w = spec.extent, spec.road_width
    half = e / 2.0
    count = spec.building_count
    if count == 0:
        return []
    offset = w / 2.0 + _BUILDING_GAP + _BUILDING_SIDE / 2.0
    centres = []
    if spec.kind in ("straight", "ramp", "drift"):
        for i in range(count):
            x = e * (i + 1) / (count + 1)
            side = 1.0 if i % 2 == 0 else -1.0
            # drift sways the road +-3 m; push buildings out by that much
            extra = _DRIFT_AMPLITUDE if spec.kind == "drift" else 0.0
            centres.append((x, half + side * (offset + extra)))
    elif spec.kind == "intersection":
        d = offset
        corners = [(half + d, half + d), (half - d, half + d),
                   (half + d, half - d), (half - d, half - d)]
        centres = corners[:count]
    else:
        # courtyard placement: outside the ring would poke past the extent
        ring = 0.3 * e - offset
        if ring < _BUILDING_SIDE / 2.0:
            logger.warning("loop extent too small for buildings; placing none")
            return []
        for i in range(count):
            angle = 2.0 * np.pi * i / count
            centres.append((half + ring * np.cos(angle),
                            half + ring * np.sin(angle)))
    return centres


def _sample_buildings(
    spec: SceneSpec, rng: np.random.Generator
) -> np.ndarray:
    """Vertical wall points of each building box (open top, no roof).

    Street-level scanners see facades and not rooftops, so the boxes have
    four walls only.
    """
    centres = _building_centres(spec)
    if not centres:
        return np.empty((0, 3))
    s = _BUILDING_SIDE / 2.0
    density = spec.density * _FACADE_DENSITY_FACTOR
    n_wall = int(round(_BUILDING_SIDE * _BUILDING_HEIGHT * density))
    parts = []
    for cx, cy in centres:
        walls = [
            ((cx - s, cy - s), (cx + s, cy - s)),
            ((cx + s, cy - s), (cx + s, cy + s)),
            ((cx + s, cy + s), (cx - s, cy + s)),
            ((cx - s, cy + s), (cx - s, cy - s)),
        ]
        for (x0, y0), (x1, y1) in walls:
            t = rng.uniform(0.0, 1.0, n_wall)
            z = rng.uniform(0.0, _BUILDING_HEIGHT, n_wall)
            parts.append(np.column_stack([x0 + t * (x1 - x0),
                                          y0 + t * (y1 - y0), z]))
    return np.vstack(parts)


def _sample_vegetation(
    spec: SceneSpec, rng: np.random.Generator, centrelines: list[np.ndarray]
) -> np.ndarray:
    """Small elevated point blobs placed clear of the roads."""
    e, w = spec.extent, spec.road_width
    n_blobs = max(2, spec.building_count)
    line_tree = cKDTree(np.vstack(centrelines)[:, :2])
    parts = []
    placed = 0
    attempts = 0
    while placed < n_blobs and attempts < 200:
        attempts += 1
        cx, cy = rng.uniform(0.1 * e, 0.9 * e, 2)
        d, _ = line_tree.query([cx, cy])
        if d < w / 2.0 + 5.0:
            continue
        radius = rng.uniform(1.0, 2.5)
        n = 40
        pts = np.column_stack([
            np.clip(rng.normal(cx, radius / 2.0, n), 0.5, e - 0.5),
            np.clip(rng.normal(cy, radius / 2.0, n), 0.5, e - 0.5),
            rng.uniform(0.3, 3.0, n),
        ])
        parts.append(pts)
        placed += 1
    return np.vstack(parts) if parts else np.empty((0, 3))


def _truth_mask(spec: SceneSpec, centrelines: list[np.ndarray]) -> Raster:
    """Binary mask of the road footprint over the (padded) scene extent.

    The pad keeps the mask georef covering every generated point: curved
    roads bulge up to half a road width past the nominal extent.
    """
    e = spec.extent
    ps = _MASK_PIXEL
    pad = spec.road_width / 2.0
    width = height = int(math.ceil((e + 2.0 * pad) / ps))
    georef = Georef(origin_x=-pad + ps / 2.0, origin_y=e + pad - ps / 2.0,
                    pixel_size=ps, width=width, height=height)
    cols, rows = np.meshgrid(np.arange(width), np.arange(height))
    cx, cy = georef.pixel_to_world(cols.ravel(), rows.ravel())
    tree = cKDTree(np.vstack(centrelines)[:, :2])
    d, _ = tree.query(np.column_stack([cx, cy]), workers=-1)
    values = (d <= spec.road_width / 2.0).reshape(height, width)
    return Raster(georef=georef, values=values.astype(np.float32))


def generate(spec: SceneSpec) -> LabelledCloud:
    """Build the scene described by ``spec``.

    Point order is road, buildings, vegetation, outliers; all randomness
    flows from one generator seeded with ``spec.seed``, so equal specs give
    byte-identical clouds.  A straight scene of width 8, extent 100 and
    density 50 yields 40000 road points.
    """
    rng = np.random.default_rng(spec.seed)
    centrelines = _centerline_samples(spec)
    road = _sample_road(spec, rng)
    buildings = _sample_buildings(spec, rng)
    vegetation = _sample_vegetation(spec, rng, centrelines)
    n_structured = len(road) + len(buildings) + len(vegetation)
    n_out = int(round(spec.noise_fraction * n_structured))
    outliers = np.column_stack([
        rng.uniform(0.0, spec.extent, n_out),
        rng.uniform(0.0, spec.extent, n_out),
        rng.uniform(0.0, 15.0, n_out),
    ]) if n_out else np.empty((0, 3))

    xyz = np.vstack([road, buildings, vegetation, outliers])
    labels = np.concatenate([
        np.full(len(road), ROAD, dtype=np.int8),
        np.full(len(buildings), BUILDING, dtype=np.int8),
        np.full(len(vegetation), VEGETATION, dtype=np.int8),
        np.full(len(outliers), OUTLIER, dtype=np.int8),
    ])
    truth = centrelines[0] if len(centrelines) == 1 else np.vstack(centrelines)
    scene = LabelledCloud(
        spec=spec,
        cloud=PointCloud(xyz),
        labels=labels,
        truth_centerline=truth,
        truth_mask=_truth_mask(spec, centrelines),
    )
    logger.info(
        "generated %s scene: %d points (%d road, %d building, %d vegetation, %d outlier)",
        spec.kind, len(scene.cloud), len(road), len(buildings),
        len(vegetation), len(outliers),
    )
    return scene


def road_points(scene: LabelledCloud) -> PointCloud:
    return scene.points_with_label(ROAD)


def truth_iou_oracle(
    extracted: PointCloud, scene: LabelledCloud, params: IoUParams = IoUParams()
) -> IoUReport:
    """Score an extraction against the scene's road-labelled points."""
    return iou(extracted, road_points(scene), params)
