"""Centreline fitting: branch smoothing, back-projection to 3D, region growing.

Polylines come out of the skeleton graph in pixel order, get smoothed in the
XY plane, lifted to 3D against the ground cloud, and finally drive a
cross-section search that collects the road surface around each line.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.signal import savgol_filter

from .cloud import PointCloud, SpatialIndex, build_index
from .raster import Raster, binarize, blur, gaussian_kernel, normalize, project_topdown
from .skeleton import (
    SkeletonGraph,
    SkeletonParams,
    bridge_endpoints,
    build_graph,
    prune_branches,
    thin,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SavGolParams:
    """Least-squares smoothing window; window must be odd and > polyorder."""

    window: int = 11
    polyorder: int = 3

    def __post_init__(self) -> None:
        if self.window % 2 != 1:
            raise ValueError("window must be odd")
        if not 0 <= self.polyorder < self.window:
            raise ValueError("polyorder must satisfy 0 <= polyorder < window")


@dataclass(frozen=True)
class RegionGrowParams:
    half_width: float = 6.0
    z_tolerance: float = 0.3
    sample_step: float = 1.0

    def __post_init__(self) -> None:
        if self.half_width <= 0 or self.z_tolerance <= 0 or self.sample_step <= 0:
            raise ValueError("region growing parameters must be positive")


@dataclass(frozen=True)
class Centerline3D:
    """Polyline with 3D vertices and optional unit XY-plane normals.

    At least two vertices, consecutive vertices distinct; ``closed`` lines
    repeat their first vertex at the end.
    """

    xyz: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self) -> None:
        xyz = np.ascontiguousarray(np.asarray(self.xyz, dtype=np.float64))
        if xyz.ndim != 2 or xyz.shape[1] != 3 or len(xyz) < 2:
            raise ValueError("centerline needs an (N>=2, 3) vertex array")
        if not np.isfinite(xyz).all():
            raise ValueError("centerline vertices must be finite")
        if (np.abs(np.diff(xyz, axis=0)).sum(axis=1) == 0).any():
            raise ValueError("consecutive centerline vertices must be distinct")
        xyz.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)
        if self.normals is not None:
            nrm = np.ascontiguousarray(np.asarray(self.normals, dtype=np.float64))
            if nrm.shape != xyz.shape:
                raise ValueError("normals must match the vertex array shape")
            nrm.setflags(write=False)
            object.__setattr__(self, "normals", nrm)

    @property
    def closed(self) -> bool:
        return bool(np.array_equal(self.xyz[0], self.xyz[-1]))

    def __len__(self) -> int:
        return len(self.xyz)


def _arclength(vertices: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(vertices[:, :2], axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def savgol_smooth(line: np.ndarray, params: SavGolParams = SavGolParams()) -> np.ndarray:
    """Smooth a polyline column-wise with a Savitzky-Golay filter.

    Open lines handle their ends by fitting the terminal window's polynomial
    and evaluating it outward; closed lines (first vertex repeated at the
    end) are smoothed periodically so the seam stays consistent.  Lines
    shorter than the window are returned unchanged with a warning.
    Polynomials up to ``polyorder`` are reproduced exactly.
    """
    line = np.asarray(line, dtype=np.float64)
    if line.ndim != 2 or len(line) < 2:
        raise ValueError("polyline must be an (N>=2, D) array")
    closed = bool(np.array_equal(line[0], line[-1])) and len(line) > 3
    n_free = len(line) - 1 if closed else len(line)
    if n_free < params.window:
        logger.warning(
            "polyline with %d vertices is shorter than the smoothing window %d; "
            "returned unchanged", len(line), params.window,
        )
        return line.copy()
    if closed:
        body = savgol_filter(
            line[:-1], params.window, params.polyorder, axis=0, mode="wrap"
        )
        return np.vstack([body, body[:1]])
    return savgol_filter(line, params.window, params.polyorder, axis=0, mode="interp")


def backproject(
    line: np.ndarray,
    ground: PointCloud,
    index: SpatialIndex,
    radius: float = 1.5,
) -> Centerline3D:
    """Lift a 2D polyline to 3D using median ground heights.

    Each vertex takes the median Z of ground points within ``radius`` in
    the XY plane.  Vertices with no support are holes, filled by linear
    interpolation along arclength between supported vertices; holes at the
    ends copy the nearest supported value.  Raises ValueError when no
    vertex has support or the index is not 2D.
    """
    if index.dims != 2:
        raise ValueError("backprojection needs a 2D (XY) spatial index")
    if radius <= 0:
        raise ValueError("radius must be positive")
    line = np.asarray(line, dtype=np.float64)
    if line.ndim != 2 or line.shape[1] < 2 or len(line) < 2:
        raise ValueError("polyline must be an (N>=2, >=2) array")
    xy = line[:, :2]
    z = np.full(len(xy), np.nan)
    gz = ground.z.astype(np.float64)
    hits = index.tree.query_ball_point(xy, radius)
    for i, idx in enumerate(hits):
        if idx:
            z[i] = np.median(gz[idx])
    good = np.isfinite(z)
    if not good.any():
        raise ValueError(f"no ground support within {radius} of any vertex")
    if not good.all():
        s = _arclength(line)
        z[~good] = np.interp(s[~good], s[good], z[good])
        logger.debug("backproject: interpolated %d unsupported vertices",
                     int((~good).sum()))
    return Centerline3D(xyz=np.column_stack([xy, z]))


def compute_normals(line: Centerline3D) -> Centerline3D:
    """Attach unit left-hand normals in the XY plane.

    Tangents come from central differences of the XY vertices (one-sided at
    open ends, periodic on closed lines); each is rotated +90 degrees, so
    normals point to the left of the direction of travel and have zero Z.
    """
    xy = line.xyz[:, :2]
    n = len(xy)
    if line.closed:
        body = xy[:-1]
        t = np.roll(body, -1, axis=0) - np.roll(body, 1, axis=0)
        t = np.vstack([t, t[:1]])
    else:
        t = np.empty_like(xy)
        t[1:-1] = xy[2:] - xy[:-2]
        t[0] = xy[1] - xy[0]
        t[-1] = xy[-1] - xy[-2]
    norms = np.linalg.norm(t, axis=1)
    # A zero central difference can only come from a fold-back; fall back to
    # the previous tangent so the normal field stays defined.
    for i in np.nonzero(norms == 0)[0]:
        t[i] = t[i - 1] if i > 0 else np.array([1.0, 0.0])
        norms[i] = np.linalg.norm(t[i])
    t /= norms[:, None]
    normals = np.column_stack([-t[:, 1], t[:, 0], np.zeros(n)])
    return Centerline3D(xyz=line.xyz, normals=normals)


def _sample_line(line: Centerline3D, step: float):
    """Samples spaced <= step along the line: positions, tangents, Z."""
    verts = line.xyz
    s = _arclength(verts)
    total = s[-1]
    n_samples = max(2, int(np.ceil(total / step)) + 1)
    si = np.linspace(0.0, total, n_samples)
    x = np.interp(si, s, verts[:, 0])
    y = np.interp(si, s, verts[:, 1])
    z = np.interp(si, s, verts[:, 2])
    seg_idx = np.clip(np.searchsorted(s, si, side="right") - 1, 0, len(verts) - 2)
    seg = verts[seg_idx + 1, :2] - verts[seg_idx, :2]
    seg /= np.linalg.norm(seg, axis=1)[:, None]
    return np.column_stack([x, y]), seg, z


def region_grow_indices(
    line: Centerline3D,
    ground: PointCloud,
    index: SpatialIndex,
    params: RegionGrowParams = RegionGrowParams(),
) -> np.ndarray:
    """Ground-point indices inside the line's rectangular cross-section.

    The line is sampled every ``sample_step`` of arclength.  A ground point
    belongs to a sample when its offset has normal component within
    ``half_width``, tangential component within ``sample_step / 2`` (so
    consecutive boxes tile the line without gaps), and height within
    ``z_tolerance`` of the sample.  The union over samples is returned as
    sorted unique indices; the selection grows monotonically with
    ``half_width`` and ``z_tolerance``.
    """
    if index.dims != 2:
        raise ValueError("region growing needs a 2D (XY) spatial index")
    xy, tangents, z = _sample_line(line, params.sample_step)
    half_step = params.sample_step / 2.0
    reach = float(np.hypot(params.half_width, half_step))
    gxy = ground.xyz[:, :2].astype(np.float64)
    gz = ground.z.astype(np.float64)
    hits = index.tree.query_ball_point(xy, reach)
    collected = []
    for i, idx in enumerate(hits):
        if not idx:
            continue
        idx = np.asarray(idx, dtype=np.int64)
        d = gxy[idx] - xy[i]
        t = tangents[i]
        along = d @ t
        across = d @ np.array([-t[1], t[0]])
        ok = (
            (np.abs(across) <= params.half_width)
            & (np.abs(along) <= half_step)
            & (np.abs(gz[idx] - z[i]) <= params.z_tolerance)
        )
        if ok.any():
            collected.append(idx[ok])
    if not collected:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(collected))


def region_grow(
    line: Centerline3D,
    ground: PointCloud,
    index: SpatialIndex,
    params: RegionGrowParams = RegionGrowParams(),
) -> PointCloud:
    """Materialize ``region_grow_indices`` as a point cloud (subset of ground)."""
    return ground.subset(region_grow_indices(line, ground, index, params))


def road_skeleton(
    road: PointCloud,
    pixel_size: float = 0.5,
    sigma: float = 5.0,
    threshold: float = 0.2,
    skeleton_params: SkeletonParams = SkeletonParams(),
    extent=None,
) -> SkeletonGraph:
    """Raster the road top-down and reduce it to a cleaned skeleton graph.

    Steps: occupancy projection, Gaussian blur (sigma in pixels), max
    renormalization, thresholding, thinning, then prune - bridge - prune.
    Pruning runs before bridging so spur tips cannot consume bridge slots,
    and again after to trim stubs exposed by new connections.
    """
    density = blur(project_topdown(road, pixel_size, extent=extent),
                   gaussian_kernel(sigma))
    mask = binarize(normalize(density), threshold)
    graph = build_graph(thin(mask))
    graph = prune_branches(graph, skeleton_params.min_branch_len)
    graph = bridge_endpoints(graph, skeleton_params.max_bridge_gap)
    return prune_branches(graph, skeleton_params.min_branch_len)


def branch_polylines(graph: SkeletonGraph) -> list[np.ndarray]:
    """World-coordinate (N, 2) polylines, one per branch, in branch order."""
    georef = graph.raster.georef
    out = []
    for br in graph.branches:
        rows = np.array([p[0] for p in br.path], dtype=np.float64)
        cols = np.array([p[1] for p in br.path], dtype=np.float64)
        x, y = georef.pixel_to_world(cols, rows)
        out.append(np.column_stack([x, y]))
    return out


def fit_centerlines(
    graph: SkeletonGraph,
    support: PointCloud,
    index: SpatialIndex,
    savgol: SavGolParams = SavGolParams(),
    backproject_radius: float = 1.5,
) -> list[Centerline3D]:
    """Turn skeleton branches into smoothed 3D centrelines over ``support``.

    One centreline per branch: pixels become a world polyline, smoothed,
    lifted to median support height and given normals.  Branches that
    collapse below two distinct vertices produce nothing.
    """
    lines = []
    for poly in branch_polylines(graph):
        smooth = savgol_smooth(poly, savgol)
        # smoothing may collapse nearly-coincident neighbours; drop exact dupes
        keep = np.concatenate([[True], np.abs(np.diff(smooth, axis=0)).sum(axis=1) > 0])
        smooth = smooth[keep]
        if len(smooth) < 2:
            continue
        line3d = backproject(smooth, support, index, radius=backproject_radius)
        lines.append(compute_normals(line3d))
    return lines


def final_centerline(
    road: PointCloud,
    pixel_size: float = 0.5,
    sigma: float = 5.0,
    threshold: float = 0.2,
    skeleton_params: SkeletonParams = SkeletonParams(),
    savgol: SavGolParams = SavGolParams(),
    backproject_radius: float = 1.5,
) -> list[Centerline3D]:
    """Skeletonize an extracted road cloud into smoothed 3D centrelines."""
    graph = road_skeleton(road, pixel_size, sigma, threshold, skeleton_params)
    lines = fit_centerlines(graph, road, build_index(road, dims=2),
                            savgol, backproject_radius)
    logger.info("fitted %d centrelines from %d road points", len(lines), len(road))
    return lines


def centerlines_to_geojson(lines: list[Centerline3D]) -> dict:
    """GeoJSON-style FeatureCollection of LineString features with XYZ coords."""
    features = []
    for line in lines:
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[float(x), float(y), float(z)]
                                    for x, y, z in line.xyz],
                },
                "properties": {
                    "closed": line.closed,
                    "n_vertices": len(line),
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


def centerlines_to_cloud(lines: list[Centerline3D]) -> PointCloud:
    """Vertex dump of all centrelines as one cloud (viewer-friendly PLY)."""
    if not lines:
        return PointCloud(np.empty((0, 3), dtype=np.float32))
    return PointCloud(np.vstack([line.xyz for line in lines]))
