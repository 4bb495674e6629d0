"""Point cloud container, PLY I/O, voxel downsampling and spatial indexing.

Coordinates are stored as float32, matching the on-disk PLY vertex format,
so that write/read round-trips are exact.  Geometry math elsewhere in the
package upcasts to float64 as needed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)


class PlyError(ValueError):
    """Raised for malformed or unsupported PLY content."""


@dataclass(frozen=True)
class BoundingBox2D:
    """Axis-aligned XY extent. Degenerate (zero-area) boxes are allowed."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValueError("bounding box must satisfy min <= max on both axes")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def corners(self) -> np.ndarray:
        """Four XY corners in fixed order: (min,min), (max,min), (max,max), (min,max)."""
        return np.array(
            [
                [self.x_min, self.y_min],
                [self.x_max, self.y_min],
                [self.x_max, self.y_max],
                [self.x_min, self.y_max],
            ]
        )

    def contains(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        return (
            (xy[:, 0] >= self.x_min)
            & (xy[:, 0] <= self.x_max)
            & (xy[:, 1] >= self.y_min)
            & (xy[:, 1] <= self.y_max)
        )


class PointCloud:
    """Immutable set of 3D points with an optional per-point intensity.

    ``xyz`` is an (N, 3) float32 array; ``intensity`` is (N,) float32 or
    None.  Arrays are made read-only on construction.  All coordinates must
    be finite; parsing raises rather than admitting NaN/Inf.
    """

    __slots__ = ("xyz", "intensity")

    def __init__(self, xyz: np.ndarray, intensity: np.ndarray | None = None):
        arr = np.ascontiguousarray(np.asarray(xyz, dtype=np.float32))
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError(f"xyz must be (N, 3), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("point coordinates must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "xyz", arr)
        if intensity is not None:
            inten = np.ascontiguousarray(np.asarray(intensity, dtype=np.float32))
            if inten.shape != (len(arr),):
                raise ValueError("intensity must be (N,)")
            inten.setflags(write=False)
        else:
            inten = None
        object.__setattr__(self, "intensity", inten)

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("PointCloud is immutable")

    def __len__(self) -> int:
        return len(self.xyz)

    def __repr__(self) -> str:
        return f"PointCloud({len(self)} points)"

    @property
    def x(self) -> np.ndarray:
        return self.xyz[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.xyz[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self.xyz[:, 2]

    def subset(self, indices) -> "PointCloud":
        """New cloud holding ``self.xyz[indices]`` (intensity carried along)."""
        inten = self.intensity[indices] if self.intensity is not None else None
        return PointCloud(self.xyz[indices], inten)


def concat(clouds: list[PointCloud]) -> PointCloud:
    """Concatenate clouds in order. Intensity survives only if all carry it."""
    if not clouds:
        return PointCloud(np.empty((0, 3), dtype=np.float32))
    xyz = np.vstack([c.xyz for c in clouds])
    if all(c.intensity is not None for c in clouds):
        inten = np.concatenate([c.intensity for c in clouds])
    else:
        inten = None
    return PointCloud(xyz, inten)


def bounding_box(cloud: PointCloud) -> BoundingBox2D:
    """Tight 2D bounding box of the cloud's XY footprint.

    Raises ValueError on an empty cloud.
    """
    if len(cloud) == 0:
        raise ValueError("cannot compute the bounding box of an empty cloud")
    x, y = cloud.x, cloud.y
    return BoundingBox2D(float(x.min()), float(x.max()), float(y.min()), float(y.max()))


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """Reduce the cloud to one centroid point per occupied voxel.

    Voxel keys are ``floor((coord - min_corner) / voxel)`` per axis, anchored
    at the cloud's own minimum corner.  The representative of each voxel is
    the centroid of its members (computed in float64).  Output order is
    ascending voxel key (x, then y, then z), which makes the result
    deterministic and independent of input order up to coincident points.

    Returns a cloud with at most ``len(cloud)`` points; every input point
    maps into exactly one voxel.
    """
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    if len(cloud) == 0:
        return cloud
    pts = cloud.xyz.astype(np.float64)
    origin = pts.min(axis=0)
    keys = np.floor((pts - origin) / voxel).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inverse, pts)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)
    centroids = sums / counts[:, None]
    if cloud.intensity is not None:
        isums = np.zeros(len(uniq))
        np.add.at(isums, inverse, cloud.intensity.astype(np.float64))
        return PointCloud(centroids, isums / counts)
    return PointCloud(centroids)


class SpatialIndex:
    """KD-tree over a cloud's coordinates in 2 (XY) or 3 dimensions.

    Queries return exactly what a linear scan over the same points would:
    radius queries are boundary inclusive (distance <= r) and k-NN ties are
    broken by index order.
    """

    __slots__ = ("tree", "dims", "n")

    def __init__(self, cloud: PointCloud, dims: int = 3):
        if dims not in (2, 3):
            raise ValueError("dims must be 2 or 3")
        if len(cloud) == 0:
            raise ValueError("cannot index an empty cloud")
        coords = cloud.xyz[:, :dims].astype(np.float64)
        object.__setattr__(self, "tree", cKDTree(coords))
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "n", len(cloud))

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("SpatialIndex is immutable")

    def radius_query(self, center, r: float) -> np.ndarray:
        """Indices of points with distance <= r from ``center``, ascending."""
        if r < 0:
            raise ValueError("radius must be non-negative")
        center = np.asarray(center, dtype=np.float64)[: self.dims]
        idx = self.tree.query_ball_point(center, r)
        return np.sort(np.asarray(idx, dtype=np.int64))

    def knn_query(self, center, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Distances and indices of the k nearest points to ``center``."""
        if not 1 <= k <= self.n:
            raise ValueError(f"k must be in [1, {self.n}], got {k}")
        center = np.asarray(center, dtype=np.float64)[: self.dims]
        d, i = self.tree.query(center, k=k)
        return np.atleast_1d(d), np.atleast_1d(i).astype(np.int64)


def build_index(cloud: PointCloud, dims: int = 3) -> SpatialIndex:
    return SpatialIndex(cloud, dims=dims)


# ---------------------------------------------------------------------------
# PLY I/O
#
# Supported: "format ascii 1.0" and "format binary_little_endian 1.0",
# a leading vertex element with float32 x, y, z properties.  Unknown scalar
# vertex properties are skipped; vertex order is never changed.

_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_header(fh) -> tuple[str, int, list[tuple[str, str]], int]:
    """Parse the header, returning (format, n_vertices, properties, data_offset).

    ``properties`` lists (name, numpy dtype code) for the vertex element in
    declaration order.  Raises PlyError with the byte offset of the offending
    line on malformed input.
    """
    offset = 0

    def read_line():
        nonlocal offset
        raw = fh.readline()
        if not raw:
            raise PlyError(f"unexpected end of header at byte {offset}")
        line_offset = offset
        offset += len(raw)
        return raw.decode("ascii", errors="replace").strip(), line_offset

    line, at = read_line()
    if line != "ply":
        raise PlyError(f"not a PLY file (missing 'ply' magic at byte {at})")
    line, at = read_line()
    parts = line.split()
    if len(parts) != 3 or parts[0] != "format":
        raise PlyError(f"expected format line at byte {at}, got {line!r}")
    fmt = parts[1]
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyError(f"unsupported PLY format {fmt!r} at byte {at}")

    n_vertices = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    seen_other_element = False
    while True:
        line, at = read_line()
        if line == "end_header":
            break
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "element":
            if len(parts) != 3:
                raise PlyError(f"malformed element line at byte {at}: {line!r}")
            if parts[1] == "vertex":
                if seen_other_element:
                    raise PlyError(
                        f"vertex element must come first (byte {at})"
                    )
                try:
                    n_vertices = int(parts[2])
                except ValueError:
                    raise PlyError(f"bad vertex count at byte {at}: {parts[2]!r}")
                in_vertex = True
            else:
                in_vertex = False
                seen_other_element = True
        elif parts[0] == "property":
            if not in_vertex:
                continue
            if parts[1] == "list":
                raise PlyError(f"list properties are not supported (byte {at})")
            if len(parts) != 3:
                raise PlyError(f"malformed property line at byte {at}: {line!r}")
            ptype, name = parts[1], parts[2]
            if ptype not in _PLY_SCALARS:
                raise PlyError(f"unknown property type {ptype!r} at byte {at}")
            props.append((name, _PLY_SCALARS[ptype]))
        else:
            raise PlyError(f"unrecognized header line at byte {at}: {line!r}")

    if n_vertices is None:
        raise PlyError("header declares no vertex element")
    names = [n for n, _ in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise PlyError(f"vertex element lacks property {axis!r}")
        if props[names.index(axis)][1] != "f4":
            raise PlyError(f"property {axis!r} must be float32")
    return fmt, n_vertices, props, offset


def read_ply(path: str | Path) -> PointCloud:
    """Load a PLY point cloud (ascii or binary little-endian).

    Only the vertex element is read; float32 x, y, z are required and an
    optional float32 ``intensity`` property is carried along.  Other scalar
    properties are skipped without reordering vertices.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, n, props, data_offset = _parse_header(fh)
        names = [p[0] for p in props]
        if fmt == "binary_little_endian":
            dtype = np.dtype([(name, "<" + code) for name, code in props])
            raw = fh.read(n * dtype.itemsize)
            if len(raw) < n * dtype.itemsize:
                raise PlyError(
                    f"truncated vertex data: expected {n * dtype.itemsize} bytes "
                    f"after byte {data_offset}, got {len(raw)}"
                )
            rec = np.frombuffer(raw, dtype=dtype, count=n)
        else:
            rows = []
            for i in range(n):
                line = fh.readline()
                if not line:
                    raise PlyError(f"truncated ascii data at vertex {i}")
                fields = line.split()
                if len(fields) != len(props):
                    raise PlyError(
                        f"vertex {i}: expected {len(props)} columns, got {len(fields)}"
                    )
                rows.append(fields)
            table = np.array(rows)
            rec = {}
            for col, (name, code) in enumerate(props):
                try:
                    rec[name] = table[:, col].astype(np.dtype(code))
                except ValueError as exc:
                    raise PlyError(f"bad value in column {name!r}: {exc}") from exc
            if n == 0:
                rec = {name: np.empty(0, dtype=np.dtype(code)) for name, code in props}
        xyz = np.column_stack(
            [np.asarray(rec["x"]), np.asarray(rec["y"]), np.asarray(rec["z"])]
        ).astype(np.float32)
        if not np.isfinite(xyz).all():
            raise PlyError("non-finite coordinate in PLY data")
        inten = None
        if "intensity" in names and props[names.index("intensity")][1] == "f4":
            inten = np.asarray(rec["intensity"], dtype=np.float32)
        return PointCloud(xyz, inten)


def write_ply(cloud: PointCloud, path: str | Path, binary: bool = True) -> None:
    """Write the cloud as PLY, binary little-endian by default.

    Binary output round-trips coordinates bit-exactly; ascii output uses
    9 significant digits, which is also lossless for float32.
    """
    path = Path(path)
    fields = [("x", "f4"), ("y", "f4"), ("z", "f4")]
    if cloud.intensity is not None:
        fields.append(("intensity", "f4"))
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {len(cloud)}")
    header.extend(f"property float {name}" for name, _ in fields)
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        columns = [cloud.x, cloud.y, cloud.z]
        if cloud.intensity is not None:
            columns.append(cloud.intensity)
        if binary:
            rec = np.empty(len(cloud), dtype=np.dtype([(n, "<f4") for n, _ in fields]))
            for (name, _), col in zip(fields, columns):
                rec[name] = col
            fh.write(rec.tobytes())
        else:
            data = np.column_stack(columns)
            lines = [" ".join("%.9g" % v for v in row) for row in data]
            if lines:
                fh.write(("\n".join(lines) + "\n").encode("ascii"))
    logger.debug("wrote %d points to %s (%s)", len(cloud), path,
                 "binary" if binary else "ascii")
