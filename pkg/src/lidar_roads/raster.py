"""Top-down rasterization, Gaussian blurring, binarization and PNG I/O.

Rasters are single-channel float32 grids with values in [0, 1], paired with
a georeference that maps pixel centres to world XY.  Row 0 is the top of
the image (maximum Y), matching the world-file convention of a negative
Y pixel size.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .cloud import BoundingBox2D, PointCloud, bounding_box

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Georef:
    """North-up georeference, square pixels unless ``pixel_size_y`` is set.

    ``origin_x``/``origin_y`` are the world coordinates of the centre of
    pixel (col=0, row=0); world Y decreases as row increases.  Separate
    per-axis sizes accommodate rasters in degrees, where a pixel's
    longitude and latitude steps differ.
    """

    origin_x: float
    origin_y: float
    pixel_size: float
    width: int
    height: int
    pixel_size_y: float = 0.0    # 0 means same as pixel_size

    def __post_init__(self) -> None:
        if self.pixel_size <= 0:
            raise ValueError("pixel_size must be positive")
        if self.pixel_size_y < 0:
            raise ValueError("pixel_size_y must be non-negative")
        if self.pixel_size_y == 0:
            object.__setattr__(self, "pixel_size_y", self.pixel_size)
        if self.width < 1 or self.height < 1:
            raise ValueError("raster dimensions must be >= 1")

    def world_to_pixel(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Map world coordinates to (col, row) indices, unclipped.

        Composing with ``pixel_to_world`` is the identity on pixel centres,
        and a world point is displaced by at most half a pixel per axis.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        cols = np.floor((x - self.origin_x) / self.pixel_size + 0.5).astype(np.int64)
        rows = np.floor((self.origin_y - y) / self.pixel_size_y + 0.5).astype(np.int64)
        return cols, rows

    def pixel_to_world(self, cols, rows) -> tuple[np.ndarray, np.ndarray]:
        cols = np.asarray(cols, dtype=np.float64)
        rows = np.asarray(rows, dtype=np.float64)
        return (
            self.origin_x + cols * self.pixel_size,
            self.origin_y - rows * self.pixel_size_y,
        )

    def extent(self) -> BoundingBox2D:
        """Outer world extent covered by the pixel grid."""
        half_x = self.pixel_size / 2
        half_y = self.pixel_size_y / 2
        return BoundingBox2D(
            self.origin_x - half_x,
            self.origin_x + (self.width - 1) * self.pixel_size + half_x,
            self.origin_y - (self.height - 1) * self.pixel_size_y - half_y,
            self.origin_y + half_y,
        )

    def worldfile(self) -> str:
        """Six-line world file: x size, rotations, negative y size, origin."""
        values = (self.pixel_size, 0.0, 0.0, -self.pixel_size_y,
                  self.origin_x, self.origin_y)
        return "\n".join(repr(float(v)) for v in values) + "\n"


def georef_from_worldfile(text: str, width: int, height: int) -> Georef:
    try:
        a, d, b, e, c, f = (float(v) for v in text.split())
    except ValueError as exc:
        raise ValueError(f"world file must hold 6 numbers: {exc}") from exc
    if d != 0 or b != 0:
        raise ValueError("rotated world files are not supported")
    if a <= 0 or e >= 0:
        raise ValueError("world file must describe north-up pixels")
    return Georef(origin_x=c, origin_y=f, pixel_size=a,
                  width=width, height=height, pixel_size_y=-e)


@dataclass(frozen=True)
class Raster:
    """Float32 grid in [0, 1] with its georeference."""

    georef: Georef
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float32))
        if values.shape != (self.georef.height, self.georef.width):
            raise ValueError(
                f"values shape {values.shape} does not match georef "
                f"({self.georef.height}, {self.georef.width})"
            )
        if len(values) and (values.min() < 0 or values.max() > 1):
            raise ValueError("raster values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def is_binary(self) -> bool:
        return bool(np.isin(self.values, (0.0, 1.0)).all())

    def foreground(self) -> np.ndarray:
        """Boolean mask of nonzero pixels."""
        return self.values > 0


def project_topdown(
    cloud: PointCloud, pixel_size: float, extent: BoundingBox2D | None = None
) -> Raster:
    """Rasterize point occupancy seen from above, normalized by the max count.

    The grid covers ``extent`` when given (points outside are ignored),
    otherwise the cloud's own bounding box.  Pixel values are per-pixel
    point counts divided by the maximum count, so they lie in (0, 1] on
    occupied pixels and 0 elsewhere.
    """
    if len(cloud) == 0:
        raise ValueError("cannot rasterize an empty cloud")
    if pixel_size <= 0:
        raise ValueError("pixel_size must be positive")
    box = extent if extent is not None else bounding_box(cloud)
    width = max(1, math.ceil(box.width / pixel_size))
    height = max(1, math.ceil(box.height / pixel_size))
    georef = Georef(
        origin_x=box.x_min + pixel_size / 2,
        origin_y=box.y_max - pixel_size / 2,
        pixel_size=pixel_size,
        width=width,
        height=height,
    )
    x, y = cloud.x.astype(np.float64), cloud.y.astype(np.float64)
    inside = (x >= box.x_min) & (x <= box.x_max) & (y >= box.y_min) & (y <= box.y_max)
    cols = np.clip(np.floor((x[inside] - box.x_min) / pixel_size).astype(np.int64),
                   0, width - 1)
    rows = np.clip(np.floor((box.y_max - y[inside]) / pixel_size).astype(np.int64),
                   0, height - 1)
    counts = np.bincount(rows * width + cols, minlength=height * width)
    counts = counts.reshape(height, width).astype(np.float64)
    peak = counts.max()
    if peak == 0:
        raise ValueError("no points fall inside the requested extent")
    return Raster(georef=georef, values=counts / peak)


def gaussian_value(x: float, y: float, sigma: float) -> float:
    """Isotropic 2D Gaussian density at offset (x, y)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return math.exp(-(x * x + y * y) / (2.0 * sigma * sigma)) / (
        2.0 * math.pi * sigma * sigma
    )


@dataclass(frozen=True)
class GaussianKernel:
    """Discrete blur kernel: (2*radius+1)^2 weights summing to 1."""

    sigma: float
    radius: int
    weights: np.ndarray

    def __post_init__(self) -> None:
        size = 2 * self.radius + 1
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        if w.shape != (size, size):
            raise ValueError(f"weights must be ({size}, {size})")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("kernel weights must sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def gaussian_kernel(sigma: float) -> GaussianKernel:
    """Sample the Gaussian at integer offsets out to ceil(3*sigma), renormalized."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = math.ceil(3.0 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    xx, yy = np.meshgrid(offsets, offsets)
    weights = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma)) / (
        2.0 * math.pi * sigma * sigma
    )
    weights /= weights.sum()
    return GaussianKernel(sigma=sigma, radius=radius, weights=weights)


def blur(raster: Raster, kernel: GaussianKernel) -> Raster:
    """Convolve with the Gaussian kernel, replicating border pixels.

    The kernel is separable, so the blur runs as two 1D passes; with
    replicate padding applied per axis this equals the full 2D convolution
    to floating-point accuracy.  Output values stay within [0, 1].
    """
    offsets = np.arange(-kernel.radius, kernel.radius + 1, dtype=np.float64)
    g = np.exp(-(offsets * offsets) / (2.0 * kernel.sigma * kernel.sigma))
    g /= g.sum()
    values = raster.values.astype(np.float64)
    values = ndimage.convolve1d(values, g, axis=0, mode="nearest")
    values = ndimage.convolve1d(values, g, axis=1, mode="nearest")
    return Raster(georef=raster.georef, values=np.clip(values, 0.0, 1.0))


def normalize(raster: Raster) -> Raster:
    """Scale values so the maximum becomes 1."""
    peak = float(raster.values.max())
    if peak == 0:
        raise ValueError("cannot normalize an all-zero raster")
    return Raster(georef=raster.georef, values=raster.values / peak)


def binarize(raster: Raster, threshold: float) -> Raster:
    """Threshold to {0, 1}: a pixel is set iff its value >= threshold.

    Idempotent for thresholds in (0, 1].
    """
    if not 0 <= threshold <= 1:
        raise ValueError("threshold must be in [0, 1]")
    return Raster(
        georef=raster.georef,
        values=(raster.values >= threshold).astype(np.float32),
    )


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".pgw")


def write_png(raster: Raster, path: str | Path) -> None:
    """Write an 8-bit grayscale PNG and its world-file sidecar (.pgw)."""
    path = Path(path)
    img = Image.fromarray(
        np.round(raster.values * 255.0).astype(np.uint8), mode="L"
    )
    img.save(path, format="PNG")
    _sidecar_path(path).write_text(raster.georef.worldfile())


def read_png(path: str | Path) -> Raster:
    """Read a grayscale PNG with its sidecar back into a raster."""
    path = Path(path)
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise FileNotFoundError(f"missing world-file sidecar {sidecar}")
    img = Image.open(path).convert("L")
    values = np.asarray(img, dtype=np.float32) / 255.0
    georef = georef_from_worldfile(sidecar.read_text(), img.width, img.height)
    return Raster(georef=georef, values=values)


def write_indexed_png(
    classes: np.ndarray,
    palette: dict[int, tuple[int, int, int]],
    path: str | Path,
    georef: Georef | None = None,
) -> None:
    """Write a small-integer class image as a palette PNG.

    ``classes`` must only contain keys of ``palette``.  When a georef is
    given, the world-file sidecar is written alongside.
    """
    classes = np.asarray(classes)
    if classes.dtype.kind not in "iu":
        raise ValueError("class image must be integer-typed")
    present = set(np.unique(classes).tolist())
    missing = present - set(palette)
    if missing:
        raise ValueError(f"classes {sorted(missing)} missing from the palette")
    path = Path(path)
    img = Image.fromarray(classes.astype(np.uint8), mode="P")
    flat = [0] * (256 * 3)
    for idx, rgb in palette.items():
        flat[3 * idx:3 * idx + 3] = rgb
    img.putpalette(flat)
    img.save(path, format="PNG")
    if georef is not None:
        _sidecar_path(path).write_text(georef.worldfile())
