"""Road-mask ground truth from slippy map tiles.

Web-Mercator tile math, stitching of a tile block into one canvas, removal
of the per-tile watermark band, cropping to a GPS box, and a colour filter
that turns rendered roads into a binary mask.  Tiles are always read from
local sources (a directory tree or a recorded zip archive); nothing is
fetched over the network.
"""
from __future__ import annotations

import logging
import math
import zipfile
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .raster import Georef, Raster
from .skeleton import thin

logger = logging.getLogger(__name__)

TILE_SIZE = 256
MAX_LAT = 85.0511
LABEL_BAND = 22

# Roads render near-white on the reference map style.
DEFAULT_ROAD_RANGES = (((240, 240, 240), (255, 255, 255)),)


class TileError(ValueError):
    """Raised for invalid coordinates or unavailable tiles."""


@dataclass(frozen=True)
class TileCoord:
    zoom: int
    x: int
    y: int

    def __post_init__(self) -> None:
        if self.zoom < 0:
            raise TileError("zoom must be non-negative")
        n = 2 ** self.zoom
        if not (0 <= self.x < n and 0 <= self.y < n):
            raise TileError(f"tile ({self.x}, {self.y}) out of range at zoom {self.zoom}")


@dataclass(frozen=True)
class GpsBounds:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self) -> None:
        if not (-MAX_LAT <= self.lat_min < self.lat_max <= MAX_LAT):
            raise ValueError(f"latitudes must satisfy -{MAX_LAT} <= min < max <= {MAX_LAT}")
        if not (-180.0 <= self.lon_min < self.lon_max <= 180.0):
            raise ValueError("longitudes must satisfy -180 <= min < max <= 180")


def _mercator(lat: float, lon: float, zoom: int) -> tuple[float, float]:
    n = 2 ** zoom
    x = (lon + 180.0) / 360.0 * n
    y = (1.0 - math.asinh(math.tan(math.radians(lat))) / math.pi) / 2.0 * n
    return x, y


def _inverse_mercator(x: float, y: float, zoom: int) -> tuple[float, float]:
    n = 2 ** zoom
    lon = x / n * 360.0 - 180.0
    lat = math.degrees(math.atan(math.sinh(math.pi * (1.0 - 2.0 * y / n))))
    return lat, lon


def gps_to_tile(lat: float, lon: float, zoom: int) -> tuple[TileCoord, tuple[float, float]]:
    """Tile containing a GPS position plus the pixel offset inside it.

    Uses the Web-Mercator tiling: x = (lon + 180)/360 * 2^zoom and
    y = (1 - asinh(tan(lat))/pi)/2 * 2^zoom, with 256-pixel tiles.  Values
    exactly on the far edge clamp into the last tile.  Latitudes beyond
    the Mercator limit or longitudes outside [-180, 180] raise TileError.
    """
    if zoom < 0:
        raise TileError("zoom must be non-negative")
    if not -MAX_LAT <= lat <= MAX_LAT:
        raise TileError(f"latitude {lat} outside +-{MAX_LAT}")
    if not -180.0 <= lon <= 180.0:
        raise TileError(f"longitude {lon} outside +-180")
    x, y = _mercator(lat, lon, zoom)
    n = 2 ** zoom
    tx = min(int(math.floor(x)), n - 1)
    ty = min(int(math.floor(y)), n - 1)
    return TileCoord(zoom, tx, ty), ((x - tx) * TILE_SIZE, (y - ty) * TILE_SIZE)


class TileSource(ABC):
    """Provider of 256x256 RGB tile images."""

    @abstractmethod
    def get(self, coord: TileCoord) -> np.ndarray:
        """Return the tile as a (256, 256, 3) uint8 array; TileError if absent."""


def _check_tile(arr: np.ndarray, coord: TileCoord) -> np.ndarray:
    if arr.shape != (TILE_SIZE, TILE_SIZE, 3):
        raise TileError(f"tile {coord} has shape {arr.shape}, expected 256x256 RGB")
    return arr


class DirectoryTileSource(TileSource):
    """Tiles laid out as {root}/{zoom}/{x}/{y}.png."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise TileError(f"tile directory {self.root} does not exist")

    def get(self, coord: TileCoord) -> np.ndarray:
        path = self.root / str(coord.zoom) / str(coord.x) / f"{coord.y}.png"
        if not path.exists():
            raise TileError(f"missing tile {coord} at {path}")
        img = Image.open(path).convert("RGB")
        return _check_tile(np.asarray(img, dtype=np.uint8), coord)


class ZipTileSource(TileSource):
    """Recorded tile fixture: a zip archive with {zoom}/{x}/{y}.png members."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        if not self.path.exists():
            raise TileError(f"tile archive {self.path} does not exist")
        self._zf = zipfile.ZipFile(self.path)

    def get(self, coord: TileCoord) -> np.ndarray:
        name = f"{coord.zoom}/{coord.x}/{coord.y}.png"
        try:
            data = self._zf.read(name)
        except KeyError:
            raise TileError(f"missing tile {coord} in {self.path}") from None
        img = Image.open(BytesIO(data)).convert("RGB")
        return _check_tile(np.asarray(img, dtype=np.uint8), coord)


def open_tile_source(path: str | Path) -> TileSource:
    """Directory or .zip archive, chosen by what the path points at."""
    path = Path(path)
    if path.is_dir():
        return DirectoryTileSource(path)
    if path.suffix == ".zip":
        return ZipTileSource(path)
    raise TileError(f"{path} is neither a tile directory nor a zip archive")


@dataclass(frozen=True)
class TileMapping:
    """GPS to canvas-pixel mapping for a stitched tile block.

    ``band_starts`` lists the first raw row of each removed watermark band;
    pixel rows are adjusted accordingly after label removal.
    """

    zoom: int
    tile_x0: int
    tile_y0: int
    n_cols: int
    n_rows: int
    band_starts: tuple[int, ...] = ()
    band_height: int = LABEL_BAND

    def gps_to_pixel(self, lat: float, lon: float) -> tuple[float, float]:
        x, y = _mercator(lat, lon, self.zoom)
        px = (x - self.tile_x0) * TILE_SIZE
        py = (y - self.tile_y0) * TILE_SIZE
        for start in self.band_starts:
            py -= min(max(py - start, 0.0), float(self.band_height))
        return px, py

    def pixel_to_gps(self, px: float, py: float) -> tuple[float, float]:
        raw = py
        for k, start in enumerate(sorted(self.band_starts)):
            if raw >= start - k * self.band_height:
                raw += self.band_height
        return _inverse_mercator(
            self.tile_x0 + px / TILE_SIZE, self.tile_y0 + raw / TILE_SIZE, self.zoom
        )

    def with_label_rows_removed(self, tile_rows: int, band: int = LABEL_BAND) -> "TileMapping":
        if self.band_starts:
            raise ValueError("label rows were already removed from this mapping")
        starts = tuple(r * TILE_SIZE - band for r in range(1, tile_rows))
        return replace(self, band_starts=starts, band_height=band)


def stitch(bounds: GpsBounds, zoom: int, source: TileSource) -> tuple[np.ndarray, TileMapping]:
    """Assemble all tiles covering ``bounds`` into one RGB canvas.

    The covered tile block is half-open: a bound lying exactly on a tile
    edge does not pull in the next tile, so a box spanning exactly 2x2
    tiles stitches to 512x512 pixels.  Returns the canvas and the GPS
    mapping for it.
    """
    x_min, y_min = _mercator(bounds.lat_max, bounds.lon_min, zoom)
    x_max, y_max = _mercator(bounds.lat_min, bounds.lon_max, zoom)
    n = 2 ** zoom
    tx0 = min(int(math.floor(x_min)), n - 1)
    ty0 = min(int(math.floor(y_min)), n - 1)
    tx1 = min(max(int(math.ceil(x_max)) - 1, tx0), n - 1)
    ty1 = min(max(int(math.ceil(y_max)) - 1, ty0), n - 1)
    n_cols = tx1 - tx0 + 1
    n_rows = ty1 - ty0 + 1
    canvas = np.zeros((n_rows * TILE_SIZE, n_cols * TILE_SIZE, 3), dtype=np.uint8)
    for row, ty in enumerate(range(ty0, ty1 + 1)):
        for col, tx in enumerate(range(tx0, tx1 + 1)):
            tile = source.get(TileCoord(zoom, tx, ty))
            canvas[row * TILE_SIZE:(row + 1) * TILE_SIZE,
                   col * TILE_SIZE:(col + 1) * TILE_SIZE] = tile
    logger.info("stitched %dx%d tiles at zoom %d", n_cols, n_rows, zoom)
    return canvas, TileMapping(zoom=zoom, tile_x0=tx0, tile_y0=ty0,
                               n_cols=n_cols, n_rows=n_rows)


def remove_label_rows(canvas: np.ndarray, tile_rows: int, band: int = LABEL_BAND) -> np.ndarray:
    """Drop the watermark band at the bottom of every tile row except the last.

    Content below each band shifts up; the output height is the input
    height minus ``band * (tile_rows - 1)``.  The bottom band of the final
    tile row is retained (there is nothing below it to shift up).
    """
    if canvas.ndim != 3 or canvas.shape[0] != tile_rows * TILE_SIZE:
        raise ValueError(
            f"canvas height {canvas.shape[0]} does not match {tile_rows} tile rows"
        )
    if not 0 <= band < TILE_SIZE:
        raise ValueError("band height must lie in [0, 256)")
    doomed = np.concatenate(
        [np.arange(r * TILE_SIZE - band, r * TILE_SIZE) for r in range(1, tile_rows)]
    ) if tile_rows > 1 and band > 0 else np.empty(0, dtype=np.int64)
    return np.delete(canvas, doomed.astype(np.int64), axis=0)


def crop_to_bounds(
    canvas: np.ndarray, mapping: TileMapping, bounds: GpsBounds
) -> np.ndarray:
    """Cut the canvas down to the requested GPS box.

    Corner pixels come from the mapping rounded to the nearest integer, so
    the crop is accurate to within one pixel.  Raises ValueError when the
    box falls outside the canvas or collapses to zero size.
    """
    left, top = mapping.gps_to_pixel(bounds.lat_max, bounds.lon_min)
    right, bottom = mapping.gps_to_pixel(bounds.lat_min, bounds.lon_max)
    li, ti = int(round(left)), int(round(top))
    ri, bi = int(round(right)), int(round(bottom))
    h, w = canvas.shape[:2]
    if not (0 <= li < ri <= w and 0 <= ti < bi <= h):
        raise ValueError(
            f"crop box cols [{li}, {ri}) rows [{ti}, {bi}) outside canvas {w}x{h}"
        )
    return canvas[ti:bi, li:ri].copy()


def extract_road_mask(
    image: np.ndarray,
    ranges=DEFAULT_ROAD_RANGES,
) -> tuple[np.ndarray, np.ndarray]:
    """Binary road mask and its skeleton from a rendered map image.

    A pixel is road when every channel falls inside one of the inclusive
    (low, high) RGB ranges.  Small anti-aliasing gaps are healed with a
    radius-1 morphological closing before thinning.  An empty mask is
    returned as-is with a warning (the skeleton is empty too).
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an RGB image")
    mask = np.zeros(image.shape[:2], dtype=bool)
    for low, high in ranges:
        low = np.asarray(low, dtype=np.int64)
        high = np.asarray(high, dtype=np.int64)
        mask |= ((image >= low) & (image <= high)).all(axis=2)
    if not mask.any():
        logger.warning("no pixels matched the road colour ranges; mask is empty")
        return mask, mask.copy()
    mask = ndimage.binary_closing(mask, structure=np.ones((3, 3), dtype=bool))
    h, w = mask.shape
    georef = Georef(origin_x=0.5, origin_y=h - 0.5, pixel_size=1.0, width=w, height=h)
    skeleton = thin(Raster(georef=georef, values=mask.astype(np.float32)))
    return mask, skeleton.values > 0
