"""Command-line front door: extract, evaluate, stitch, synth.

Exit codes: 0 success, 2 I/O or usage error, 3 bad configuration,
4 pipeline stage failure.  Logs go to stderr; machine-readable artifacts
go to files or stdout only.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .centerline import centerlines_to_geojson
from .cloud import PlyError, PointCloud, read_ply, write_ply
from .config import ConfigError, PipelineConfig, dump_config, load_config
from .evaluate import (
    OVERLAY_PALETTE,
    IoUParams,
    flatten_cloud,
    iou,
    mask_to_cloud,
    overlay,
)
from .pipeline import PipelineError, run_extract
from .raster import Georef, Raster, georef_from_worldfile, read_png, write_indexed_png, write_png
from .scenes import KINDS, SceneSpec, generate, road_points
from .tiles import (
    DEFAULT_ROAD_RANGES,
    GpsBounds,
    TileError,
    crop_to_bounds,
    extract_road_mask,
    open_tile_source,
    remove_label_rows,
    stitch,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_STAGE = 4

# flag name (minus --) doubles as the config field name
_CONFIG_FLAGS: tuple[tuple[str, type], ...] = (
    ("voxel", float), ("knn", int), ("alpha", float), ("eps", float),
    ("min_pts", int), ("min_cluster", int), ("chunk_size", float),
    ("ransac_dist", float), ("ransac_iters", int), ("max_tilt", float),
    ("z_percentile", float), ("z_band", float), ("min_inlier_ratio", float),
    ("pixel_size", float), ("sigma", float), ("threshold", float),
    ("max_bridge_gap", float), ("min_branch_len", int),
    ("savgol_window", int), ("savgol_order", int),
    ("backproject_radius", float), ("half_width", float), ("z_tol", float),
    ("sample_step", float), ("seed", int), ("threads", int),
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("pipeline parameters (override config file)")
    for name, typ in _CONFIG_FLAGS:
        group.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)
    group.add_argument("--figures", action=argparse.BooleanOptionalAction, default=None,
                       help="render report figures (default on)")


def _effective_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig()
    if args.config is not None:
        config = load_config(args.config, base=config)
    overrides = {}
    for name, _typ in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "figures", None) is not None:
        overrides["figures"] = args.figures
    if overrides:
        try:
            config = dataclasses.replace(config, **overrides)
        except ConfigError:
            raise
    return config


def cmd_extract(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    if args.dump_config:
        sys.stdout.write(dump_config(config))
        return EXIT_OK
    if args.input is None:
        logger.error("extract requires an input PLY (or --dump-config)")
        return EXIT_IO
    if args.outdir is None:
        logger.error("extract requires --outdir")
        return EXIT_IO
    cloud = read_ply(args.input)
    run_extract(cloud, config, args.outdir)
    return EXIT_OK


def _apply_transform(cloud: PointCloud, path: Path) -> PointCloud:
    """Affine-map cloud XY with the 6 numbers a b c d e f: x'=ax+by+c, y'=dx+ey+f."""
    try:
        a, b, c, d, e, f = (float(v) for v in path.read_text().split())
    except ValueError as exc:
        raise ValueError(f"transform file must hold 6 numbers: {exc}") from exc
    xyz = cloud.xyz.astype(np.float64)
    out = xyz.copy()
    out[:, 0] = a * xyz[:, 0] + b * xyz[:, 1] + c
    out[:, 1] = d * xyz[:, 0] + e * xyz[:, 1] + f
    return PointCloud(out)


def cmd_evaluate(args: argparse.Namespace) -> int:
    pred = read_ply(args.pred)
    truth_path = Path(args.truth)
    params = IoUParams(voxel=args.voxel, threshold=args.threshold)
    if args.transform is not None:
        pred = _apply_transform(pred, Path(args.transform))
    if truth_path.suffix.lower() == ".png":
        mask = read_png(truth_path)
        truth_cloud = mask_to_cloud(mask)
        pred_cmp = flatten_cloud(pred)
        report = iou(pred_cmp, truth_cloud, params)
        if args.overlay is not None:
            classes = overlay(mask, pred_cmp)
            write_indexed_png(classes, OVERLAY_PALETTE, args.overlay,
                              georef=mask.georef)
    else:
        if args.overlay is not None:
            logger.error("--overlay requires a PNG mask truth")
            return EXIT_IO
        report = iou(pred, read_ply(truth_path), params)
    json.dump(report.to_json(), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


def _parse_bounds(text: str) -> GpsBounds:
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError("bounds must be latmin,lonmin,latmax,lonmax")
    lat_min, lon_min, lat_max, lon_max = (float(p) for p in parts)
    return GpsBounds(lat_min=lat_min, lat_max=lat_max,
                     lon_min=lon_min, lon_max=lon_max)


def _parse_rgb(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3 or not all(0 <= p <= 255 for p in parts):
        raise ValueError("colour must be R,G,B with components in [0, 255]")
    return tuple(parts)


def _gps_georef(bounds: GpsBounds, width: int, height: int) -> Georef:
    ps_lon = (bounds.lon_max - bounds.lon_min) / width
    ps_lat = (bounds.lat_max - bounds.lat_min) / height
    return Georef(
        origin_x=bounds.lon_min + ps_lon / 2.0,
        origin_y=bounds.lat_max - ps_lat / 2.0,
        pixel_size=ps_lon, pixel_size_y=ps_lat,
        width=width, height=height,
    )


def cmd_stitch(args: argparse.Namespace) -> int:
    bounds = _parse_bounds(args.bounds)
    source = open_tile_source(args.tiles)
    canvas, mapping = stitch(bounds, args.zoom, source)
    canvas = remove_label_rows(canvas, mapping.n_rows, band=args.label_band)
    mapping = mapping.with_label_rows_removed(mapping.n_rows, band=args.label_band)
    cropped = crop_to_bounds(canvas, mapping, bounds)
    georef = _gps_georef(bounds, cropped.shape[1], cropped.shape[0])
    out = Path(args.out)
    Image.fromarray(cropped, mode="RGB").save(out)
    out.with_suffix(".pgw").write_text(georef.worldfile())
    logger.info("wrote %s (%dx%d)", out, cropped.shape[1], cropped.shape[0])
    if args.mask is not None:
        ranges = DEFAULT_ROAD_RANGES
        if args.road_color_min is not None or args.road_color_max is not None:
            lo = _parse_rgb(args.road_color_min or "240,240,240")
            hi = _parse_rgb(args.road_color_max or "255,255,255")
            ranges = ((lo, hi),)
        mask, skeleton = extract_road_mask(cropped, ranges)
        write_png(Raster(georef=georef, values=mask.astype(np.float32)), args.mask)
        if args.skeleton is not None:
            write_png(Raster(georef=georef, values=skeleton.astype(np.float32)),
                      args.skeleton)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SceneSpec(
        kind=args.kind,
        road_width=args.road_width,
        extent=args.extent,
        density=args.density,
        building_count=args.buildings,
        noise_fraction=args.noise,
        seed=args.seed,
    )
    scene = generate(spec)
    write_ply(scene.cloud, args.out)
    logger.info("wrote %s (%d points)", args.out, len(scene.cloud))
    if args.truth is not None:
        write_ply(road_points(scene), args.truth)
    if args.mask is not None:
        write_png(scene.truth_mask, args.mask)
    if args.centerline is not None:
        coords = [[float(v) for v in row] for row in scene.truth_centerline]
        geo = {
            "type": "FeatureCollection",
            "features": [{
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": coords},
                "properties": {"kind": spec.kind},
            }],
        }
        Path(args.centerline).write_text(json.dumps(geo, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lidar-roads",
        description="Extract road surfaces and centrelines from LiDAR clouds.",
    )
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p_ext = sub.add_parser("extract", help="run the extraction pipeline on a PLY cloud")
    p_ext.add_argument("input", nargs="?", help="input PLY point cloud")
    p_ext.add_argument("-o", "--outdir", help="directory for artifacts")
    p_ext.add_argument("--config", help="key = value config file")
    p_ext.add_argument("--dump-config", action="store_true",
                       help="print the effective config and exit")
    _add_config_flags(p_ext)
    p_ext.set_defaults(func=cmd_extract)

    p_eval = sub.add_parser("evaluate", help="IoU between an extraction and a truth")
    p_eval.add_argument("pred", help="extracted cloud (PLY)")
    p_eval.add_argument("truth", help="truth cloud (PLY) or mask (PNG with worldfile)")
    p_eval.add_argument("--voxel", type=float, default=0.5)
    p_eval.add_argument("--threshold", type=float, default=0.5)
    p_eval.add_argument("--transform",
                        help="6-number affine file mapping cloud XY into the truth frame")
    p_eval.add_argument("--overlay", help="write a truth/extraction class PNG here")
    p_eval.set_defaults(func=cmd_evaluate)

    p_st = sub.add_parser("stitch", help="build a road mask from map tiles")
    p_st.add_argument("--bounds", required=True,
                      help="latmin,lonmin,latmax,lonmax in degrees")
    p_st.add_argument("--zoom", type=int, required=True)
    p_st.add_argument("--tiles", required=True,
                      help="tile directory or zip with {z}/{x}/{y}.png layout")
    p_st.add_argument("--out", required=True, help="stitched, cropped map PNG")
    p_st.add_argument("--mask", help="binary road mask PNG")
    p_st.add_argument("--skeleton", help="road skeleton PNG")
    p_st.add_argument("--label-band", type=int, default=22,
                      help="watermark rows removed at tile-row seams")
    p_st.add_argument("--road-color-min", help="lower RGB bound, e.g. 240,240,240")
    p_st.add_argument("--road-color-max", help="upper RGB bound, e.g. 255,255,255")
    p_st.set_defaults(func=cmd_stitch)

    p_syn = sub.add_parser("synth", help="generate a labelled synthetic scene")
    p_syn.add_argument("--kind", choices=KINDS, default="straight")
    p_syn.add_argument("--out", required=True, help="scene cloud PLY")
    p_syn.add_argument("--truth", help="road-labelled points PLY")
    p_syn.add_argument("--mask", help="road footprint mask PNG")
    p_syn.add_argument("--centerline", help="truth centreline GeoJSON")
    p_syn.add_argument("--seed", type=int, default=0)
    p_syn.add_argument("--road-width", type=float, default=8.0)
    p_syn.add_argument("--extent", type=float, default=100.0)
    p_syn.add_argument("--density", type=float, default=50.0)
    p_syn.add_argument("--buildings", type=int, default=3)
    p_syn.add_argument("--noise", type=float, default=0.02)
    p_syn.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, args.log_level),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except PipelineError as exc:
        logger.error("%s", exc)
        return EXIT_STAGE
    except (OSError, PlyError, TileError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
