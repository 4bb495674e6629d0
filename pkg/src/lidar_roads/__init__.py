"""Road surface and centreline extraction from ground-collected LiDAR.

The pipeline filters a cloud down to its ground surface, rasterizes it
top-down, skeletonizes the raster, fits smoothed 3D centrelines and grows
the road surface back out around them.  Companion modules score results
with a voxel/KD-tree IoU, build road-mask ground truth from map tiles and
generate labelled synthetic scenes.
"""
from .centerline import (
    Centerline3D,
    RegionGrowParams,
    SavGolParams,
    backproject,
    centerlines_to_geojson,
    compute_normals,
    final_centerline,
    fit_centerlines,
    region_grow,
    road_skeleton,
    savgol_smooth,
)
from .cloud import (
    BoundingBox2D,
    PlyError,
    PointCloud,
    SpatialIndex,
    bounding_box,
    build_index,
    concat,
    read_ply,
    voxel_downsample,
    write_ply,
)
from .config import ConfigError, PipelineConfig, dump_config, load_config, parse_config
from .evaluate import (
    IoUParams,
    IoUReport,
    RunStats,
    flatten_cloud,
    iou,
    mask_to_cloud,
    overlay,
    run_stats,
)
from .ground import GroundFilterParams, add_alignment_corners, filter_ground, ransac_plane
from .pipeline import ExtractResult, PipelineError, StageReport, run_extract
from .preprocess import (
    NOISE,
    DbscanParams,
    OutlierFilterParams,
    dbscan,
    drop_small_clusters,
    remove_statistical_outliers,
)
from .raster import (
    Georef,
    Raster,
    binarize,
    blur,
    gaussian_kernel,
    normalize,
    project_topdown,
    read_png,
    write_png,
)
from .scenes import LabelledCloud, SceneSpec, generate, road_points, truth_iou_oracle
from .skeleton import (
    SkeletonGraph,
    SkeletonParams,
    bridge_endpoints,
    build_graph,
    cluster_junctions,
    detect_junctions,
    prune_branches,
    thin,
)
from .tiles import GpsBounds, TileCoord, extract_road_mask, gps_to_tile, stitch

__version__ = "0.1.0"

__all__ = [
    "BoundingBox2D", "Centerline3D", "ConfigError", "DbscanParams",
    "ExtractResult", "Georef", "GpsBounds", "GroundFilterParams",
    "IoUParams", "IoUReport", "LabelledCloud", "NOISE",
    "OutlierFilterParams", "PipelineConfig", "PipelineError", "PlyError",
    "PointCloud", "Raster", "RegionGrowParams", "RunStats", "SavGolParams",
    "SceneSpec", "SkeletonGraph", "SkeletonParams", "SpatialIndex",
    "StageReport", "TileCoord", "add_alignment_corners", "backproject",
    "binarize", "blur", "bounding_box", "bridge_endpoints", "build_graph",
    "build_index", "centerlines_to_geojson", "cluster_junctions",
    "compute_normals", "concat", "dbscan", "detect_junctions",
    "drop_small_clusters", "dump_config", "extract_road_mask",
    "filter_ground", "final_centerline", "fit_centerlines", "flatten_cloud",
    "gaussian_kernel", "generate", "gps_to_tile", "iou", "load_config",
    "mask_to_cloud", "normalize", "overlay", "parse_config",
    "project_topdown", "prune_branches", "ransac_plane", "read_ply",
    "read_png", "region_grow", "remove_statistical_outliers", "road_points",
    "road_skeleton", "run_extract", "run_stats", "savgol_smooth", "stitch",
    "thin", "truth_iou_oracle", "voxel_downsample", "write_ply", "write_png",
]
