"""End-to-end road extraction: cloud in, road points and centrelines out.

Stages run in a fixed order, each timed and sized, so a run leaves an
audit trail (stages.json / stages.csv) where every stage's output count is
the next stage's input count.  A failing stage aborts the run; when an
output directory is set, a MANIFEST records what was written before the
failure.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .centerline import (
    Centerline3D,
    RegionGrowParams,
    SavGolParams,
    centerlines_to_cloud,
    centerlines_to_geojson,
    fit_centerlines,
    region_grow_indices,
    road_skeleton,
)
from .cloud import (
    PointCloud,
    bounding_box,
    build_index,
    voxel_downsample,
    write_ply,
)
from .config import PipelineConfig
from .evaluate import RunStats, run_stats
from .ground import GroundFilterParams, add_alignment_corners, filter_ground
from .preprocess import (
    DbscanParams,
    OutlierFilterParams,
    dbscan,
    drop_small_clusters,
    remove_statistical_outliers,
)
from .raster import Raster, binarize, blur, gaussian_kernel, normalize, project_topdown, write_png
from .skeleton import SkeletonGraph, SkeletonParams, bridge_endpoints, build_graph, prune_branches, thin

logger = logging.getLogger(__name__)

STAGE_NAMES = (
    "preprocess", "ground_filter", "corners", "raster",
    "skeleton", "centerline", "region_grow", "final_centerline",
)


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names the culprit."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class StageReport:
    name: str
    input_points: int
    output_points: int
    elapsed_s: float

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "input_points": self.input_points,
            "output_points": self.output_points,
            "elapsed_s": self.elapsed_s,
        }


@dataclass(frozen=True)
class ExtractResult:
    config: PipelineConfig
    road: PointCloud
    ground: PointCloud            # ground surface points plus corner anchors
    mask: Raster                  # binarized ground occupancy
    skeleton: SkeletonGraph       # cleaned skeleton of the ground mask
    final_skeleton: SkeletonGraph  # skeleton of the extracted road
    centerlines: list[Centerline3D]        # initial fits driving region growth
    final_centerlines: list[Centerline3D]  # deliverable centrelines
    stages: list[StageReport]
    stats: RunStats


def _report_rows(stages: list[StageReport]) -> list[dict]:
    return [s.to_json() for s in stages]


def stages_to_json(result: ExtractResult) -> dict:
    return {
        "config": dataclasses.asdict(result.config),
        "stages": _report_rows(result.stages),
        "stats": result.stats.to_json(),
    }


def stages_to_csv(stages: list[StageReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["stage", "input_points", "output_points", "elapsed_s"])
    for s in stages:
        writer.writerow([s.name, s.input_points, s.output_points, f"{s.elapsed_s:.6f}"])
    return buf.getvalue()


class _Run:
    """Tracks stage reports and written artifacts for one extraction."""

    def __init__(self, outdir: Path | None):
        self.outdir = outdir
        self.reports: list[StageReport] = []
        self.artifacts: list[str] = []
        self._t0 = 0.0
        self._name = ""

    def start(self, name: str) -> None:
        self._name = name
        self._t0 = time.perf_counter()

    def finish(self, n_in: int, n_out: int) -> None:
        elapsed = time.perf_counter() - self._t0
        self.reports.append(StageReport(self._name, n_in, n_out, elapsed))
        logger.info("stage %-16s %9d -> %-9d %.3fs", self._name, n_in, n_out, elapsed)

    def fail(self, exc: BaseException) -> PipelineError:
        return PipelineError(self._name, exc)

    def write(self, name: str, writer) -> None:
        if self.outdir is None:
            return
        path = self.outdir / name
        writer(path)
        self.artifacts.append(name)

    def write_manifest(self, error: PipelineError) -> None:
        if self.outdir is None:
            return
        lines = [
            "status: failed",
            f"stage: {error.stage}",
            f"error: {error.cause}",
            "completed_stages: " + ",".join(r.name for r in self.reports),
            "artifacts:",
        ]
        lines += [f"  {name}" for name in self.artifacts]
        (self.outdir / "MANIFEST").write_text("\n".join(lines) + "\n")


def _json_dump(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_extract(
    cloud: PointCloud,
    config: PipelineConfig = PipelineConfig(),
    outdir: str | Path | None = None,
) -> ExtractResult:
    """Run the full extraction over ``cloud``.

    With ``outdir`` set, artifacts are written as stages complete:
    ground.ply (surface plus corner anchors), road.ply, skeleton.png with
    its worldfile, centerlines.json / centerlines.ply, and the stage audit
    as stages.json and stages.csv.  Report figures are rendered when
    ``config.figures`` is on.  Raises PipelineError when a stage fails,
    after writing a MANIFEST describing the partial run.
    """
    t_total = time.perf_counter()
    outdir = Path(outdir) if outdir is not None else None
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
    run = _Run(outdir)
    workers = config.threads if config.threads > 0 else -1

    try:
        original_n = len(cloud)
        bbox = bounding_box(cloud)
        if config.voxel > 0:
            run.start("voxel")
            work = voxel_downsample(cloud, config.voxel)
            run.finish(original_n, len(work))
        else:
            work = cloud

        run.start("preprocess")
        try:
            kept, _removed = remove_statistical_outliers(
                work, OutlierFilterParams(k=config.knn, alpha=config.alpha),
                workers=workers,
            )
            labels = dbscan(kept, DbscanParams(eps=config.eps, min_pts=config.min_pts))
            pre = drop_small_clusters(kept, labels, config.min_cluster)
        except Exception as exc:
            raise run.fail(exc) from exc
        run.finish(len(work), len(pre))

        run.start("ground_filter")
        try:
            ground = filter_ground(
                pre,
                GroundFilterParams(
                    chunk_size=config.chunk_size,
                    ransac_distance=config.ransac_dist,
                    ransac_iters=config.ransac_iters,
                    max_tilt_deg=config.max_tilt,
                    z_percentile=config.z_percentile,
                    z_band=config.z_band,
                    min_inlier_ratio=config.min_inlier_ratio,
                ),
                seed=config.seed,
                dbscan_params=DbscanParams(eps=config.eps, min_pts=config.min_pts),
            )
            if len(ground) == 0:
                raise ValueError("ground filter kept no points")
        except Exception as exc:
            raise run.fail(exc) from exc
        run.finish(len(pre), len(ground))

        run.start("corners")
        try:
            anchored = add_alignment_corners(ground, bbox, float(ground.z.min()))
        except Exception as exc:
            raise run.fail(exc) from exc
        run.finish(len(ground), len(anchored))
        run.write("ground.ply", lambda p: write_ply(anchored, p))

        run.start("raster")
        try:
            # corners pin the extent but must not count as occupancy, so the
            # raster sees the ground points with the anchored extent override
            extent = bounding_box(anchored)
            density = project_topdown(ground, config.pixel_size, extent=extent)
            mask = binarize(normalize(blur(density, gaussian_kernel(config.sigma))),
                            config.threshold)
        except Exception as exc:
            raise run.fail(exc) from exc
        n_fg = int(mask.foreground().sum())
        run.finish(len(anchored), n_fg)

        skel_params = SkeletonParams(
            max_bridge_gap=config.max_bridge_gap,
            min_branch_len=config.min_branch_len,
        )
        run.start("skeleton")
        try:
            graph = build_graph(thin(mask))
            graph = prune_branches(graph, skel_params.min_branch_len)
            graph = bridge_endpoints(graph, skel_params.max_bridge_gap)
            graph = prune_branches(graph, skel_params.min_branch_len)
        except Exception as exc:
            raise run.fail(exc) from exc
        n_skel = int(graph.raster.foreground().sum())
        run.finish(n_fg, n_skel)
        run.write("skeleton.png", lambda p: write_png(graph.raster, p))

        savgol = SavGolParams(window=config.savgol_window, polyorder=config.savgol_order)
        run.start("centerline")
        try:
            ground_index = build_index(ground, dims=2)
            lines = fit_centerlines(graph, ground, ground_index, savgol,
                                    config.backproject_radius)
            if not lines:
                raise ValueError("no centrelines could be fitted")
        except Exception as exc:
            raise run.fail(exc) from exc
        n_vertices = sum(len(line) for line in lines)
        run.finish(n_skel, n_vertices)

        run.start("region_grow")
        try:
            grow = RegionGrowParams(
                half_width=config.half_width,
                z_tolerance=config.z_tol,
                sample_step=config.sample_step,
            )
            picked: np.ndarray | None = None
            for line in lines:
                idx = region_grow_indices(line, ground, ground_index, grow)
                picked = idx if picked is None else np.union1d(picked, idx)
            road = ground.subset(picked if picked is not None else [])
            if len(road) == 0:
                raise ValueError("region growing selected no points")
        except Exception as exc:
            raise run.fail(exc) from exc
        run.finish(n_vertices, len(road))
        run.write("road.ply", lambda p: write_ply(road, p))

        run.start("final_centerline")
        try:
            final_graph = road_skeleton(
                road, config.pixel_size, config.sigma, config.threshold, skel_params,
            )
            final_lines = fit_centerlines(
                final_graph, road, build_index(road, dims=2), savgol,
                config.backproject_radius,
            )
            if not final_lines:
                raise ValueError("no final centrelines could be fitted")
        except Exception as exc:
            raise run.fail(exc) from exc
        n_final = sum(len(line) for line in final_lines)
        run.finish(len(road), n_final)
    except PipelineError as error:
        run.write_manifest(error)
        raise

    stats = run_stats(original_n, len(road), time.perf_counter() - t_total)
    result = ExtractResult(
        config=config,
        road=road,
        ground=anchored,
        mask=mask,
        skeleton=graph,
        final_skeleton=final_graph,
        centerlines=lines,
        final_centerlines=final_lines,
        stages=run.reports,
        stats=stats,
    )
    run.write("centerlines.json",
              lambda p: _json_dump(centerlines_to_geojson(final_lines), p))
    run.write("centerlines.ply",
              lambda p: write_ply(centerlines_to_cloud(final_lines), p))
    run.write("stages.json", lambda p: _json_dump(stages_to_json(result), p))
    run.write("stages.csv", lambda p: p.write_text(stages_to_csv(run.reports)))
    if outdir is not None and config.figures:
        from . import figures
        run.write("fig_cloud.png", lambda p: figures.save_cloud_figure(cloud, p))
        run.write("fig_skeleton.png",
                  lambda p: figures.save_skeleton_figure(final_graph, p))
        run.write("fig_centerlines.png",
                  lambda p: figures.save_centerlines_figure(road, final_lines, p))
    logger.info(
        "extraction done: %d -> %d points (%.1f%% reduction) in %.2fs",
        stats.original_points, stats.kept_points, stats.reduction_pct, stats.elapsed_s,
    )
    return result
