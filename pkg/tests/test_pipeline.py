from __future__ import annotations

import json

import numpy as np
import pytest

from lidar_roads.cloud import PointCloud, read_ply
from lidar_roads.config import PipelineConfig
from lidar_roads.pipeline import (
    STAGE_NAMES,
    PipelineError,
    run_extract,
    stages_to_csv,
    stages_to_json,
)
from lidar_roads.scenes import ROAD, SceneSpec, generate, truth_iou_oracle


def _wall_cloud():
    """A single vertical facade: every chunk is too steep to be ground."""
    rng = np.random.default_rng(0)
    n = 1500
    return PointCloud(np.column_stack([
        rng.normal(0.0, 0.02, n),
        rng.uniform(0.0, 30.0, n),
        rng.uniform(0.0, 10.0, n),
    ]))


class TestRunExtract:
    def test_stage_sequence(self, small_straight_result):
        names = [s.name for s in small_straight_result.stages]
        assert tuple(names) == STAGE_NAMES
        assert len(names) == 8

    def test_voxel_stage_prepended(self, small_straight_scene):
        config = PipelineConfig(voxel=0.4, figures=False)
        result = run_extract(small_straight_scene.cloud, config)
        names = [s.name for s in result.stages]
        assert len(names) == 9
        assert names[0] == "voxel"
        assert tuple(names[1:]) == STAGE_NAMES
        assert result.stages[0].output_points < result.stages[0].input_points

    def test_stage_chain_contiguous(self, small_straight_result):
        stages = small_straight_result.stages
        for prev, cur in zip(stages, stages[1:]):
            assert prev.output_points == cur.input_points
        assert all(s.elapsed_s >= 0 for s in stages)

    def test_extraction_quality(self, small_straight_scene, small_straight_result):
        report = truth_iou_oracle(small_straight_result.road, small_straight_scene)
        assert report.iou >= 0.8
        stats = small_straight_result.stats
        assert stats.original_points == len(small_straight_scene.cloud)
        assert stats.kept_points == len(small_straight_result.road)
        assert 0 < stats.reduction_pct < 100

    def test_road_points_mostly_road_labelled(
        self, small_straight_scene, small_straight_result
    ):
        scene = small_straight_scene
        road_xyz = {tuple(p) for p in scene.cloud.xyz[scene.labels == ROAD].tolist()}
        hits = sum(
            tuple(p) in road_xyz for p in small_straight_result.road.xyz.tolist()
        )
        assert hits / len(small_straight_result.road) >= 0.95

    def test_result_structures(self, small_straight_result):
        result = small_straight_result
        assert len(result.final_centerlines) >= 1
        assert result.skeleton.raster.is_binary()
        assert result.final_skeleton.n_components == 1
        assert result.mask.foreground().sum() > 0
        # corner anchors extend ground beyond the road footprint
        assert len(result.ground) == result.stages[2].output_points

    def test_artifacts_written(self, small_straight_scene, tmp_path):
        outdir = tmp_path / "run"
        config = PipelineConfig(figures=False)
        result = run_extract(small_straight_scene.cloud, config, outdir=outdir)
        expected = {
            "ground.ply", "road.ply", "skeleton.png", "skeleton.pgw",
            "centerlines.json", "centerlines.ply", "stages.json", "stages.csv",
        }
        assert expected <= {p.name for p in outdir.iterdir()}
        assert not (outdir / "MANIFEST").exists()
        road = read_ply(outdir / "road.ply")
        assert np.array_equal(road.xyz, result.road.xyz)
        doc = json.loads((outdir / "centerlines.json").read_text())
        assert doc["type"] == "FeatureCollection"

    def test_figures_rendered(self, small_straight_scene, tmp_path):
        outdir = tmp_path / "run"
        config = PipelineConfig(figures=True)
        run_extract(small_straight_scene.cloud, config, outdir=outdir)
        for name in ("fig_cloud.png", "fig_skeleton.png", "fig_centerlines.png"):
            path = outdir / name
            assert path.exists() and path.stat().st_size > 0

    def test_failure_manifest(self, tmp_path):
        outdir = tmp_path / "run"
        with pytest.raises(PipelineError) as err:
            run_extract(_wall_cloud(), PipelineConfig(figures=False), outdir=outdir)
        assert err.value.stage == "ground_filter"
        manifest = (outdir / "MANIFEST").read_text()
        assert "status: failed" in manifest
        assert "stage: ground_filter" in manifest
        assert "completed_stages: preprocess" in manifest

    def test_failure_without_outdir(self):
        with pytest.raises(PipelineError, match="ground_filter"):
            run_extract(_wall_cloud(), PipelineConfig(figures=False))

    def test_deterministic_across_runs(self, small_straight_scene):
        config = PipelineConfig(figures=False)
        a = run_extract(small_straight_scene.cloud, config)
        b = run_extract(small_straight_scene.cloud, config)
        assert np.array_equal(a.road.xyz, b.road.xyz)
        assert len(a.final_centerlines) == len(b.final_centerlines)
        for la, lb in zip(a.final_centerlines, b.final_centerlines):
            assert np.array_equal(la.xyz, lb.xyz)


class TestReports:
    def test_stages_json_shape(self, small_straight_result):
        doc = stages_to_json(small_straight_result)
        assert set(doc) == {"config", "stages", "stats"}
        assert doc["config"]["knn"] == 8
        assert [s["name"] for s in doc["stages"]] == list(STAGE_NAMES)
        for row in doc["stages"]:
            assert set(row) == {"name", "input_points", "output_points", "elapsed_s"}
        json.dumps(doc)

    def test_stages_csv_shape(self, small_straight_result):
        text = stages_to_csv(small_straight_result.stages)
        lines = text.strip().splitlines()
        assert lines[0] == "stage,input_points,output_points,elapsed_s"
        assert len(lines) == 1 + len(STAGE_NAMES)
        first = lines[1].split(",")
        assert first[0] == "preprocess"
        assert int(first[1]) == small_straight_result.stages[0].input_points
