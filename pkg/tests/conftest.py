from __future__ import annotations

import pytest

from lidar_roads import PipelineConfig, SceneSpec, generate, run_extract


@pytest.fixture(scope="session")
def small_straight_scene():
    """Low-density straight scene: fast enough for module-level tests."""
    return generate(SceneSpec(kind="straight", density=10.0, building_count=2, seed=3))


@pytest.fixture(scope="session")
def small_straight_result(small_straight_scene):
    config = PipelineConfig(figures=False)
    return run_extract(small_straight_scene.cloud, config)
