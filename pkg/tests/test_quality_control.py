import numpy as np
import pytest

from src.application.quality_control import min_displacement, occlusion_ratio, run_qc
from src.domain.entities.scene import DepthMap, OccupancyGrid
from src.domain.entities.trace import Trace
from src.domain.value_objects.quality import RejectReason


@pytest.fixture
def straight(pinhole):
    return Trace.from_world(pinhole, [[-0.5, 0.0, 2.0], [0.5, 0.0, 2.0]])


def test_occlusion_half_hidden_behind_wall(pinhole, straight):
    values = np.full((100, 100), 10.0)
    values[:, 50:] = 1.0
    assert occlusion_ratio(straight, DepthMap(values), pinhole) == pytest.approx(0.5, abs=0.02)


def test_occlusion_extremes(pinhole, straight):
    assert occlusion_ratio(straight, DepthMap(np.full((100, 100), 10.0)), pinhole) == 0.0
    assert occlusion_ratio(straight, DepthMap(np.full((100, 100), 1.0)), pinhole) == 1.0
    # missing readings never occlude
    assert occlusion_ratio(straight, DepthMap(np.zeros((100, 100))), pinhole) == 0.0


def test_occlusion_ignores_masked_waypoints(pinhole, straight):
    depth = DepthMap(np.full((100, 100), 1.0))
    assert occlusion_ratio(straight, depth, pinhole, ignore_mask=np.ones((100, 100), dtype=bool)) == 0.0
    left_half = np.zeros((100, 100), dtype=bool)
    left_half[:, :50] = True
    assert occlusion_ratio(straight, depth, pinhole, ignore_mask=left_half) == 1.0


def test_min_displacement_scales_with_volume(make_object):
    assert min_displacement(make_object("big", [0, 0, 0], [0.5, 0.5, 0.5]), 0.15) == pytest.approx(0.15)
    assert min_displacement(make_object("small", [0, 0, 0], [0.1, 0.1, 0.1]), 0.15) == pytest.approx(0.03)


def _trace(scene, end):
    return Trace.from_world(scene.camera, [[0.0, 0.0, 2.0], end])


def test_run_qc_accepts_clean_trace(flat_scene):
    scene = flat_scene()
    verdict = run_qc(_trace(scene, [0.2, 0.0, 2.0]), scene, scene.object("cube"))
    assert verdict.accepted
    assert verdict.reason is None
    assert verdict.details["displacement"] == pytest.approx(0.2)
    assert verdict.details["threshold"] == pytest.approx(0.03)


def test_run_qc_blocklisted_category(flat_scene, make_object):
    scene = flat_scene(make_object("desk", [0, 0, 2], [0.1, 0.1, 0.1], category="Table"))
    verdict = run_qc(_trace(scene, [0.2, 0.0, 2.0]), scene, scene.object("desk"))
    assert verdict.reason == RejectReason.BLOCKLIST


def test_run_qc_out_of_frame(flat_scene):
    scene = flat_scene()
    verdict = run_qc(_trace(scene, [5.0, 0.0, 2.0]), scene, scene.object("cube"))
    assert verdict.reason == RejectReason.OUT_OF_FRAME
    assert verdict.details["outside"] == 1.0


def test_run_qc_occluded(flat_scene):
    scene = flat_scene(depth=1.0)
    verdict = run_qc(_trace(scene, [0.2, 0.0, 2.0]), scene, scene.object("cube"))
    assert verdict.reason == RejectReason.OCCLUSION


def test_run_qc_too_short(flat_scene):
    scene = flat_scene()
    verdict = run_qc(_trace(scene, [0.02, 0.0, 2.0]), scene, scene.object("cube"))
    assert verdict.reason == RejectReason.TOO_SHORT


def test_run_qc_collision_sweep(flat_scene):
    scene = flat_scene()
    axis = np.arange(-0.04, 0.0401, 0.02)
    cloud = np.array(np.meshgrid(axis, axis, axis)).reshape(3, -1).T + np.array([0.0, 0.0, 2.0])
    xs, ys, zs = np.meshgrid(np.arange(0.15, 0.2501, 0.01), np.arange(-0.1, 0.1001, 0.01), np.arange(1.9, 2.1001, 0.01))
    occupancy = OccupancyGrid.from_points(np.column_stack([xs.ravel(), ys.ravel(), zs.ravel()]), 0.02)
    trace = _trace(scene, [0.2, 0.0, 2.0])
    verdict = run_qc(trace, scene, scene.object("cube"), object_points=cloud, occupancy=occupancy)
    assert verdict.reason == RejectReason.COLLISION
    assert verdict.details["sweep"] > 0.2
    clear = run_qc(trace, scene, scene.object("cube"), object_points=cloud + np.array([0, 0.5, 0]), occupancy=occupancy)
    assert clear.accepted
    assert clear.details["sweep"] == 0.0


def test_verdict_serializes_rounded(flat_scene):
    scene = flat_scene()
    record = run_qc(_trace(scene, [0.2, 0.0, 2.0]), scene, scene.object("cube")).to_dict()
    assert record["accepted"] is True
    assert record["displacement"] == 0.2
