from dataclasses import replace

import numpy as np
import pytest

from src.application.collision import check_collision, segment_collides
from src.application.planner import escape_start, polar_candidates, rrt_star, sample_endpoint, shortcut_path
from src.config.settings import EscapeConfig
from src.domain.entities.scene import DepthMap, OrientedBox3
from src.domain.errors import ConfigError, EscapeFailed, GoalInCollision, MaxIterationsExceeded, StartInCollision
from src.domain.value_objects.planning import DestinationRegion, PlannerParams, PlanResult

MOVING = OrientedBox3(np.zeros(3), np.full(3, 0.05))


def test_polar_candidates_start_at_center_and_stay_in_region():
    region = DestinationRegion(np.array([1.0, 0.0, 2.0]), 0.05, 0.05)
    candidates = polar_candidates(region)
    assert candidates[0] == (1.0, 2.0)
    # the 3 cm ring fits entirely, eight points
    assert len([c for c in candidates if abs(np.hypot(c[0] - 1.0, c[1] - 2.0) - 0.03) < 1e-9]) == 8
    assert all(region.contains_xz(x, z) for x, z in candidates)


def test_sample_endpoint_rests_on_platform():
    region = DestinationRegion(np.zeros(3), 0.1, 0.1)
    point = sample_endpoint(region, 0.5, 0.2, lambda p: True)
    assert point == pytest.approx([0.0, 0.61, 0.0])


def test_sample_endpoint_moves_off_blocked_center():
    region = DestinationRegion(np.zeros(3), 0.1, 0.1)
    point = sample_endpoint(region, 0.5, 0.2, lambda p: np.hypot(p[0], p[2]) > 0.01)
    assert point == pytest.approx([0.03, 0.61, 0.0])


def test_sample_endpoint_none_when_everything_blocked():
    region = DestinationRegion(np.zeros(3), 0.1, 0.1)
    assert sample_endpoint(region, 0.5, 0.2, lambda p: False) is None


def test_rrt_star_free_space_is_straight():
    result = rrt_star([0, 0, 0], [1, 0, 0], MOVING, [])
    assert result.path[0] == pytest.approx([0, 0, 0])
    assert result.path[-1] == pytest.approx([1, 0, 0])
    assert result.cost == pytest.approx(1.0)
    assert np.all(np.linalg.norm(np.diff(result.path, axis=0), axis=1) <= 0.05 + 1e-9)


def test_rrt_star_threads_gap_in_wall(make_object):
    walls = [
        make_object("upper", [0.5, 0.0, 0.6], [0.05, 1.0, 0.4]),
        make_object("lower", [0.5, 0.0, -0.6], [0.05, 1.0, 0.4]),
    ]
    bounds = (np.array([-0.5, -0.3, -0.3]), np.array([1.5, 0.3, 1.0]))
    result = rrt_star([0, 0, 0.5], [1, 0, 0.5], MOVING, walls, bounds=bounds)
    path = result.path
    assert path[-1] == pytest.approx([1, 0, 0.5])
    assert path[:, 2].min() < 0.2
    for a, b in zip(path[:-1], path[1:]):
        assert not segment_collides(MOVING, a, b, walls)


def test_rrt_star_rejects_colliding_endpoints(make_object):
    block = [make_object("block", [0, 0, 0], [0.2, 0.2, 0.2])]
    with pytest.raises(StartInCollision):
        rrt_star([0, 0, 0], [1, 0, 0], MOVING, block)
    with pytest.raises(GoalInCollision):
        rrt_star([1, 0, 0], [0, 0, 0], MOVING, block)


def test_rrt_star_gives_up_behind_closed_wall(make_object):
    wall = [make_object("wall", [0.5, 0, 0], [0.05, 2.0, 2.0])]
    with pytest.raises(MaxIterationsExceeded) as info:
        rrt_star([0, 0, 0], [1, 0, 0], MOVING, wall, params=PlannerParams(max_iterations=300))
    assert info.value.iterations == 300
    assert info.value.best_distance > 0.5


def test_rrt_star_is_deterministic_per_seed(make_object):
    obstacle = [make_object("post", [0.5, 0, 0], [0.1, 0.5, 0.1])]
    params = PlannerParams(rng_seed=11, shortcut=False)
    first = rrt_star([0, 0, 0], [1, 0, 0], MOVING, obstacle, params=params)
    second = rrt_star([0, 0, 0], [1, 0, 0], MOVING, obstacle, params=params)
    assert np.array_equal(first.path, second.path)
    other = rrt_star([0, 0, 0], [1, 0, 0], MOVING, obstacle, params=replace(params, rng_seed=12))
    assert other.path[-1] == pytest.approx([1, 0, 0])


def test_shortcut_path_drops_visible_corners():
    path = np.array([[0, 0, 0], [0.5, 0.1, 0], [1, 0, 0], [1, 1, 0]], dtype=float)
    assert shortcut_path(path, lambda a, b: True).tolist() == [[0, 0, 0], [1, 1, 0]]
    assert np.array_equal(shortcut_path(path, lambda a, b: False), path)


def test_escape_start_free_start_is_untouched(make_object):
    result = escape_start([0, 0, 0], MOVING, [make_object("far", [2, 0, 0], [0.1, 0.1, 0.1])])
    assert result.mode == "none"
    assert result.point == pytest.approx([0, 0, 0])
    assert len(result.segment) == 0


def test_escape_start_geometric_push(make_object):
    obstacle = [make_object("side", [0.06, 0, 0], [0.05, 0.05, 0.05])]
    result = escape_start([0, 0, 0], MOVING, obstacle)
    assert result.mode == "geometric"
    assert result.point == pytest.approx([-0.041, 0.0, 0.0])
    assert not check_collision(MOVING, result.point, obstacle)
    assert result.segment.shape == (2, 3)


def test_escape_start_visual_picks_open_direction(pinhole, make_object):
    obstacle = [make_object("box", [0, 0, 2], [0.05, 0.05, 0.05])]
    depth = DepthMap(np.full((100, 100), 10.0))
    result = escape_start([0, 0, 2], MOVING, obstacle, depth=depth, camera=pinhole)
    assert result.mode == "visual"
    # every direction is open, so the first label (left, -x here) wins
    assert result.point[0] < -0.09
    assert result.point[1:] == pytest.approx([0.0, 2.0])


def test_escape_start_fails_inside_large_enclosure(make_object):
    enclosure = [make_object("room", [0, 0, 0], [5.0, 5.0, 5.0])]
    with pytest.raises(EscapeFailed):
        escape_start([0, 0, 0], MOVING, enclosure, config=EscapeConfig(max_distance=0.1))


def test_full_path_joins_escape_prefix_once():
    path = np.array([[0.2, 0.0, 0.0], [0.5, 0.0, 0.0]])
    prefix = np.array([[0.0, 0.0, 0.0], [0.2, 0.0, 0.0]])
    result = PlanResult(path, 0.3, 10, escape_prefix=prefix)
    np.testing.assert_allclose(result.full_path, [[0.0, 0.0, 0.0], [0.2, 0.0, 0.0], [0.5, 0.0, 0.0]])
    assert replace(result, escape_prefix=prefix[:1]).full_path is path


def test_rrt_star_joins_goal_within_tolerance():
    params = PlannerParams(goal_bias=0.0, goal_tolerance=0.2, rng_seed=5)
    result = rrt_star([0, 0, 0], [1, 0, 0], MOVING, [], params=params)
    assert result.path[-1] == pytest.approx([1, 0, 0])
    assert np.all(np.linalg.norm(np.diff(result.path, axis=0), axis=1) <= params.step_size + 1e-9)
    with pytest.raises(ConfigError):
        PlannerParams(goal_tolerance=0.0)
