import numpy as np
import pytest

from src.application.calibration import (
    check_keypoint_budget, closure_intervals, extract_traces, gripper_point, occlusion_check, select_arm,
    validate_extrinsics,
)
from src.config.settings import CalibConfig
from src.domain.entities.episode import EefPose, Episode, ExtrinsicsMode, GripperConvention
from src.domain.entities.scene import DepthMap
from src.domain.entities.trace import Trace, TraceFrame
from src.domain.errors import (
    AmbiguousArms, Indeterminate, MultiClosure, NoClosure, Occluded, SceneFormatError, TooManyKeypoints,
    TraceOutOfFrame,
)

# gripper point sits 15 cm along the tool z axis, so this puts it at z = 2
BASE = np.array([0.0, 0.0, 1.85])


def _track(count, closed=(), step=(0.0, 0.0, 0.0), start=BASE):
    return tuple(
        EefPose(k, np.eye(3), np.asarray(start) + k * np.asarray(step), k in closed)
        for k in range(count)
    )


def _episode(camera, depths, **tracks):
    return Episode(poses=tracks, cameras=(camera,), depths=tuple(depths))


def _flat(value, size=100):
    return DepthMap(np.full((size, size), value))


def test_gripper_point_conventions():
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    pose = EefPose(0, rot, np.array([1.0, 2.0, 3.0]))
    assert gripper_point(pose) == pytest.approx([1.0, 2.0, 3.15])
    assert gripper_point(pose, GripperConvention.X_OFFSET_14) == pytest.approx([1.0, 2.14, 3.0])


def test_strict_mode_counts_agreeing_frames(pinhole):
    episode = _episode(pinhole, [_flat(2.0), _flat(2.0), _flat(3.0)], right=_track(3))
    fraction, valid = validate_extrinsics(episode, ExtrinsicsMode.STRICT)
    assert fraction == pytest.approx(2 / 3)
    assert valid

    wrong = _episode(pinhole, [_flat(3.0)] * 3, right=_track(3))
    assert validate_extrinsics(wrong, "strict") == (0.0, False)


def test_zero_tolerant_mode_accepts_missing_depth(pinhole):
    episode = _episode(pinhole, [_flat(0.0)] * 3, right=_track(3))
    assert validate_extrinsics(episode, ExtrinsicsMode.ZERO_TOLERANT) == (1.0, True)
    assert validate_extrinsics(episode, ExtrinsicsMode.STRICT) == (0.0, False)


def test_custom_fraction_threshold(pinhole):
    episode = _episode(pinhole, [_flat(2.0), _flat(2.0), _flat(3.0)], right=_track(3))
    assert not validate_extrinsics(episode, frame_fraction_threshold=0.9)[1]


def test_frames_without_depth_are_skipped(pinhole):
    episode = _episode(pinhole, [None, _flat(2.0)], right=_track(2))
    assert validate_extrinsics(episode) == (1.0, True)


def test_indeterminate_when_gripper_never_in_view(pinhole):
    episode = _episode(pinhole, [_flat(2.0)] * 2, right=_track(2, start=[10.0, 0.0, 1.85]))
    with pytest.raises(Indeterminate):
        validate_extrinsics(episode)


def test_occlusion_disc_threshold(pinhole):
    values = np.full((100, 100), 2.0)
    values[50, 50] = values[49, 50] = values[51, 50] = 0.0
    point = [0.0, 0.0, 2.0]
    assert not occlusion_check(point, pinhole, DepthMap(values), radius_px=1)
    values[50, 49] = 0.0
    assert occlusion_check(point, pinhole, DepthMap(values), radius_px=1)
    with pytest.raises(Indeterminate):
        occlusion_check([0.0, 0.0, -1.0], pinhole, DepthMap(values))


def test_closure_intervals():
    track = _track(8, closed={2, 3, 6, 7})
    assert closure_intervals(track) == [(2, 4), (6, 8)]
    assert closure_intervals(_track(3)) == []


def test_select_arm(pinhole):
    depths = [_flat(2.0)] * 6
    one = _episode(pinhole, depths, right=_track(6, closed={2, 3}), left=_track(6))
    assert select_arm(one) == "right"

    with pytest.raises(NoClosure):
        select_arm(_episode(pinhole, depths, right=_track(6)))
    with pytest.raises(MultiClosure):
        select_arm(_episode(pinhole, depths, right=_track(6, closed={1, 4})))

    both_move = _episode(pinhole, depths, right=_track(6, {2, 3, 4}, (0.05, 0, 0)), left=_track(6, {2, 3, 4}, (0, 0.05, 0)))
    with pytest.raises(AmbiguousArms):
        select_arm(both_move)
    one_moves = _episode(pinhole, depths, right=_track(6, {2, 3, 4}), left=_track(6, {2, 3, 4}, (0, 0.05, 0)))
    assert select_arm(one_moves) == "left"


def test_extract_traces_spans_base_and_closure(pinhole):
    track = _track(10, closed={3, 4, 5, 6}, step=(0.05, 0.0, 0.0))
    episode = _episode(pinhole, [_flat(2.0)] * 10, right=track)
    eef, obj = extract_traces(episode)
    assert len(eef) == 7
    assert len(obj) == 4
    assert eef.frame == TraceFrame.END_EFFECTOR_CENTRIC
    assert obj.frame == TraceFrame.OBJECT_CENTRIC
    assert obj.world_points[0] == pytest.approx([0.15, 0.0, 2.0])
    assert obj.image_points[-1, :2] == pytest.approx([65.0, 50.0])

    late = extract_traces(episode, config=CalibConfig(base_frame_offset=2))[0]
    assert len(late) == 6


def test_extract_traces_rejects_occlusion_and_out_of_frame(pinhole):
    track = _track(10, closed={3, 4, 5, 6}, step=(0.05, 0.0, 0.0))
    hidden = _episode(pinhole, [_flat(0.0)] * 10, right=track)
    with pytest.raises(Occluded):
        extract_traces(hidden)
    assert len(extract_traces(hidden, check_occlusion=False)[1]) == 4

    runaway = _track(10, closed={3, 4, 5, 6}, step=(0.2, 0.0, 0.0))
    with pytest.raises(TraceOutOfFrame):
        extract_traces(_episode(pinhole, [_flat(2.0)] * 10, right=runaway))


def test_extract_traces_keypoint_budget(pinhole):
    straight = _episode(pinhole, [_flat(2.0)] * 10, right=_track(10, closed={3, 4, 5, 6}, step=(0.05, 0.0, 0.0)))
    eef, obj = extract_traces(straight, keypoints=True)
    assert len(eef) == 2 and len(obj) == 2
    assert eef.world_points[-1] == pytest.approx(extract_traces(straight)[0].world_points[-1])

    wobble = tuple(
        EefPose(k, np.eye(3), BASE + np.array([0.02 * k, 0.05 * (k % 2), 0.0]), 3 <= k < 19)
        for k in range(20)
    )
    jagged = _episode(pinhole, [_flat(2.0)] * 20, right=wobble)
    assert len(extract_traces(jagged)[0]) == 19
    with pytest.raises(TooManyKeypoints):
        extract_traces(jagged, keypoints=True)


def test_keypoint_budget(pinhole):
    line = np.column_stack([np.linspace(-0.3, 0.3, 10), np.zeros(10), np.full(10, 2.0)])
    kept = check_keypoint_budget(Trace.from_world(pinhole, line), 0.01)
    assert len(kept) == 2

    zigzag = np.column_stack([np.linspace(-0.3, 0.3, 12), 0.1 * (np.arange(12) % 2), np.full(12, 2.0)])
    with pytest.raises(TooManyKeypoints):
        check_keypoint_budget(Trace.from_world(pinhole, zigzag), 0.01)


def test_episode_camera_out_of_range_names_episode(pinhole):
    episode = Episode(poses={"right": _track(3)}, cameras=(pinhole, pinhole), depths=(), episode_id="ep-7")
    assert episode.camera(1) is pinhole
    with pytest.raises(SceneFormatError, match="ep-7"):
        episode.camera(2)
    single = _episode(pinhole, [], right=_track(3))
    assert single.camera(5) is pinhole
