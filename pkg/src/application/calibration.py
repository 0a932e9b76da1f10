from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from ..config.settings import CalibConfig
from ..domain.entities.episode import EefPose, Episode, ExtrinsicsMode, GripperConvention
from ..domain.entities.scene import CameraModel, DepthMap
from ..domain.entities.trace import Trace, TraceFrame
from ..domain.errors import (
    AmbiguousArms, Indeterminate, MultiClosure, NoClosure, Occluded, TooManyKeypoints, TraceOutOfFrame,
)
from .refiner import simplify_rdp_indices

GRIPPER_OFFSETS = {
    GripperConvention.Z_OFFSET_15: np.array([0.0, 0.0, 0.15]),
    GripperConvention.X_OFFSET_14: np.array([0.14, 0.0, 0.0]),
}


def gripper_point(pose: EefPose, convention: GripperConvention = GripperConvention.Z_OFFSET_15) -> np.ndarray:
    return pose.position + pose.rotation @ GRIPPER_OFFSETS[GripperConvention(convention)]


def validate_extrinsics(episode: Episode, mode: ExtrinsicsMode = ExtrinsicsMode.STRICT,
                        frame_fraction_threshold: Optional[float] = None,
                        convention: GripperConvention = GripperConvention.Z_OFFSET_15,
                        config: Optional[CalibConfig] = None) -> Tuple[float, bool]:
    """Share of tested frames whose depth agrees with the projected gripper point.

    A frame is tested when it has depth and the gripper projects inside the
    image; each arm present at that frame counts once.
    """
    config = config or CalibConfig()
    mode = ExtrinsicsMode(mode)
    if frame_fraction_threshold is None:
        frame_fraction_threshold = (config.strict_threshold if mode == ExtrinsicsMode.STRICT
                                    else config.zero_tolerant_threshold)
    tested = aligned = 0
    for frame in range(episode.num_frames):
        depth = episode.depth(frame)
        if depth is None:
            continue
        camera = episode.camera(frame)
        for arm in episode.arms:
            pose = episode.pose(arm, frame)
            if pose is None:
                continue
            u, v, z = camera.project_many(gripper_point(pose, convention))[0]
            if not (z > 1e-6 and camera.in_frame(u, v)):
                continue
            observed = float(depth.lookup(u, v)[0])
            tested += 1
            agrees = abs(observed - z) < config.depth_tolerance
            if mode == ExtrinsicsMode.ZERO_TOLERANT:
                agrees = agrees or observed == 0.0
            aligned += int(agrees)
    if tested == 0:
        raise Indeterminate("no frame projects the gripper inside the image")
    fraction = aligned / tested
    valid = fraction > frame_fraction_threshold
    logger.info(f"Extrinsics {mode.value}: {aligned}/{tested} frames aligned ({fraction:.3f}), valid={valid}")
    return fraction, valid


def occlusion_check(point_world, camera: CameraModel, depth: DepthMap, radius_px: int = 30,
                    zero_fraction_threshold: float = 0.6) -> bool:
    """True when more than the threshold share of depth pixels in the disc are missing."""
    u, v, z = camera.project_many(point_world)[0]
    if not (z > 1e-6 and camera.in_frame(u, v)):
        raise Indeterminate("point projects outside the image")
    cu, cv = int(np.floor(u)), int(np.floor(v))
    rows, cols = np.ogrid[:depth.height, :depth.width]
    disc = (cols - cu) ** 2 + (rows - cv) ** 2 <= radius_px ** 2
    values = depth.values[disc]
    zero_fraction = float(np.count_nonzero(values == 0)) / values.size
    return zero_fraction > zero_fraction_threshold


def closure_intervals(poses: Sequence[EefPose]) -> List[Tuple[int, int]]:
    """Half-open frame ranges [start, end) during which the gripper stays closed."""
    intervals = []
    start = None
    last = None
    for pose in poses:
        if pose.gripper_closed and start is None:
            start = pose.frame_index
        elif not pose.gripper_closed and start is not None:
            intervals.append((start, pose.frame_index))
            start = None
        last = pose.frame_index
    if start is not None:
        intervals.append((start, last + 1))
    return intervals


def _closure_travel(poses: Sequence[EefPose], interval: Tuple[int, int]) -> float:
    pts = np.array([p.position for p in poses if interval[0] <= p.frame_index < interval[1]])
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def select_arm(episode: Episode, config: Optional[CalibConfig] = None) -> str:
    """The single arm that grasps and carries the object."""
    config = config or CalibConfig()
    closing = {arm: closure_intervals(episode.poses[arm]) for arm in episode.arms}
    closing = {arm: iv for arm, iv in closing.items() if iv}
    if not closing:
        raise NoClosure("no gripper closes during the episode")
    for arm, intervals in closing.items():
        if len(intervals) > 1:
            raise MultiClosure(f"arm {arm} closes {len(intervals)} times")
    if len(closing) == 1:
        return next(iter(closing))
    moving = [arm for arm, iv in sorted(closing.items())
              if _closure_travel(episode.poses[arm], iv[0]) > config.move_threshold]
    if len(moving) != 1:
        raise AmbiguousArms(f"{len(moving)} of {len(closing)} closing arms move while closed")
    return moving[0]


def _project(points: np.ndarray, camera: CameraModel, frame: TraceFrame) -> Trace:
    proj = camera.project_many(points)
    if not np.all((proj[:, 2] > 1e-6) & camera.in_frame(proj[:, 0], proj[:, 1])):
        raise TraceOutOfFrame("gripper trace leaves the base frame image")
    return Trace(points, proj, frame=frame)


def extract_traces(episode: Episode, convention: GripperConvention = GripperConvention.Z_OFFSET_15,
                   config: Optional[CalibConfig] = None, check_occlusion: bool = True,
                   keypoints: bool = False) -> Tuple[Trace, Trace]:
    """End-effector trace over [F_b, F_e) and object trace over [F_s, F_e), both in the base frame.

    With ``keypoints`` both traces are reduced to the QA keypoint budget, or
    rejected with TooManyKeypoints.
    """
    config = config or CalibConfig()
    arm = select_arm(episode, config)
    f_start, f_end = closure_intervals(episode.poses[arm])[0]
    f_base = max(0, f_start - config.base_frame_offset)

    if check_occlusion:
        depth = episode.depth(f_start)
        pose = episode.pose(arm, f_start)
        if depth is not None and pose is not None:
            if occlusion_check(gripper_point(pose, convention), episode.camera(f_start), depth,
                               config.occlusion_radius_px, config.zero_fraction_threshold):
                raise Occluded(f"gripper hidden at frame {f_start}")

    camera = episode.camera(f_base)
    track = [p for p in episode.poses[arm] if f_base <= p.frame_index < f_end]
    points = np.array([gripper_point(p, convention) for p in track])
    carried = np.array([p.frame_index >= f_start for p in track])
    eef = _project(points, camera, TraceFrame.END_EFFECTOR_CENTRIC)
    obj = _project(points[carried], camera, TraceFrame.OBJECT_CENTRIC)
    if keypoints:
        eef = check_keypoint_budget(eef, config.rdp_epsilon, config.max_keypoints)
        obj = check_keypoint_budget(obj, config.rdp_epsilon, config.max_keypoints)
    logger.debug(f"Arm {arm}: base frame {f_base}, closure [{f_start}, {f_end}), {len(eef)} eef points")
    return eef, obj


def check_keypoint_budget(trace: Trace, epsilon: float, max_points: int = 8) -> Trace:
    """Fixed-epsilon keypoints; too many survivors reject the trace."""
    idx, _ = simplify_rdp_indices(trace.world_points, epsilon, max_points=None)
    if len(idx) > max_points:
        raise TooManyKeypoints(f"{len(idx)} keypoints remain at epsilon {epsilon}")
    return Trace(trace.world_points[idx], trace.image_points[idx], frame=trace.frame,
                 via_point=trace.via_point, flags=trace.flags)
