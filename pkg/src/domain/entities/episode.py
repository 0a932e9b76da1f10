from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from ..errors import InvalidGeometry, SceneFormatError
from .scene import CameraModel, DepthMap, _rotation


class GripperConvention(str, Enum):
    Z_OFFSET_15 = "ZOffset15"
    X_OFFSET_14 = "XOffset14"


class ExtrinsicsMode(str, Enum):
    STRICT = "strict"
    ZERO_TOLERANT = "zero-tolerant"


@dataclass(frozen=True, eq=False)
class EefPose:
    frame_index: int
    rotation: np.ndarray
    position: np.ndarray
    gripper_closed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "rotation", _rotation(self.rotation, "end-effector rotation"))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))


@dataclass(frozen=True, eq=False)
class Episode:
    """Pre-decoded robot episode: per-arm pose tracks plus per-frame camera and depth."""
    poses: Dict[str, Tuple[EefPose, ...]]
    cameras: Tuple[CameraModel, ...]
    depths: Tuple[Optional[DepthMap], ...]
    instruction: str = ""
    episode_id: str = "episode"

    def __post_init__(self):
        poses = {arm: tuple(sorted(track, key=lambda p: p.frame_index)) for arm, track in self.poses.items() if track}
        if not poses:
            raise InvalidGeometry("episode has no end-effector poses")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "depths", tuple(self.depths))
        if not self.cameras:
            raise InvalidGeometry("episode has no camera")

    @property
    def num_frames(self) -> int:
        last_pose = max(track[-1].frame_index for track in self.poses.values()) + 1
        return max(len(self.depths), last_pose)

    @property
    def arms(self) -> Tuple[str, ...]:
        return tuple(sorted(self.poses))

    def camera(self, frame: int) -> CameraModel:
        # A single camera applies to every frame.
        if len(self.cameras) == 1:
            return self.cameras[0]
        if not 0 <= frame < len(self.cameras):
            raise SceneFormatError(f"episode {self.episode_id} has no camera for frame {frame} "
                                   f"({len(self.cameras)} cameras)")
        return self.cameras[frame]

    def depth(self, frame: int) -> Optional[DepthMap]:
        return self.depths[frame] if 0 <= frame < len(self.depths) else None

    def pose(self, arm: str, frame: int) -> Optional[EefPose]:
        for pose in self.poses.get(arm, ()):
            if pose.frame_index == frame:
                return pose
        return None
