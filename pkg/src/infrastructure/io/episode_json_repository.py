import os
from typing import Dict, List

import numpy as np
from loguru import logger

from ...domain.entities.episode import EefPose, Episode
from ...domain.errors import InvalidGeometry, SceneFormatError
from ...domain.repositories.scene_repository import EpisodeRepository
from .json_scene_repository import camera_from_dict, load_depth_png
from .jsonl import read_json


class EpisodeJsonRepository(EpisodeRepository):
    """Episode JSON: per-frame optional camera, depth PNG and arm poses.

    Frames without a camera reuse the most recent one.
    """

    def load_episode(self, path: str) -> Episode:
        if not os.path.exists(path):
            raise SceneFormatError(f"episode file not found: {path}")
        data = read_json(path)
        base = os.path.dirname(path)
        try:
            cameras, depths = [], []
            poses: Dict[str, List[EefPose]] = {}
            current = None
            for index, frame in enumerate(data["frames"]):
                if frame.get("camera") is not None:
                    current = camera_from_dict(frame["camera"])
                if current is None:
                    raise SceneFormatError("the first frame must carry a camera")
                cameras.append(current)
                depth_file = frame.get("depth_file")
                depths.append(load_depth_png(os.path.join(base, depth_file)) if depth_file else None)
                for arm, state in (frame.get("arms") or {}).items():
                    poses.setdefault(arm, []).append(EefPose(
                        frame_index=index,
                        rotation=np.asarray(state["rotation"], dtype=float).reshape(3, 3),
                        position=np.asarray(state["position"], dtype=float),
                        gripper_closed=bool(state.get("closed", False)),
                    ))
            episode = Episode(
                poses={arm: tuple(track) for arm, track in poses.items()},
                cameras=tuple(cameras),
                depths=tuple(depths),
                instruction=data.get("instruction", ""),
                episode_id=str(data.get("episode_id", os.path.splitext(os.path.basename(path))[0])),
            )
        except (KeyError, TypeError, ValueError, InvalidGeometry) as e:
            raise SceneFormatError(f"{path}: {type(e).__name__}: {e}") from e
        logger.debug(f"Loaded episode {episode.episode_id} with {episode.num_frames} frames and arms {episode.arms}")
        return episode
