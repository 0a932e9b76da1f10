from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from ..errors import BehindCamera, InvalidGeometry
from .scene import CameraModel


class TraceFrame(str, Enum):
    OBJECT_CENTRIC = "ObjectCentric"
    END_EFFECTOR_CENTRIC = "EndEffectorCentric"


@dataclass(frozen=True, eq=False)
class Trace:
    """Ordered waypoints kept in world meters and in image (u, v, d)."""
    world_points: np.ndarray
    image_points: np.ndarray
    frame: TraceFrame = TraceFrame.OBJECT_CENTRIC
    via_point: Optional[np.ndarray] = None
    flags: Tuple[str, ...] = ()

    def __post_init__(self):
        world = np.asarray(self.world_points, dtype=float).reshape(-1, 3)
        image = np.asarray(self.image_points, dtype=float).reshape(-1, 3)
        if world.shape != image.shape:
            raise InvalidGeometry("world and image point lists differ in length")
        if world.shape[0] == 0:
            raise InvalidGeometry("a trace needs at least one point")
        if not (np.all(np.isfinite(world)) and np.all(np.isfinite(image))):
            raise InvalidGeometry("trace contains non-finite values")
        if np.any(image[:, 2] <= 0):
            raise InvalidGeometry("trace depths must be positive")
        object.__setattr__(self, "world_points", world)
        object.__setattr__(self, "image_points", image)
        if self.via_point is not None:
            object.__setattr__(self, "via_point", np.asarray(self.via_point, dtype=float).reshape(3))
        object.__setattr__(self, "flags", tuple(self.flags))

    @classmethod
    def from_world(cls, camera: CameraModel, points, **kwargs) -> "Trace":
        world = np.asarray(points, dtype=float).reshape(-1, 3)
        image = camera.project_many(world)
        if np.any(~(image[:, 2] > 1e-6)):
            raise BehindCamera("trace point lies behind the camera")
        return cls(world, image, **kwargs)

    @classmethod
    def from_image(cls, camera: CameraModel, uvd, **kwargs) -> "Trace":
        image = np.asarray(uvd, dtype=float).reshape(-1, 3)
        return cls(camera.back_project_many(image), image, **kwargs)

    def __len__(self) -> int:
        return self.world_points.shape[0]

    @property
    def displacement(self) -> float:
        return float(np.linalg.norm(self.world_points[-1] - self.world_points[0]))

    def with_world(self, camera: CameraModel, points) -> "Trace":
        return Trace.from_world(camera, points, frame=self.frame, via_point=self.via_point, flags=self.flags)

    def with_flag(self, flag: str) -> "Trace":
        if flag in self.flags:
            return self
        return replace(self, flags=self.flags + (flag,))

    def to_records(self, decimals: int = 6) -> list:
        return [
            {
                "u": round(float(u), decimals), "v": round(float(v), decimals), "d": round(float(d), decimals),
                "x": round(float(x), decimals), "y": round(float(y), decimals), "z": round(float(z), decimals),
            }
            for (u, v, d), (x, y, z) in zip(self.image_points, self.world_points)
        ]

    @classmethod
    def from_records(cls, records: list, frame: TraceFrame = TraceFrame.OBJECT_CENTRIC, via_point=None) -> "Trace":
        world = [[r["x"], r["y"], r["z"]] for r in records]
        image = [[r["u"], r["v"], r["d"]] for r in records]
        return cls(world, image, frame=frame, via_point=via_point)
