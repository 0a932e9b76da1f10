from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from ..errors import InvalidGeometry, TaskInfeasible
from ..value_objects.geometry import Aabb3
from ..value_objects.mask import RleMask

# World frame after gravity alignment: +y is up.
UP = np.array([0.0, 1.0, 0.0])


def _rotation(matrix, what: str) -> np.ndarray:
    rot = np.asarray(matrix, dtype=float).reshape(3, 3)
    if not np.all(np.isfinite(rot)):
        raise InvalidGeometry(f"{what} contains non-finite values")
    if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(rot) - 1.0) > 1e-6:
        raise InvalidGeometry(f"{what} is not a proper rotation")
    return rot


class Method(str, Enum):
    PLACE_RELATIVE = "PlaceRelative"
    DIRECTIONAL_MOVE = "DirectionalMove"
    STACKING = "Stacking"
    BYPASS_PLACE = "BypassPlace"
    BYPASS_STACK = "BypassStack"

    @property
    def number(self) -> int:
        return list(Method).index(self) + 1

    @property
    def uses_via(self) -> bool:
        return self in (Method.BYPASS_PLACE, Method.BYPASS_STACK)

    @property
    def stacks(self) -> bool:
        return self in (Method.STACKING, Method.BYPASS_STACK)


class Direction(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    FRONT = "front"
    BEHIND = "behind"
    ABOVE = "above"
    BELOW = "below"

    @property
    def horizontal(self) -> bool:
        return self not in (Direction.ABOVE, Direction.BELOW)


class BoxSource(str, Enum):
    CA1M = "CA1M"
    SCANNET = "ScanNet"
    UNIFIED = "Unified"


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera. Extrinsics map world to camera: p_cam = R p + t.

    Camera axes are x right, y down, z forward. Pixel i covers [i, i + 1).
    """
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidGeometry("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidGeometry("principal point must lie inside the image")
        object.__setattr__(self, "rotation", _rotation(self.rotation, "camera rotation"))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise InvalidGeometry("camera translation contains non-finite values")
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return pts @ self.rotation.T + self.translation

    def project_many(self, points: np.ndarray) -> np.ndarray:
        """(u, v, z_cam) rows; rows with z_cam <= 1e-6 hold NaN pixels."""
        cam = self.to_camera(points)
        z = cam[:, 2]
        out = np.full((cam.shape[0], 3), np.nan)
        out[:, 2] = z
        ok = z > 1e-6
        out[ok, 0] = self.fx * cam[ok, 0] / z[ok] + self.cx
        out[ok, 1] = self.fy * cam[ok, 1] / z[ok] + self.cy
        return out

    def back_project_many(self, uvz: np.ndarray) -> np.ndarray:
        arr = np.asarray(uvz, dtype=float).reshape(-1, 3)
        z = arr[:, 2]
        cam = np.stack([(arr[:, 0] - self.cx) * z / self.fx, (arr[:, 1] - self.cy) * z / self.fy, z], axis=1)
        return (cam - self.translation) @ self.rotation

    def in_frame(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return np.isfinite(u) & np.isfinite(v) & (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Camera z-depth in meters, row-major (height, width). Zero means no reading."""
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 2:
            raise InvalidGeometry("depth map must be two-dimensional")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise InvalidGeometry("depth values must be finite and non-negative")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def lookup(self, u, v) -> np.ndarray:
        """Depth under pixel coordinates; out-of-frame lookups read 0."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        v = np.atleast_1d(np.asarray(v, dtype=float))
        out = np.zeros(u.shape)
        ok = np.isfinite(u) & np.isfinite(v) & (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)
        out[ok] = self.values[np.floor(v[ok]).astype(int), np.floor(u[ok]).astype(int)]
        return out

    def max_valid(self) -> float:
        valid = self.values[self.values > 0]
        return float(valid.max()) if valid.size else 0.0


@dataclass(frozen=True, eq=False)
class OrientedBox3:
    """Box with local axes in the columns of ``rotation``: world = center + R @ local."""
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        he = np.asarray(self.half_extents, dtype=float).reshape(3)
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(he)):
            raise InvalidGeometry("box center and half extents must be finite")
        if np.any(he <= 0):
            raise InvalidGeometry(f"half extents must be strictly positive, got {he}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", he)
        object.__setattr__(self, "rotation", _rotation(self.rotation, "box rotation"))

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return self.center + (signs * self.half_extents) @ self.rotation.T

    def translated(self, center) -> "OrientedBox3":
        return OrientedBox3(np.asarray(center, dtype=float), self.half_extents, self.rotation)

    def aabb(self) -> Aabb3:
        reach = np.abs(self.rotation) @ self.half_extents
        return Aabb3(self.center - reach, self.center + reach)

    def extent_along(self, direction) -> float:
        """Half-width of the box projected onto a unit direction."""
        d = np.asarray(direction, dtype=float)
        return float(np.abs(self.rotation.T @ d) @ self.half_extents)

    @property
    def volume(self) -> float:
        return float(8.0 * np.prod(self.half_extents))

    @property
    def radius(self) -> float:
        """Bounding-sphere radius (half the diagonal)."""
        return float(np.linalg.norm(self.half_extents))

    def distance(self, points) -> np.ndarray:
        """Euclidean distance to the solid box, 0 inside."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        local = (pts - self.center) @ self.rotation
        excess = np.maximum(np.abs(local) - self.half_extents, 0.0)
        return np.linalg.norm(excess, axis=1)


@dataclass(frozen=True, eq=False)
class ObjectInstance:
    id: str
    category: str
    box: OrientedBox3
    dense_caption: str = ""
    spatial_caption: str = ""
    mask: Optional[RleMask] = None
    is_high_quality: bool = True
    movable: bool = True
    front_axis: str = "+z"

    @property
    def phrase(self) -> str:
        """Phrase used to name the object in instructions."""
        return self.spatial_caption or self.dense_caption or self.category


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Surface occupancy over a regular voxel lattice.

    ``occupied`` is a boolean volume of shape ``dims``; voxel (i, j, k) covers
    origin + [i, i + 1) * voxel_size along each axis.
    """
    origin: np.ndarray
    voxel_size: float
    occupied: np.ndarray

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise InvalidGeometry("voxel size must be positive")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "occupied", np.asarray(self.occupied, dtype=bool))

    @classmethod
    def from_points(cls, points: np.ndarray, voxel_size: float) -> "OccupancyGrid":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if pts.shape[0] == 0:
            return cls(np.zeros(3), voxel_size, np.zeros((1, 1, 1), dtype=bool))
        origin = np.floor(pts.min(axis=0) / voxel_size) * voxel_size
        idx = np.maximum(np.floor((pts - origin) / voxel_size).astype(int), 0)
        dims = idx.max(axis=0) + 1
        occupied = np.zeros(tuple(dims), dtype=bool)
        occupied[idx[:, 0], idx[:, 1], idx[:, 2]] = True
        return cls(origin, voxel_size, occupied)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.occupied.shape)

    @property
    def count(self) -> int:
        return int(self.occupied.sum())

    def indices(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Voxel indices of points plus a mask of those inside the grid."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        idx = np.floor((pts - self.origin) / self.voxel_size).astype(int)
        inside = np.all((idx >= 0) & (idx < np.array(self.occupied.shape)), axis=1)
        return idx, inside

    def contains(self, points: np.ndarray) -> np.ndarray:
        idx, inside = self.indices(points)
        hit = np.zeros(idx.shape[0], dtype=bool)
        ok = idx[inside]
        hit[inside] = self.occupied[ok[:, 0], ok[:, 1], ok[:, 2]]
        return hit


@dataclass(frozen=True, eq=False)
class Scene:
    objects: Tuple[ObjectInstance, ...]
    camera: CameraModel
    depth: DepthMap
    gravity_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    occupancy: Optional[OccupancyGrid] = None
    scene_id: str = "scene"

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "gravity_rotation", _rotation(self.gravity_rotation, "gravity rotation"))
        ids = [obj.id for obj in self.objects]
        if len(set(ids)) != len(ids):
            raise InvalidGeometry("object ids must be unique within a scene")
        if (self.depth.width, self.depth.height) != (self.camera.width, self.camera.height):
            raise InvalidGeometry("depth map size does not match the camera")
        for obj in self.objects:
            if obj.mask is not None and (obj.mask.height, obj.mask.width) != (self.camera.height, self.camera.width):
                raise InvalidGeometry(f"mask of {obj.id} does not match the camera size")

    @property
    def by_id(self) -> Dict[str, ObjectInstance]:
        return {obj.id: obj for obj in self.objects}

    def object(self, object_id: str) -> ObjectInstance:
        try:
            return self.by_id[object_id]
        except KeyError:
            raise TaskInfeasible(f"unknown object id {object_id!r}", reason="unknown_object") from None


@dataclass(frozen=True)
class TaskSpec:
    method: Method
    source_id: str
    reference_id: Optional[str] = None
    via_id: Optional[str] = None
    direction: Optional[Direction] = None
    distance: Optional[float] = None

    def validate(self, scene: Optional[Scene] = None) -> None:
        if self.method.uses_via and not self.via_id:
            raise TaskInfeasible(f"{self.method.value} requires a via object", reason="missing_via")
        if self.method in (Method.PLACE_RELATIVE, Method.DIRECTIONAL_MOVE, Method.BYPASS_PLACE) and self.direction is None:
            raise TaskInfeasible(f"{self.method.value} requires a direction", reason="missing_direction")
        if self.method != Method.DIRECTIONAL_MOVE and not self.reference_id:
            raise TaskInfeasible(f"{self.method.value} requires a reference object", reason="missing_reference")
        if scene is not None:
            for object_id in (self.source_id, self.reference_id, self.via_id):
                if object_id is not None:
                    scene.object(object_id)

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "source_id": self.source_id,
            "reference_id": self.reference_id,
            "via_id": self.via_id,
            "direction": self.direction.value if self.direction else None,
            "distance": self.distance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskSpec":
        return cls(
            method=_method(data["method"]),
            source_id=data["source_id"],
            reference_id=data.get("reference_id"),
            via_id=data.get("via_id"),
            direction=Direction(data["direction"]) if data.get("direction") else None,
            distance=data.get("distance"),
        )


def _method(value) -> Method:
    if isinstance(value, int) and 1 <= value <= len(Method):
        return list(Method)[value - 1]
    return Method(value)
