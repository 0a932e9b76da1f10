from dataclasses import dataclass, replace
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from loguru import logger

from ..config.settings import SceneConfig, Settings
from ..domain.entities.scene import (
    UP, BoxSource, CameraModel, DepthMap, Direction, ObjectInstance, OccupancyGrid, OrientedBox3, Scene,
)
from ..domain.errors import BehindCamera, InvalidGeometry
from ..domain.value_objects.geometry import Box2D


@dataclass(frozen=True)
class RoleAssignment:
    sources: Tuple[str, ...]
    references: Tuple[str, ...]
    obstacles: Tuple[str, ...]


def gravity_align(corners, gravity_rotation) -> np.ndarray:
    pts = np.asarray(corners, dtype=float)
    if not np.all(np.isfinite(pts)):
        raise InvalidGeometry("corners contain NaN or Inf")
    rot = np.asarray(gravity_rotation, dtype=float).reshape(3, 3)
    return pts.reshape(-1, 3) @ rot.T


def align_scene(scene: Scene) -> Scene:
    """Rotate boxes and camera into the gravity-aligned frame; no-op when already aligned."""
    rot = scene.gravity_rotation
    if np.allclose(rot, np.eye(3)):
        return scene
    objects = []
    for obj in scene.objects:
        box = OrientedBox3(gravity_align(obj.box.center, rot)[0], obj.box.half_extents, rot @ obj.box.rotation)
        objects.append(replace(obj, box=box))
    cam = scene.camera
    camera = replace(cam, rotation=cam.rotation @ rot.T)
    logger.debug(f"Gravity-aligned {len(objects)} objects in {scene.scene_id}")
    return replace(scene, objects=tuple(objects), camera=camera, gravity_rotation=np.eye(3), occupancy=None)


def validate_object(corners) -> bool:
    pts = np.asarray(corners, dtype=float)
    if pts.size == 0 or pts.size % 3:
        return False
    pts = pts.reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        return False
    return pts.shape[0] >= 4


def normalize_box_dims(raw_dims, source: BoxSource) -> Tuple[float, float, float]:
    """Return (width, length, height) whatever order the dataset stores."""
    dims = np.asarray(raw_dims, dtype=float).reshape(3)
    if not np.all(np.isfinite(dims)) or np.any(dims <= 0):
        raise InvalidGeometry(f"box dimensions must be positive, got {dims.tolist()}")
    source = BoxSource(source)
    if source == BoxSource.CA1M:
        width, height, length = dims
        return float(width), float(length), float(height)
    width, length, height = dims
    return float(width), float(length), float(height)


def _axis_index(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        if not 0 <= int(tag) <= 2:
            raise InvalidGeometry(f"axis index out of range: {tag}")
        return int(tag)
    name = str(tag).strip().lower().lstrip("+-")
    if name not in ("x", "y", "z"):
        raise InvalidGeometry(f"unknown axis tag {tag!r}")
    return "xyz".index(name)


def semantic_dimensions(box: OrientedBox3, front_axis) -> Tuple[float, float, float]:
    """(length, width, height) from face intersections.

    length runs along the front/bottom edge, width along the side/bottom edge
    and height along the front/side edge.
    """
    vertical = int(np.argmax(np.abs(box.rotation.T @ UP)))
    front = _axis_index(front_axis)
    if front == vertical:
        raise InvalidGeometry("front axis cannot be the vertical axis")
    side = 3 - vertical - front
    extents = 2.0 * box.half_extents
    return float(extents[side]), float(extents[front]), float(extents[vertical])


def project_point(camera: CameraModel, world_point) -> Tuple[float, float, float]:
    p = camera.to_camera(world_point)[0]
    z = float(p[2])
    if z <= 1e-6:
        raise BehindCamera(f"point at camera depth {z:.6f} is behind the camera")
    return camera.fx * p[0] / z + camera.cx, camera.fy * p[1] / z + camera.cy, z


def back_project(camera: CameraModel, u: float, v: float, z_cam: float) -> np.ndarray:
    return camera.back_project_many([[u, v, z_cam]])[0]


def sample_box_surface(box: OrientedBox3, count: int, rng: np.random.Generator) -> np.ndarray:
    """Surface points stratified over the six faces by face area."""
    he = box.half_extents
    areas = []
    for normal in range(3):
        a, b = [i for i in range(3) if i != normal]
        areas.extend([4.0 * he[a] * he[b]] * 2)
    areas = np.array(areas)
    quota = areas / areas.sum() * count
    per_face = np.floor(quota).astype(int)
    remainder = count - per_face.sum()
    if remainder > 0:
        per_face[np.argsort(-(quota - per_face), kind="stable")[:remainder]] += 1
    chunks = []
    for face, n in enumerate(per_face):
        if n == 0:
            continue
        normal, sign = face // 2, (-1.0 if face % 2 == 0 else 1.0)
        local = rng.uniform(-1.0, 1.0, size=(n, 3))
        local[:, normal] = sign
        chunks.append(local * he)
    local = np.vstack(chunks)
    return box.center + local @ box.rotation.T


def box_to_2d(camera: CameraModel, depth: DepthMap, box: OrientedBox3,
              config: Optional[SceneConfig] = None) -> Optional[Box2D]:
    config = config or SceneConfig()
    rng = np.random.default_rng(config.box_seed)
    points = sample_box_surface(box, config.box_samples, rng)
    uvz = camera.project_many(points)
    ok = (uvz[:, 2] > 1e-6) & camera.in_frame(uvz[:, 0], uvz[:, 1])
    observed = depth.lookup(uvz[:, 0], uvz[:, 1])
    ok &= (observed > 0) & (np.abs(uvz[:, 2] - observed) < config.depth_consistency)
    if not np.any(ok):
        return None
    u, v = uvz[ok, 0], uvz[ok, 1]
    return Box2D(float(u.min()), float(v.min()), float(u.max()), float(v.max()))


def _footprint_overlap(upper: OrientedBox3, lower: OrientedBox3) -> float:
    a, b = upper.aabb(), lower.aabb()
    dx = min(a.max[0], b.max[0]) - max(a.min[0], b.min[0])
    dz = min(a.max[2], b.max[2]) - max(a.min[2], b.min[2])
    if dx <= 0 or dz <= 0:
        return 0.0
    own = a.size[0] * a.size[2]
    return float(dx * dz / own) if own > 0 else 0.0


def find_supporter(obj: ObjectInstance, objects: Iterable[ObjectInstance],
                   config: Optional[SceneConfig] = None) -> Optional[ObjectInstance]:
    """Object whose top face carries ``obj``: smallest vertical gap, then largest overlap."""
    config = config or SceneConfig()
    bottom = obj.box.aabb().min[1]
    best, best_key = None, None
    for other in objects:
        if other.id == obj.id:
            continue
        gap = bottom - other.box.aabb().max[1]
        if abs(gap) > config.support_gap:
            continue
        overlap = _footprint_overlap(obj.box, other.box)
        if overlap < config.support_overlap:
            continue
        key = (abs(gap), -overlap, other.id)
        if best_key is None or key < best_key:
            best, best_key = other, key
    return best


def assign_roles(scene: Scene, config: Optional[SceneConfig] = None,
                 blocklist: Iterable[str] = Settings.MOVABILITY_BLOCKLIST) -> RoleAssignment:
    blocked = {c.lower() for c in blocklist}
    sources, references = [], []
    for obj in scene.objects:
        if obj.is_high_quality and obj.movable and obj.category.lower() not in blocked:
            sources.append(obj.id)
        if obj.is_high_quality and find_supporter(obj, scene.objects, config) is not None:
            references.append(obj.id)
    roles = RoleAssignment(
        sources=tuple(sorted(sources)),
        references=tuple(sorted(references)),
        obstacles=tuple(sorted(obj.id for obj in scene.objects)),
    )
    logger.debug(f"Roles for {scene.scene_id}: {len(roles.sources)} sources, {len(roles.references)} references")
    return roles


def depth_to_points(depth: DepthMap, camera: CameraModel, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Back-project valid pixels through their centers."""
    valid = depth.values > 0
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(valid)
    if rows.size == 0:
        return np.zeros((0, 3))
    uvz = np.stack([cols + 0.5, rows + 0.5, depth.values[rows, cols]], axis=1)
    return camera.back_project_many(uvz)


def build_occupancy(depth: DepthMap, camera: CameraModel, voxel_size: float) -> OccupancyGrid:
    if voxel_size <= 0:
        raise InvalidGeometry("voxel size must be positive")
    return OccupancyGrid.from_points(depth_to_points(depth, camera), voxel_size)


def object_point_cloud(scene: Scene, mask) -> np.ndarray:
    """Observed surface points of an object: mask and valid depth, back-projected."""
    arr = mask.to_array() if hasattr(mask, "to_array") else np.asarray(mask, dtype=bool)
    return depth_to_points(scene.depth, scene.camera, arr)


def _horizontal(vector: np.ndarray) -> Optional[np.ndarray]:
    flat = np.array([vector[0], 0.0, vector[2]])
    norm = np.linalg.norm(flat)
    return flat / norm if norm > 1e-6 else None


def direction_vectors(camera: Optional[CameraModel] = None) -> Dict[Direction, np.ndarray]:
    """World unit vectors for the six labels.

    left/right/front/behind follow the camera's horizontal axes (front points
    toward the viewer); above/below follow gravity.
    """
    if camera is None:
        right, forward = np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, -1.0])
    else:
        rows = camera.rotation
        right = _horizontal(rows[0])
        forward = _horizontal(rows[2])
        if forward is None:
            # Looking straight down: image-down points toward the viewer.
            forward = _horizontal(-rows[1])
        if right is None:
            right = np.cross(forward, UP)
    return {
        Direction.LEFT: -right,
        Direction.RIGHT: right,
        Direction.FRONT: -forward,
        Direction.BEHIND: forward,
        Direction.ABOVE: UP.copy(),
        Direction.BELOW: -UP,
    }
