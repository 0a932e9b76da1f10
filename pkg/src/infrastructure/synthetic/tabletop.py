from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from ...application.instruction_builder import render_instruction
from ...domain.entities.bench import BenchSample, TaskCategory
from ...domain.entities.scene import UP, CameraModel, DepthMap, Direction, Method, ObjectInstance, OrientedBox3, Scene, TaskSpec
from ...domain.entities.trace import Trace
from ...domain.errors import InvalidGeometry
from ...domain.value_objects.mask import RleMask

WIDTH, HEIGHT, FOCAL = 320, 240, 260.0
CAMERA_POSITION = np.array([0.0, 1.5, 0.2])
CAMERA_TARGET = np.array([0.0, 0.725, -1.4])
TABLE_TOP = 0.725

# id, category, center, half extents, high quality, movable, caption
_LAYOUT = [
    ("floor", "floor", (0.0, -0.05, -1.5), (3.0, 0.05, 3.0), False, False, ""),
    ("wall", "wall", (0.0, 1.5, -3.1), (3.0, 1.5, 0.1), False, False, ""),
    ("table", "table", (0.0, 0.3625, -1.5), (0.7, 0.3625, 0.45), True, False, "wooden table"),
    ("mug", "mug", (-0.25, 0.785, -1.45), (0.05, 0.06, 0.05), True, True, "red mug"),
    ("book", "book", (0.25, 0.755, -1.5), (0.1, 0.03, 0.08), True, True, "blue book"),
    ("vase", "vase", (0.0, 0.8, -1.45), (0.04, 0.075, 0.04), True, True, "white vase"),
]
_JITTERED = ("mug", "book", "vase")


def look_at(position, target, width: int = WIDTH, height: int = HEIGHT, focal: float = FOCAL) -> CameraModel:
    """Camera at ``position`` looking at ``target`` with world +y up."""
    position = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-9:
        raise InvalidGeometry("camera position and target coincide")
    forward /= norm
    right = np.cross(forward, UP)
    if np.linalg.norm(right) < 1e-6:
        right = np.cross(forward, np.array([0.0, 0.0, -1.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.array([right, down, forward])
    return CameraModel(focal, focal, width / 2.0, height / 2.0, width, height, rotation, -rotation @ position)


def render(camera: CameraModel, boxes: Sequence[OrientedBox3]) -> Tuple[np.ndarray, np.ndarray]:
    """Ray-cast camera z-depth and per-pixel box index (-1 for background) through pixel centers."""
    cols, rows = np.meshgrid(np.arange(camera.width) + 0.5, np.arange(camera.height) + 0.5)
    rays_cam = np.stack([(cols - camera.cx) / camera.fx, (rows - camera.cy) / camera.fy, np.ones_like(cols)], axis=-1)
    rays = rays_cam.reshape(-1, 3) @ camera.rotation
    origin = camera.center
    depth = np.full(rays.shape[0], np.inf)
    ids = np.full(rays.shape[0], -1, dtype=int)
    with np.errstate(divide="ignore", invalid="ignore"):
        for index, box in enumerate(boxes):
            o = box.rotation.T @ (origin - box.center)
            d = rays @ box.rotation
            t1 = (-box.half_extents - o) / d
            t2 = (box.half_extents - o) / d
            t_near = np.nanmax(np.minimum(t1, t2), axis=1)
            t_far = np.nanmin(np.maximum(t1, t2), axis=1)
            hit = (t_far >= t_near) & (t_near > 1e-6) & (t_near < depth)
            depth[hit] = t_near[hit]
            ids[hit] = index
    depth[~np.isfinite(depth)] = 0.0
    return depth.reshape(camera.height, camera.width), ids.reshape(camera.height, camera.width)


def tabletop_scene(seed: Optional[int] = None, scene_id: Optional[str] = None, include_vase: bool = True,
                   camera: Optional[CameraModel] = None) -> Scene:
    """Table with a mug, a book and a vase; ``seed`` jitters the small objects on the table top."""
    rng = np.random.default_rng(seed) if seed is not None else None
    camera = camera or look_at(CAMERA_POSITION, CAMERA_TARGET)
    objects = []
    for object_id, category, center, half, hq, movable, caption in _LAYOUT:
        if object_id == "vase" and not include_vase:
            continue
        center = np.array(center, dtype=float)
        if rng is not None and object_id in _JITTERED:
            center[0] += rng.uniform(-0.04, 0.04)
            center[2] += rng.uniform(-0.05, 0.05)
        objects.append(ObjectInstance(object_id, category, OrientedBox3(center, np.array(half)),
                                      dense_caption=caption, is_high_quality=hq, movable=movable))

    depth, ids = render(camera, [o.box for o in objects])
    objects = [replace(o, mask=RleMask.from_array(ids == i)) for i, o in enumerate(objects)]
    scene_id = scene_id or (f"tabletop-{seed:03d}" if seed is not None else "tabletop")
    logger.debug(f"Rendered {scene_id}: {int((depth > 0).sum())} valid depth pixels")
    return Scene(tuple(objects), camera, DepthMap(depth), scene_id=scene_id)


def carry_trace(scene: Scene, source: ObjectInstance, goal, lift: float = 0.25) -> Trace:
    """Lift, carry and lower: four keypoints in world meters."""
    start = source.box.center
    goal = np.asarray(goal, dtype=float)
    points = [start, start + lift * UP, goal + lift * UP, goal]
    return Trace.from_world(scene.camera, points)


def slide_trace(scene: Scene, source: ObjectInstance, goal, clearance: float = 0.01) -> Trace:
    start = source.box.center
    goal = np.asarray(goal, dtype=float)
    return Trace.from_world(scene.camera, [start, start + clearance * UP, goal])


def bench_suite(count: int, seed: int = 0) -> List[BenchSample]:
    """Samples whose reference traces move the mug or the book to a free spot nearer the camera."""
    samples = []
    for index in range(count):
        scene = tabletop_scene(seed=seed + index)
        movers = ("mug", "book")
        source = scene.object(movers[index % 2])
        goal = source.box.center + np.array([0.0, 0.01, 0.25])
        push = index % 3 == 2
        trace = slide_trace(scene, source, goal) if push else carry_trace(scene, source, goal)
        task = TaskSpec(Method.DIRECTIONAL_MOVE, source.id, direction=Direction.FRONT)
        prompt = render_instruction(task, trace.displacement, np.random.default_rng([seed, index]),
                                    {o.id: o.phrase for o in scene.objects})
        samples.append(BenchSample(
            sample_id=f"sample-{index:03d}",
            scene=scene,
            start_mask=source.mask,
            end_box=source.box.translated(goal),
            reference_trace=trace,
            prompt=prompt,
            step_count=len(trace),
            task_category=TaskCategory.PUSH_PULL if push else TaskCategory.PICK_PLACE,
            source_id=source.id,
        ))
    return samples
