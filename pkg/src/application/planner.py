from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from ..config.settings import EscapeConfig
from ..domain.entities.scene import CameraModel, DepthMap, Direction, OrientedBox3
from ..domain.errors import EscapeFailed, GoalInCollision, MaxIterationsExceeded, StartInCollision
from ..domain.value_objects.planning import DestinationRegion, EscapeResult, PlannerParams, PlanResult
from .collision import Obstacles, as_world, check_collision, densify, segment_collides
from .scene_geometry import direction_vectors

POLAR_RADII = (0.0, 0.03, 0.06, 0.10, 0.15, 0.20)
DELTA_SAFETY = 0.01


def polar_candidates(region: DestinationRegion, radii: Sequence[float] = POLAR_RADII,
                     first_ring: int = 8, ring_increment: int = 4,
                     rng: Optional[np.random.Generator] = None) -> List[Tuple[float, float]]:
    """(x, z) candidates from the region centroid outward, ring by ring."""
    cx, cz = float(region.center[0]), float(region.center[2])
    out = []
    ring = 0
    for r in radii:
        if r <= 0:
            out.append((cx, cz))
            continue
        count = first_ring + ring_increment * ring
        ring += 1
        phase = float(rng.uniform(0.0, 2.0 * np.pi)) if rng is not None else 0.0
        for k in range(count):
            theta = phase + 2.0 * np.pi * k / count
            x, z = cx + r * np.cos(theta), cz + r * np.sin(theta)
            if region.contains_xz(x, z):
                out.append((x, z))
    return out


def sample_endpoint(region: DestinationRegion, platform_y: float, obj_height: float,
                    is_free: Callable[[np.ndarray], bool], rng: Optional[np.random.Generator] = None,
                    delta_safety: float = DELTA_SAFETY,
                    radii: Sequence[float] = POLAR_RADII) -> Optional[np.ndarray]:
    """First collision-free candidate, inner rings first, lifted to rest on the platform.

    ``rng`` only randomizes the angular phase; without it the phase is 0.
    """
    y = platform_y + 0.5 * obj_height + delta_safety
    for x, z in polar_candidates(region, radii, rng=rng):
        candidate = np.array([x, y, z])
        if is_free(candidate):
            return candidate
    logger.debug(f"No free endpoint around {np.round(region.center, 3).tolist()}")
    return None


def _path_length(path: np.ndarray) -> float:
    if len(path) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(path, axis=0), axis=1).sum())


def shortcut_path(path: np.ndarray, is_free_segment: Callable[[np.ndarray, np.ndarray], bool]) -> np.ndarray:
    """Greedy shortcut: from each kept point jump to the farthest visible one."""
    if len(path) <= 2:
        return path
    kept = [0]
    i = 0
    last = len(path) - 1
    while i < last:
        j = last
        while j > i + 1 and not is_free_segment(path[i], path[j]):
            j -= 1
        kept.append(j)
        i = j
    return path[kept]


def rrt_star(start, goal, moving: OrientedBox3, obstacles: Obstacles, exclude_ids: Iterable[str] = (),
             params: Optional[PlannerParams] = None,
             bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> PlanResult:
    """Goal-biased RRT* over translations of ``moving`` (orientation held fixed).

    After the goal first joins the tree the search keeps rewiring for
    ``refine_iterations`` more iterations, then returns the goal branch. A node
    within ``goal_tolerance`` of the goal joins it directly when that last
    segment is free, so the path always ends exactly at the goal.
    """
    params = params or PlannerParams()
    world = as_world(obstacles)
    exclude = set(exclude_ids)
    start = np.asarray(start, dtype=float).reshape(3)
    goal = np.asarray(goal, dtype=float).reshape(3)
    if check_collision(moving, start, world, exclude):
        raise StartInCollision(f"start {np.round(start, 3).tolist()} is in collision")
    if check_collision(moving, goal, world, exclude):
        raise GoalInCollision(f"goal {np.round(goal, 3).tolist()} is in collision")

    def free(a, b) -> bool:
        return not segment_collides(moving, a, b, world, exclude, params.sweep_step)

    if bounds is None:
        lo = np.minimum(start, goal) - params.sampling_margin
        hi = np.maximum(start, goal) + params.sampling_margin
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)

    rng = np.random.default_rng(params.rng_seed)
    capacity = params.max_iterations + 2
    nodes = np.empty((capacity, 3))
    parents = np.full(capacity, -1, dtype=int)
    costs = np.zeros(capacity)
    children: List[List[int]] = [[] for _ in range(capacity)]
    nodes[0] = start
    n = 1
    goal_idx = None
    goal_iteration = None

    def add_node(point, parent, cost) -> int:
        nonlocal n
        nodes[n] = point
        parents[n] = parent
        costs[n] = cost
        children[parent].append(n)
        n += 1
        return n - 1

    def propagate(root: int, delta: float) -> None:
        stack = list(children[root])
        while stack:
            k = stack.pop()
            costs[k] -= delta
            stack.extend(children[k])

    iteration = 0
    for iteration in range(1, params.max_iterations + 1):
        if goal_idx is not None and iteration - goal_iteration > params.refine_iterations:
            iteration -= 1
            break
        sample = goal if rng.random() < params.goal_bias else rng.uniform(lo, hi)
        dists = np.linalg.norm(nodes[:n] - sample, axis=1)
        nearest = int(np.argmin(dists))
        if dists[nearest] < 1e-12:
            continue
        if dists[nearest] <= params.step_size:
            new = sample.copy()
        else:
            new = nodes[nearest] + (sample - nodes[nearest]) * (params.step_size / dists[nearest])
        if goal_idx is not None and np.linalg.norm(new - goal) < 1e-9:
            continue
        if check_collision(moving, new, world, exclude):
            continue

        near_d = np.linalg.norm(nodes[:n] - new, axis=1)
        near = np.flatnonzero(near_d <= params.rewire_radius)
        if nearest not in near:
            near = np.append(near, nearest)
        parent = None
        for k in sorted(near, key=lambda k: (costs[k] + near_d[k], k)):
            if free(nodes[k], new):
                parent = int(k)
                break
        if parent is None:
            continue
        idx = add_node(new, parent, costs[parent] + near_d[parent])

        for k in near:
            k = int(k)
            if k == parent or k == 0:
                continue
            candidate = costs[idx] + near_d[k]
            if candidate < costs[k] - 1e-12 and free(new, nodes[k]):
                children[parents[k]].remove(k)
                parents[k] = idx
                children[idx].append(k)
                delta = costs[k] - candidate
                costs[k] = candidate
                propagate(k, delta)

        if goal_idx is None:
            gap = np.linalg.norm(goal - new)
            if gap < 1e-9:
                goal_idx, goal_iteration = idx, iteration
            elif gap <= params.goal_tolerance and free(new, goal):
                goal_idx = add_node(goal, idx, costs[idx] + gap)
                goal_iteration = iteration
            if goal_idx is not None:
                logger.debug(f"Goal reached at iteration {iteration} with cost {costs[goal_idx]:.3f}")

    if goal_idx is None:
        best = float(np.min(np.linalg.norm(nodes[:n] - goal, axis=1)))
        raise MaxIterationsExceeded(params.max_iterations, n, best)

    branch = []
    k = goal_idx
    while k != -1:
        branch.append(nodes[k])
        k = parents[k]
    path = np.array(branch[::-1])
    if params.shortcut:
        path = shortcut_path(path, free)
    path = densify(path, params.step_size)
    return PlanResult(path=path, cost=_path_length(path), iterations=iteration)


def _opening_scores(start: np.ndarray, moving: OrientedBox3, depth: DepthMap, camera: CameraModel,
                    config: EscapeConfig) -> dict:
    """Mean free ray length per direction over a pixel fan around the start."""
    uvz = camera.project_many(start)[0]
    if not (uvz[2] > 1e-6 and camera.in_frame(uvz[0], uvz[1])):
        return {}
    half = config.fan_size // 2
    offsets = np.arange(-half, half + 1, dtype=float)
    du, dv = np.meshgrid(offsets, offsets)
    fan = np.stack([uvz[0] + du.ravel(), uvz[1] + dv.ravel(), np.full(du.size, uvz[2])], axis=1)
    origins = camera.back_project_many(fan)
    ts = np.arange(moving.radius, config.ray_cap + 1e-9, config.ray_step)
    if ts.size == 0:
        return {}
    scores = {}
    for direction, vector in direction_vectors(camera).items():
        samples = origins[:, None, :] + ts[None, :, None] * vector
        proj = camera.project_many(samples.reshape(-1, 3))
        observed = depth.lookup(proj[:, 0], proj[:, 1])
        blocked = (proj[:, 2] > 1e-6) & (observed > 0) & (proj[:, 2] > observed + config.depth_tolerance)
        blocked = blocked.reshape(origins.shape[0], ts.size)
        first = np.where(blocked.any(axis=1), blocked.argmax(axis=1), ts.size)
        free_length = np.where(first < ts.size, ts[np.minimum(first, ts.size - 1)], config.ray_cap)
        scores[direction] = float(free_length.mean())
    return scores


def _advance(start, vector, first_step, moving, world, exclude, config: EscapeConfig) -> Optional[np.ndarray]:
    distance = first_step
    while distance <= config.max_distance + 1e-9:
        candidate = start + distance * vector
        if not check_collision(moving, candidate, world, exclude):
            return candidate
        distance += config.advance_step
    return None


def _push_directions(start: np.ndarray, moving: OrientedBox3, world, exclude) -> List[Tuple[float, float, np.ndarray]]:
    """Axis pushes ranked by total AABB penetration to clear every overlapping obstacle."""
    box = moving.translated(start).aabb()
    hits = world.candidates(box.min, box.max, exclude)
    ranked = []
    for axis in range(3):
        for sign in (1.0, -1.0):
            needed = []
            for i in hits:
                if sign > 0:
                    needed.append(world.maxs[i][axis] - box.min[axis])
                else:
                    needed.append(box.max[axis] - world.mins[i][axis])
            total = float(sum(needed))
            first = max(needed) if needed else 0.0
            vector = np.zeros(3)
            vector[axis] = sign
            ranked.append((total, first, vector))
    ranked.sort(key=lambda item: item[0])
    return ranked


def escape_start(start, moving: OrientedBox3, obstacles: Obstacles, depth: Optional[DepthMap] = None,
                 camera: Optional[CameraModel] = None, exclude_ids: Iterable[str] = (),
                 config: Optional[EscapeConfig] = None) -> EscapeResult:
    """Move an in-collision start to the nearest free pose.

    Depth-guided opening analysis picks the direction when a depth map and
    camera are present; otherwise, or when it is inconclusive, the start is
    pushed along the axis that minimizes total AABB penetration.
    """
    config = config or EscapeConfig()
    world = as_world(obstacles)
    exclude = set(exclude_ids)
    start = np.asarray(start, dtype=float).reshape(3)
    if not check_collision(moving, start, world, exclude):
        return EscapeResult(start, np.zeros((0, 3)), "none")

    if depth is not None and camera is not None:
        scores = _opening_scores(start, moving, depth, camera, config)
        if scores and max(scores.values()) >= config.inconclusive_score:
            vectors = direction_vectors(camera)
            best = max(Direction, key=lambda d: (scores.get(d, 0.0), -list(Direction).index(d)))
            point = _advance(start, vectors[best], config.advance_step, moving, world, exclude, config)
            if point is not None:
                logger.debug(f"Visual escape toward {best.value}: {np.linalg.norm(point - start):.3f} m")
                return EscapeResult(point, np.array([start, point]), "visual")
        logger.debug("Visual escape inconclusive, falling back to geometric push")

    for total, first, vector in _push_directions(start, moving, world, exclude):
        if first > config.max_distance:
            continue
        point = _advance(start, vector, first + 1e-3, moving, world, exclude, config)
        if point is not None:
            logger.debug(f"Geometric escape along {vector.tolist()}: {np.linalg.norm(point - start):.3f} m")
            return EscapeResult(point, np.array([start, point]), "geometric")
    raise EscapeFailed(f"no free pose within {config.max_distance} m of {np.round(start, 3).tolist()}")
