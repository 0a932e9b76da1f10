from dataclasses import replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from ..config.settings import BypassConfig, Settings
from ..domain.entities.scene import CameraModel, ObjectInstance, OrientedBox3
from ..domain.errors import BypassStageError, PlanningError
from ..domain.value_objects.planning import PlannerParams, PlanResult, ViaCandidate
from .collision import Obstacles, as_world, check_collision
from .planner import rrt_star
from .scene_geometry import direction_vectors


def point_segment_distance(point, a, b) -> float:
    p, a, b = (np.asarray(x, dtype=float) for x in (point, a, b))
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom < 1e-18 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def path_distance(point, path) -> float:
    pts = np.asarray(path, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 1:
        return float(np.linalg.norm(np.asarray(point, dtype=float) - pts[0]))
    return min(point_segment_distance(point, a, b) for a, b in zip(pts[:-1], pts[1:]))


def find_blocking(direct_path, obstacles: Sequence[ObjectInstance], candidate_via_ids: Iterable[str],
                  margin: float = 0.05) -> Optional[str]:
    """Candidate whose bounding sphere comes closest to the path, if within ``margin``."""
    allowed = set(candidate_via_ids)
    best: Optional[Tuple[float, str]] = None
    for obj in obstacles:
        if obj.id not in allowed:
            continue
        surface = path_distance(obj.box.center, direct_path) - obj.box.radius
        key = (surface, obj.id)
        if best is None or key < best:
            best = key
    if best is not None and best[0] < margin:
        logger.debug(f"Blocking object {best[1]} at surface distance {best[0]:.3f} m")
        return best[1]
    return None


def via_candidates(via_obj: ObjectInstance, src_obj: ObjectInstance, delta_margin: float = 0.05,
                   obstacles: Optional[Obstacles] = None, camera: Optional[CameraModel] = None,
                   carry_height: Optional[float] = None) -> List[ViaCandidate]:
    """One via point per direction at c_obs + (r_obs + r_src + delta) * n_d.

    ``carry_height`` replaces the vertical coordinate of the four horizontal
    candidates so the carried object keeps clear of its support.
    """
    reach = via_obj.box.radius + src_obj.box.radius + delta_margin
    world = as_world(obstacles or [])
    out = []
    for direction, vector in direction_vectors(camera).items():
        point = via_obj.box.center + reach * vector
        if carry_height is not None and direction.horizontal:
            point = point.copy()
            point[1] = carry_height
        feasible = not check_collision(src_obj.box, point, world, {src_obj.id})
        out.append(ViaCandidate(direction, point, float("inf"), feasible))
    return out


def score_terms(path, goal) -> Dict[str, float]:
    pts = np.asarray(path, dtype=float).reshape(-1, 3)
    goal = np.asarray(goal, dtype=float)
    segments = np.diff(pts, axis=0)
    lengths = np.linalg.norm(segments, axis=1)
    heading = goal - pts[0]

    angle = 0.0
    moving = segments[lengths > 1e-12]
    for s0, s1 in zip(moving[:-1], moving[1:]):
        cos = float(s0 @ s1 / (np.linalg.norm(s0) * np.linalg.norm(s1)))
        angle += 1.0 - np.clip(cos, -1.0, 1.0)

    backtrack = 1.0 if np.any(segments @ heading < -1e-12) else 0.0

    norm = np.linalg.norm(heading)
    if norm < 1e-12:
        lateral = float(np.max(np.linalg.norm(pts - pts[0], axis=1)))
    else:
        axis = heading / norm
        offsets = pts - pts[0]
        lateral = float(np.max(np.linalg.norm(offsets - np.outer(offsets @ axis, axis), axis=1)))
    return {"length": float(lengths.sum()), "angle": angle, "backtrack": backtrack, "lateral": lateral}


def score_path(path, goal, config: Optional[BypassConfig] = None) -> float:
    """J = length + 0.3 turn penalty + 2.0 backtrack + 0.2 lateral deviation (default weights)."""
    config = config or BypassConfig()
    terms = score_terms(path, goal)
    return (config.w_length * terms["length"] + config.w_angle * terms["angle"]
            + config.w_backtrack * terms["backtrack"] + config.w_lateral * terms["lateral"])


def select_via(candidates: Sequence[ViaCandidate]) -> Optional[ViaCandidate]:
    """Cheapest feasible candidate; ties go to the earlier direction."""
    feasible = [c for c in candidates if c.feasible]
    if not feasible:
        return None
    order = Settings.DIRECTION_ORDER
    return min(feasible, key=lambda c: (c.cost_j, order.index(c.direction.value)))


def plan_with_bypass(start, via_point, goal, moving: OrientedBox3, obstacles: Obstacles,
                     params: Optional[PlannerParams] = None, exclude_ids: Iterable[str] = ()) -> PlanResult:
    """Two independent searches, start to via then via to goal."""
    params = params or PlannerParams()
    world = as_world(obstacles)
    exclude = set(exclude_ids)
    via = np.asarray(via_point, dtype=float).reshape(3)
    try:
        first = rrt_star(start, via, moving, world, exclude, params)
    except PlanningError as e:
        raise BypassStageError(1, e) from e
    try:
        second = rrt_star(via, goal, moving, world, exclude, replace(params, rng_seed=params.rng_seed + 1))
    except PlanningError as e:
        raise BypassStageError(2, e) from e
    path = np.vstack([first.path, second.path[1:]])
    return PlanResult(
        path=path,
        cost=first.cost + second.cost,
        iterations=first.iterations + second.iterations,
        via_point=via,
    )


def choose_via(via_obj: ObjectInstance, src_obj: ObjectInstance, start, goal, obstacles: Obstacles,
               config: Optional[BypassConfig] = None, params: Optional[PlannerParams] = None,
               camera: Optional[CameraModel] = None,
               carry_height: Optional[float] = None) -> Tuple[Optional[ViaCandidate], List[ViaCandidate]]:
    """Score every candidate and return the selected one plus the scored list.

    ``proxy`` mode scores the polyline start -> via -> goal; ``realized`` mode
    plans both stages per candidate and scores the planned path.
    """
    config = config or BypassConfig()
    world = as_world(obstacles)
    start = np.asarray(start, dtype=float)
    scored = []
    for cand in via_candidates(via_obj, src_obj, config.delta_margin, world, camera, carry_height):
        if not cand.feasible:
            scored.append(cand)
            continue
        if config.score_mode == "realized":
            try:
                result = plan_with_bypass(start, cand.via_point, goal, src_obj.box, world, params, {src_obj.id})
            except PlanningError as e:
                logger.debug(f"Via {cand.direction.value} unreachable: {e}")
                scored.append(replace(cand, feasible=False))
                continue
            path = result.path
        else:
            path = np.array([start, cand.via_point, goal])
        scored.append(replace(cand, cost_j=score_path(path, goal, config)))
    chosen = select_via(scored)
    if chosen is not None:
        logger.info(f"Bypassing {via_obj.id} on its {chosen.direction.value} side (J={chosen.cost_j:.3f})")
    return chosen, scored
