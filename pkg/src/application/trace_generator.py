from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from ..config.settings import Settings
from ..domain.entities.scene import Direction, Method, ObjectInstance, Scene, TaskSpec
from ..domain.entities.trace import Trace
from ..domain.errors import EmptyMask, TaskInfeasible, TraceSpatialError
from ..domain.value_objects.planning import DestinationRegion
from ..domain.value_objects.quality import QcVerdict, RejectReason
from .bench_evaluator import BenchEvaluator, build_sample_from_trace
from .bypass import choose_via, find_blocking, plan_with_bypass
from .collision import CollisionWorld, check_collision
from .instruction_builder import QaKind, format_trace_qa, key_steps_for_trace, render_enriched_instruction, render_instruction
from .planner import escape_start, rrt_star, sample_endpoint
from .quality_control import run_qc
from .refiner import align_start, discover_vias, ground_endpoint, simplify_rdp_indices, smooth_catmull_rom
from .scene_geometry import (
    align_scene, assign_roles, build_occupancy, direction_vectors, find_supporter, object_point_cloud, validate_object,
)

HORIZONTAL = [d for d in Direction if d.horizontal]


@dataclass
class TaskOutcome:
    index: int
    task: TaskSpec
    accepted: bool
    reason: Optional[str] = None
    records: List[Dict[str, Any]] = field(default_factory=list)


@dataclass
class PlannedPath:
    goal: np.ndarray
    path: np.ndarray
    via_point: Optional[np.ndarray] = None
    via_direction: Optional[Direction] = None
    escape_mode: str = "none"


def _footprint(obj: ObjectInstance) -> float:
    size = obj.box.aabb().size
    return float(size[0] * size[2])


def _facing(vector: np.ndarray, vectors: Dict[Direction, np.ndarray]) -> Direction:
    return max(HORIZONTAL, key=lambda d: (float(vector @ vectors[d]), -list(Direction).index(d)))


def _platforms(scene: Scene, settings: Settings, *objects: ObjectInstance) -> set:
    ids = set()
    for obj in objects:
        supporter = find_supporter(obj, scene.objects, settings.scene)
        if supporter is not None:
            ids.add(supporter.id)
    return ids


def auto_tasks(scene: Scene, seed: int, settings: Optional[Settings] = None) -> List[TaskSpec]:
    """Enumerate tasks whose method preconditions hold, then keep a seeded subset in enumeration order."""
    settings = settings or Settings()
    roles = assign_roles(scene, settings.scene)
    by_id = scene.by_id
    vectors = direction_vectors(scene.camera)
    distance = settings.pipeline.auto_distance
    candidates: List[TaskSpec] = []
    for src_id in roles.sources:
        src = by_id[src_id]
        for direction in HORIZONTAL:
            candidates.append(TaskSpec(Method.DIRECTIONAL_MOVE, src_id, direction=direction, distance=distance))
        for ref_id in roles.references:
            if ref_id == src_id or ref_id in _platforms(scene, settings, src):
                continue
            ref = by_id[ref_id]
            stackable = _footprint(ref) >= _footprint(src)
            for direction in HORIZONTAL:
                candidates.append(TaskSpec(Method.PLACE_RELATIVE, src_id, ref_id, direction=direction))
            if stackable:
                candidates.append(TaskSpec(Method.STACKING, src_id, ref_id))

            skip = {src_id, ref_id} | _platforms(scene, settings, src, ref)
            movable = [o for o in scene.objects if o.is_high_quality and o.id not in skip]
            via_id = find_blocking([src.box.center, ref.box.center], movable, [o.id for o in movable],
                                   settings.bypass.blocking_margin)
            if via_id is None:
                continue
            near_side = _facing(src.box.center - ref.box.center, vectors)
            candidates.append(TaskSpec(Method.BYPASS_PLACE, src_id, ref_id, via_id, direction=near_side))
            if stackable:
                candidates.append(TaskSpec(Method.BYPASS_STACK, src_id, ref_id, via_id))

    cap = settings.pipeline.max_auto_tasks
    if len(candidates) > cap:
        keep = np.sort(np.random.default_rng(seed).choice(len(candidates), size=cap, replace=False))
        candidates = [candidates[i] for i in keep]
    logger.info(f"Auto tasks for {scene.scene_id}: {len(candidates)} selected")
    return candidates


class TraceGenerator:
    """Turns (scene, task) pairs into refined, quality-checked traces with instructions and QA."""

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or Settings()

    def prepare(self, scene: Scene) -> Scene:
        """Gravity-align, drop objects with degenerate corners, build occupancy once."""
        scene = align_scene(scene)
        valid = tuple(o for o in scene.objects if validate_object(o.box.corners()))
        if len(valid) < len(scene.objects):
            dropped = sorted({o.id for o in scene.objects} - {o.id for o in valid})
            logger.warning(f"{scene.scene_id}: dropping objects with invalid boxes: {dropped}")
            scene = replace(scene, objects=valid)
        if scene.occupancy is not None:
            return scene
        return replace(scene, occupancy=build_occupancy(scene.depth, scene.camera, self.settings.qc.voxel_size))

    def destination(self, scene: Scene, task: TaskSpec, src: ObjectInstance, world: CollisionWorld,
                    rng: np.random.Generator) -> np.ndarray:
        half = self.settings.pipeline.region_half_size
        vectors = direction_vectors(scene.camera)
        height = float(src.box.aabb().size[1])

        def is_free(point) -> bool:
            return not check_collision(src.box, point, world, {src.id})

        def platform_top(obj: ObjectInstance) -> float:
            supporter = find_supporter(obj, scene.objects, self.settings.scene)
            return float(supporter.box.aabb().max[1]) if supporter else float(obj.box.aabb().min[1])

        if task.method.stacks or task.direction == Direction.ABOVE:
            ref = scene.object(task.reference_id)
            top = ref.box.aabb()
            region = DestinationRegion(ref.box.center, min(half, 0.5 * top.size[0]), min(half, 0.5 * top.size[2]))
            platform = float(top.max[1])
        elif task.direction is not None and not task.direction.horizontal:
            raise TaskInfeasible(f"cannot place {src.id} {task.direction.value} a support",
                                 reason="unsupported_direction")
        elif task.method == Method.DIRECTIONAL_MOVE:
            n = vectors[task.direction]
            distance = task.distance if task.distance is not None else self.settings.pipeline.auto_distance
            region = DestinationRegion(src.box.center + distance * n, half, half)
            platform = platform_top(src)
        else:
            ref = scene.object(task.reference_id)
            n = vectors[task.direction]
            reach = ref.box.extent_along(n) + src.box.extent_along(n) + self.settings.pipeline.placement_gap
            region = DestinationRegion(ref.box.center + reach * n, half, half)
            platform = platform_top(ref)

        goal = sample_endpoint(region, platform, height, is_free, rng)
        if goal is None:
            raise TaskInfeasible(f"no free endpoint for {src.id}", reason="no_free_endpoint")
        return goal

    def plan(self, scene: Scene, task: TaskSpec, src: ObjectInstance, world: CollisionWorld,
             rng: np.random.Generator) -> PlannedPath:
        settings = self.settings
        goal = self.destination(scene, task, src, world, rng)
        params = replace(settings.planner, rng_seed=int(rng.integers(2 ** 31 - 1)))
        escape = escape_start(src.box.center, src.box, world, scene.depth, scene.camera, {src.id}, settings.escape)

        via_point, via_direction = None, None
        if task.method.uses_via:
            via_obj = scene.object(task.via_id)
            chosen, _ = choose_via(via_obj, src, escape.point, goal, world, settings.bypass, params,
                                   scene.camera, carry_height=float(src.box.center[1]))
            if chosen is None:
                raise TaskInfeasible(f"no feasible side around {via_obj.id}", reason="no_feasible_via")
            result = plan_with_bypass(escape.point, chosen.via_point, goal, src.box, world, params, {src.id})
            via_point, via_direction = chosen.via_point, chosen.direction
        else:
            result = rrt_star(escape.point, goal, src.box, world, {src.id}, params)

        result = replace(result, escape_prefix=escape.segment)
        return PlannedPath(goal, result.full_path, via_point, via_direction, escape.mode)

    def refine(self, scene: Scene, src: ObjectInstance, planned: PlannedPath) -> Trace:
        cfg = self.settings.refine
        smoothed = smooth_catmull_rom(planned.path, cfg.samples_per_segment, planned.via_point, cfg.via_max_distance)
        anchors: Tuple[int, ...] = ()
        if planned.via_point is not None:
            anchors = (int(np.argmin(np.linalg.norm(smoothed - planned.via_point, axis=1))),)
        idx, _ = simplify_rdp_indices(smoothed, cfg.rdp_epsilon, cfg.max_keypoints, anchors)
        trace = Trace.from_world(scene.camera, smoothed[idx], via_point=planned.via_point)
        trace = ground_endpoint(trace, scene.depth, scene.camera, cfg.ground_tolerance, cfg)
        return align_start(trace, src.mask, scene.camera)

    def self_check(self, scene: Scene, src: ObjectInstance, goal: np.ndarray, trace: Trace, task_id: str) -> bool:
        sample = build_sample_from_trace(scene, src, goal, trace, sample_id=task_id)
        result = BenchEvaluator(self.settings.bench).evaluate_sample(trace, sample)
        if not result.overall:
            logger.warning(f"Task {task_id} failed its own bench check (sweep {result.sweep_max_fraction:.3f})")
        return result.overall

    def run_task(self, scene: Scene, task: TaskSpec, index: int, seed: int) -> TaskOutcome:
        """One task end to end; every failure becomes a rejection record."""
        task_id = f"{scene.scene_id}-{index:03d}"
        try:
            return self._run_task(scene, task, index, seed, task_id)
        except TraceSpatialError as e:
            reason = getattr(e, "reason", "error")
            logger.warning(f"Task {task_id} rejected ({reason}): {e}")
            return self._rejection(scene, task, index, task_id, reason, str(e))
        except Exception as e:
            logger.exception(f"Task {task_id} failed unexpectedly: {e}")
            return self._rejection(scene, task, index, task_id, "error", f"{type(e).__name__}: {e}")

    def _rejection(self, scene: Scene, task: TaskSpec, index: int, task_id: str, reason: str,
                   message: str = "", verdict: Optional[QcVerdict] = None) -> TaskOutcome:
        record = {"type": "rejection", "task_id": task_id, "scene_id": scene.scene_id, "task": task.to_dict(),
                  "reason": reason, "message": message}
        if verdict is not None:
            record["qc"] = verdict.to_dict()
        return TaskOutcome(index, task, False, reason, [record])

    def _run_task(self, scene: Scene, task: TaskSpec, index: int, seed: int, task_id: str) -> TaskOutcome:
        settings = self.settings
        task.validate(scene)
        rng = np.random.default_rng([seed, index])
        src = scene.object(task.source_id)
        if src.mask is None or src.mask.area == 0:
            raise EmptyMask(f"source {src.id} has no visible mask")
        world = CollisionWorld(scene.objects)

        planned = self.plan(scene, task, src, world, rng)
        trace = self.refine(scene, src, planned)

        mask = src.mask.to_array()
        verdict = run_qc(trace, scene, src, settings.qc, object_point_cloud(scene, mask), scene.occupancy, mask,
                         Settings.MOVABILITY_BLOCKLIST)
        if not verdict.accepted:
            logger.warning(f"Task {task_id} rejected by QC: {verdict.reason}")
            return self._rejection(scene, task, index, task_id, verdict.reason, verdict=verdict)
        if settings.pipeline.self_check and not self.self_check(scene, src, planned.goal, trace, task_id):
            return self._rejection(scene, task, index, task_id, RejectReason.SELF_CHECK, verdict=verdict)

        phrases = {o.id: o.phrase for o in scene.objects}
        reference = scene.object(task.reference_id) if task.reference_id else None
        discovered: List[Tuple[str, Direction]] = []
        if not task.method.uses_via:
            quality = [o for o in scene.objects if o.is_high_quality]
            excluded = {src.id, task.reference_id} | _platforms(scene, settings, *[o for o in (src, reference) if o])
            discovered = discover_vias(trace, quality, excluded, scene.camera, settings.refine.via_threshold,
                                       settings.refine.via_density)
        horizontal_vias = [(oid, d) for oid, d in discovered if d.horizontal]
        if horizontal_vias:
            via_id, via_direction = horizontal_vias[0]
            instruction = render_enriched_instruction(task, rng, phrases, via_id, via_direction)
        else:
            instruction = render_instruction(task, trace.displacement, rng, phrases, planned.via_direction)

        grid = settings.instruct.grid
        annotations = key_steps_for_trace(scene, src, trace, reference, grid)
        trace_record = {
            "type": "trace",
            "task_id": task_id,
            "scene_id": scene.scene_id,
            "task": task.to_dict(),
            "frame": trace.frame.value,
            "points": trace.to_records(settings.pipeline.float_decimals),
            "via_point": trace.via_point.tolist() if trace.via_point is not None else None,
            "via_direction": planned.via_direction.value if planned.via_direction else None,
            "discovered_vias": [{"object": oid, "direction": d.value} for oid, d in discovered],
            "escape": planned.escape_mode,
            "flags": list(trace.flags),
            "goal": planned.goal.tolist(),
            "qc": verdict.to_dict(),
            "instruction": instruction,
        }
        records = [trace_record]
        for kind in QaKind:
            prompt, answer = format_trace_qa(trace, kind, instruction, scene.camera, rng, grid)
            records.append({
                "type": "qa",
                "task_id": task_id,
                "kind": kind.value,
                "prompt": prompt,
                "answer": answer,
                "instruction": instruction,
                "key_steps": annotations["key_steps"],
                "image_width": annotations["image_width"],
                "image_height": annotations["image_height"],
                "scene_max_depth": annotations["scene_max_depth"],
            })
        logger.info(f"Task {task_id} accepted: {len(trace)} keypoints, {trace.displacement:.3f} m")
        return TaskOutcome(index, task, True, None, records)

    def generate(self, scene: Scene, tasks: Union[str, Sequence[TaskSpec]], seed: int = 0,
                 workers: Optional[int] = None) -> List[TaskOutcome]:
        """Run every task; outcomes come back in task order whatever the worker count."""
        scene = self.prepare(scene)
        if isinstance(tasks, str):
            if tasks != "auto":
                raise TaskInfeasible(f"unknown task source {tasks!r}", reason="bad_tasks")
            tasks = auto_tasks(scene, seed, self.settings)
        tasks = list(tasks)
        workers = workers or self.settings.pipeline.workers
        if workers > 1 and len(tasks) > 1:
            jobs = [(self.settings, scene, task, index, seed) for index, task in enumerate(tasks)]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_run_job, jobs))
        else:
            outcomes = [self.run_task(scene, task, index, seed) for index, task in enumerate(tasks)]
        accepted = sum(o.accepted for o in outcomes)
        logger.info(f"{scene.scene_id}: {accepted}/{len(outcomes)} tasks accepted")
        return outcomes


def _run_job(job) -> TaskOutcome:
    settings, scene, task, index, seed = job
    return TraceGenerator(settings).run_task(scene, task, index, seed)


def outcome_records(outcomes: Sequence[TaskOutcome]) -> List[Dict[str, Any]]:
    return [record for outcome in outcomes for record in outcome.records]


def rejection_counts(outcomes: Sequence[TaskOutcome]) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for outcome in outcomes:
        if not outcome.accepted:
            counts[outcome.reason] = counts.get(outcome.reason, 0) + 1
    return counts
