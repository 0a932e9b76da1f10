from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
from loguru import logger
from scipy.spatial import cKDTree

from ..config.settings import BenchConfig
from ..domain.entities.bench import BenchSample, SampleResult, TaskCategory
from ..domain.entities.scene import CameraModel, ObjectInstance, OccupancyGrid, Scene
from ..domain.entities.trace import Trace
from ..domain.errors import EmptyMask, InvalidGeometry
from ..domain.value_objects.geometry import Box2D
from .collision import sweep_fraction
from .scene_geometry import build_occupancy, depth_to_points, object_point_cloud, sample_box_surface

Prediction = Union[Trace, Sequence, None]


def prediction_to_trace(points, camera: CameraModel, coords: str = "normalized", grid: int = 1000) -> Trace:
    """Trace from predicted (u, v, d) rows, on the [0, grid] lattice or in raw pixels."""
    rows = []
    for p in points:
        if isinstance(p, Mapping):
            rows.append([p["u"], p["v"], p["d"]])
        else:
            rows.append(list(p))
    uvd = np.asarray(rows, dtype=float).reshape(-1, 3)
    if coords == "normalized":
        uvd = uvd * np.array([camera.width / grid, camera.height / grid, 1.0])
    elif coords != "pixels":
        raise InvalidGeometry(f"unknown coordinate convention {coords!r}")
    return Trace.from_image(camera, uvd)


def projected_box(camera: CameraModel, box) -> Optional[Box2D]:
    """Axis-aligned hull of the projected corners in front of the camera."""
    proj = camera.project_many(box.corners())
    ok = proj[:, 2] > 1e-6
    if not np.any(ok):
        return None
    u, v = proj[ok, 0], proj[ok, 1]
    return Box2D(float(u.min()), float(v.min()), float(u.max()), float(v.max()))


def _mask_hit(mask: np.ndarray, u: float, v: float) -> bool:
    if not (np.isfinite(u) and np.isfinite(v)):
        return False
    col, row = int(np.floor(u)), int(np.floor(v))
    return 0 <= row < mask.shape[0] and 0 <= col < mask.shape[1] and bool(mask[row, col])


def build_sample_from_trace(scene: Scene, source: ObjectInstance, goal_center, trace: Trace, prompt: str = "",
                            sample_id: Optional[str] = None,
                            category: TaskCategory = TaskCategory.PICK_PLACE) -> BenchSample:
    if source.mask is None or source.mask.area == 0:
        raise EmptyMask(f"object {source.id} has no mask")
    return BenchSample(
        sample_id=sample_id or f"{scene.scene_id}-{source.id}",
        scene=scene,
        start_mask=source.mask,
        end_box=source.box.translated(goal_center),
        reference_trace=trace,
        prompt=prompt,
        step_count=int(np.clip(len(trace), 2, 8)),
        task_category=category,
        source_id=source.id,
    )


@dataclass
class SuiteReport:
    results: List[SampleResult]
    percentages: Dict[str, float] = field(default_factory=dict)
    by_step_count: Dict[int, Dict[str, float]] = field(default_factory=dict)
    by_category: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def table_rows(self) -> List[Dict[str, Any]]:
        rows = [{"Group": "All", "Samples": len(self.results), **self._labelled(self.percentages)}]
        for steps, pct in sorted(self.by_step_count.items()):
            rows.append({"Group": f"{steps} steps", **self._labelled(pct)})
        for category, pct in sorted(self.by_category.items()):
            rows.append({"Group": category, **self._labelled(pct)})
        return rows

    def to_dict(self) -> Dict[str, Any]:
        return {
            "samples": len(self.results),
            "percentages": self.percentages,
            "by_step_count": {str(k): v for k, v in sorted(self.by_step_count.items())},
            "by_category": dict(sorted(self.by_category.items())),
            "results": [
                {"sample_id": r.sample_id, **{m: getattr(r, m) for m in SampleResult.METRICS},
                 "sweep_max_fraction": round(r.sweep_max_fraction, 6), "error": r.error}
                for r in self.results
            ],
        }

    @staticmethod
    def _labelled(pct: Dict[str, Any]) -> Dict[str, Any]:
        out = {}
        for key, value in pct.items():
            out["Samples" if key == "samples" else f"{key} (%)"] = value
        return out


def _percentages(results: Sequence[SampleResult]) -> Dict[str, float]:
    if not results:
        return {m: 0.0 for m in SampleResult.METRICS}
    return {m: round(100.0 * sum(bool(getattr(r, m)) for r in results) / len(results), 2)
            for m in SampleResult.METRICS}


class BenchEvaluator:
    """Scores predicted traces against bench samples; occupancy grids are cached per sample."""

    def __init__(self, config: Optional[BenchConfig] = None):
        self.config = config or BenchConfig()
        self._occupancy: Dict[str, OccupancyGrid] = {}

    def occupancy(self, sample: BenchSample) -> OccupancyGrid:
        grid = self._occupancy.get(sample.sample_id)
        if grid is None:
            scene = sample.scene
            grid = scene.occupancy or build_occupancy(scene.depth, scene.camera, self.config.voxel_size)
            self._occupancy[sample.sample_id] = grid
        return grid

    def background_cloud(self, sample: BenchSample) -> np.ndarray:
        """Depth points outside the start mask; their voxels stay occupied in the sweep."""
        scene = sample.scene
        return depth_to_points(scene.depth, scene.camera, ~sample.start_mask.to_array())

    def object_cloud(self, sample: BenchSample) -> np.ndarray:
        scene = sample.scene
        if self.config.start_cloud_source == "box_surface" and sample.source_id:
            box = scene.object(sample.source_id).box
            return sample_box_surface(box, 2000, np.random.default_rng(0))
        return object_point_cloud(scene, sample.start_mask)

    def evaluate_sample(self, pred: Prediction, sample: BenchSample) -> SampleResult:
        """Five success flags for one prediction; failures yield an all-false result."""
        try:
            return self._evaluate(pred, sample)
        except Exception as e:
            logger.warning(f"Sample {sample.sample_id} scored as failure: {e}")
            return SampleResult(sample.sample_id, error=str(e) or type(e).__name__)

    def _evaluate(self, pred: Prediction, sample: BenchSample) -> SampleResult:
        cfg = self.config
        camera = sample.scene.camera
        if pred is None:
            raise InvalidGeometry("no prediction")
        trace = pred if isinstance(pred, Trace) else prediction_to_trace(pred, camera, cfg.coords)
        if len(trace) == 0:
            raise InvalidGeometry("empty prediction")
        tail = slice(-min(cfg.end_window, len(trace)), None)

        mask = sample.start_mask.to_array()
        u0, v0 = trace.image_points[0, :2]
        start2d = _mask_hit(mask, u0, v0)

        hull = projected_box(camera, sample.end_box)
        end2d = hull is not None and any(hull.contains(u, v) for u, v in trace.image_points[tail, :2])

        cloud = self.object_cloud(sample)
        if len(cloud):
            nearest, _ = cKDTree(cloud).query(trace.world_points[0])
            start3d = bool(nearest <= cfg.distance_threshold)
        else:
            start3d = False

        end3d = bool(np.any(sample.end_box.distance(trace.world_points[tail]) <= cfg.distance_threshold))

        sweep = (sweep_fraction(cloud, trace.world_points, self.occupancy(sample), cfg.sweep_keypoints_only,
                                self.background_cloud(sample))
                 if len(cloud) else 1.0)
        overall = start3d and end3d and sweep <= cfg.sweep_threshold
        return SampleResult(sample.sample_id, start2d, end2d, start3d, end3d, overall, sweep)

    def evaluate_suite(self, samples: Iterable[BenchSample], preds: Mapping[str, Prediction]) -> SuiteReport:
        results, steps, categories = [], defaultdict(list), defaultdict(list)
        for sample in samples:
            if sample.sample_id in preds:
                result = self.evaluate_sample(preds[sample.sample_id], sample)
            else:
                result = SampleResult(sample.sample_id, error="missing prediction")
            results.append(result)
            steps[sample.step_count].append(result)
            categories[sample.task_category.value].append(result)
        report = SuiteReport(
            results=results,
            percentages=_percentages(results),
            by_step_count={k: {"samples": len(v), **_percentages(v)} for k, v in steps.items()},
            by_category={k: {"samples": len(v), **_percentages(v)} for k, v in categories.items()},
        )
        logger.info(f"Evaluated {len(results)} samples, overall {report.percentages['overall']:.1f}%")
        return report


def evaluate_sample(pred: Prediction, sample: BenchSample, config: Optional[BenchConfig] = None) -> SampleResult:
    return BenchEvaluator(config).evaluate_sample(pred, sample)


def evaluate_suite(samples: Iterable[BenchSample], preds: Mapping[str, Prediction],
                   config: Optional[BenchConfig] = None) -> SuiteReport:
    return BenchEvaluator(config).evaluate_suite(samples, preds)
