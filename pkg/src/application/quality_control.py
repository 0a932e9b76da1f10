from typing import Iterable, Optional

import numpy as np
from loguru import logger

from ..config.settings import QcConfig, Settings
from ..domain.entities.scene import CameraModel, DepthMap, ObjectInstance, OccupancyGrid, Scene
from ..domain.entities.trace import Trace
from ..domain.value_objects.quality import QcVerdict, RejectReason
from .collision import densify, sweep_fraction
from .scene_geometry import depth_to_points


def occlusion_ratio(trace: Trace, depth: DepthMap, camera: CameraModel, spacing: float = 0.01,
                    tol: float = 0.03, ignore_mask: Optional[np.ndarray] = None) -> float:
    """Fraction of interpolated waypoints hidden behind the depth buffer.

    Pixels without a depth reading never occlude. Waypoints on ``ignore_mask``
    are left out of both counts.
    """
    dense = densify(trace.world_points, spacing)
    proj = camera.project_many(dense)
    u, v, z = proj[:, 0], proj[:, 1], proj[:, 2]
    visible = (z > 1e-6) & camera.in_frame(u, v)
    observed = depth.lookup(u, v)
    occluded = visible & (observed > 0) & (z - observed > tol)

    counted = np.ones(len(dense), dtype=bool)
    if ignore_mask is not None:
        mask = np.asarray(ignore_mask, dtype=bool)
        on_mask = np.zeros(len(dense), dtype=bool)
        cols = np.floor(u[visible]).astype(int)
        rows = np.floor(v[visible]).astype(int)
        on_mask[visible] = mask[rows, cols]
        counted &= ~on_mask
    total = int(counted.sum())
    if total == 0:
        return 0.0
    return float(np.count_nonzero(occluded & counted)) / total


def min_displacement(obj: ObjectInstance, l_base: float) -> float:
    """Volume-adaptive length floor L_base * V^(1/3)."""
    return float(l_base * np.cbrt(obj.box.volume))


def run_qc(trace: Trace, scene: Scene, src_obj: ObjectInstance, config: Optional[QcConfig] = None,
           object_points: Optional[np.ndarray] = None, occupancy: Optional[OccupancyGrid] = None,
           ignore_mask: Optional[np.ndarray] = None,
           blocklist: Iterable[str] = Settings.MOVABILITY_BLOCKLIST) -> QcVerdict:
    """First failing check wins: blocklist, frame, occlusion, length, then collision sweep."""
    config = config or QcConfig()
    if src_obj.category.lower() in {c.lower() for c in blocklist}:
        return QcVerdict.reject(RejectReason.BLOCKLIST)

    keypoints = trace.image_points
    inside = scene.camera.in_frame(keypoints[:, 0], keypoints[:, 1])
    if not np.all(inside):
        return QcVerdict.reject(RejectReason.OUT_OF_FRAME, outside=float(np.count_nonzero(~inside)))

    occlusion = occlusion_ratio(trace, scene.depth, scene.camera, config.occlusion_spacing,
                                config.occlusion_tolerance, ignore_mask)
    if occlusion > config.max_occlusion:
        return QcVerdict.reject(RejectReason.OCCLUSION, occlusion=occlusion)

    threshold = min_displacement(src_obj, config.l_base)
    displacement = trace.displacement
    if displacement < threshold:
        return QcVerdict.reject(RejectReason.TOO_SHORT, displacement=displacement, threshold=threshold)

    details = {"occlusion": occlusion, "displacement": displacement, "threshold": threshold}
    if object_points is not None and occupancy is not None:
        background = None
        if ignore_mask is not None:
            background = depth_to_points(scene.depth, scene.camera, ~np.asarray(ignore_mask, dtype=bool))
        sweep = sweep_fraction(object_points, trace.world_points, occupancy, scene_points=background)
        details["sweep"] = sweep
        if sweep > config.max_sweep:
            return QcVerdict.reject(RejectReason.COLLISION, **details)

    logger.debug(f"QC accepted trace for {src_obj.id}: {details}")
    return QcVerdict.accept(**details)
