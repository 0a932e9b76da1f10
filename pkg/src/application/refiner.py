from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import ndimage

from ..config.settings import RefineConfig
from ..domain.entities.scene import UP, CameraModel, DepthMap, Direction, ObjectInstance
from ..domain.entities.trace import Trace
from ..domain.errors import EmptyMask, FinalPointOutOfFrame
from .bypass import path_distance, point_segment_distance
from .collision import densify
from .scene_geometry import direction_vectors

UNGROUNDED = "ungrounded"


def _dedupe(points: np.ndarray) -> np.ndarray:
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(points, axis=0), axis=1) > 1e-12
    return points[keep]


def _centripetal_segment(p0, p1, p2, p3, samples: int) -> np.ndarray:
    """Points on the centripetal span p1 -> p2, p1 included and p2 excluded."""
    t0 = 0.0
    t1 = t0 + np.linalg.norm(p1 - p0) ** 0.5
    t2 = t1 + np.linalg.norm(p2 - p1) ** 0.5
    t3 = t2 + np.linalg.norm(p3 - p2) ** 0.5
    t = np.linspace(t1, t2, samples + 1)[:-1].reshape(-1, 1)

    a1 = (t1 - t) / (t1 - t0) * p0 + (t - t0) / (t1 - t0) * p1
    a2 = (t2 - t) / (t2 - t1) * p1 + (t - t1) / (t2 - t1) * p2
    a3 = (t3 - t) / (t3 - t2) * p2 + (t - t2) / (t3 - t2) * p3
    b1 = (t2 - t) / (t2 - t0) * a1 + (t - t0) / (t2 - t0) * a2
    b2 = (t3 - t) / (t3 - t1) * a2 + (t - t1) / (t3 - t1) * a3
    c = (t2 - t) / (t2 - t1) * b1 + (t - t1) / (t2 - t1) * b2
    c[0] = p1
    return c


def _linear_segment(p1, p2, samples: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, samples + 1)[:-1].reshape(-1, 1)
    return p1 + t * (p2 - p1)


def _assemble(ctrl: np.ndarray, samples: int, linear: Iterable[int] = ()) -> np.ndarray:
    linear = set(linear)
    ext = np.vstack([2 * ctrl[0] - ctrl[1], ctrl, 2 * ctrl[-1] - ctrl[-2]])
    pieces = []
    for i in range(len(ctrl) - 1):
        if i in linear:
            pieces.append(_linear_segment(ctrl[i], ctrl[i + 1], samples))
        else:
            pieces.append(_centripetal_segment(ext[i], ext[i + 1], ext[i + 2], ext[i + 3], samples))
    pieces.append(ctrl[-1:])
    return np.vstack(pieces)


def _min_distance(path: np.ndarray, point: np.ndarray) -> float:
    return path_distance(point, path)


def smooth_catmull_rom(path, samples_per_segment: int = 10, via_point=None,
                       via_max_distance: float = 0.12) -> np.ndarray:
    """Centripetal (alpha = 0.5) spline through every control point.

    With a via point, spans that pull the curve more than ``via_max_distance``
    away from it fall back to straight lines, nearest span first.
    """
    ctrl = _dedupe(np.asarray(path, dtype=float).reshape(-1, 3))
    if len(ctrl) < 2:
        return ctrl.copy()
    samples = max(1, int(samples_per_segment))
    smoothed = _assemble(ctrl, samples)
    if via_point is None:
        return smoothed
    via = np.asarray(via_point, dtype=float).reshape(3)
    if _min_distance(smoothed, via) <= via_max_distance:
        return smoothed

    spans = [point_segment_distance(via, a, b) for a, b in zip(ctrl[:-1], ctrl[1:])]
    nearest = int(np.argmin(spans))
    linear = {i for i in (nearest - 1, nearest, nearest + 1) if 0 <= i < len(ctrl) - 1}
    smoothed = _assemble(ctrl, samples, linear)
    if _min_distance(smoothed, via) > via_max_distance:
        smoothed = _assemble(ctrl, samples, range(len(ctrl) - 1))
    logger.debug(f"Via constraint rejected smoothing on spans {sorted(linear)}")
    return smoothed


def _line_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    norm = np.linalg.norm(ab)
    if norm < 1e-12:
        return np.linalg.norm(points - a, axis=1)
    return np.linalg.norm(np.cross(points - a, ab / norm), axis=1)


def _rdp_mask(points: np.ndarray, epsilon: float, anchors: Sequence[int]) -> np.ndarray:
    keep = np.zeros(len(points), dtype=bool)
    cuts = sorted({0, len(points) - 1, *[a for a in anchors if 0 <= a < len(points)]})
    keep[cuts] = True
    stack = list(zip(cuts[:-1], cuts[1:]))
    while stack:
        s, e = stack.pop()
        if e <= s + 1:
            continue
        d = _line_distances(points[s + 1:e], points[s], points[e])
        k = int(np.argmax(d))
        if d[k] > epsilon:
            mid = s + 1 + k
            keep[mid] = True
            stack.append((s, mid))
            stack.append((mid, e))
    return keep


def simplify_rdp_indices(path, epsilon: float, max_points: Optional[int] = 8,
                         anchors: Sequence[int] = ()) -> Tuple[np.ndarray, float]:
    """Kept indices and the epsilon that produced them.

    While more than ``max_points`` survive, epsilon doubles; ``max_points=None``
    disables the escalation.
    """
    pts = np.asarray(path, dtype=float).reshape(-1, 3)
    if len(pts) <= 2:
        return np.arange(len(pts)), epsilon
    eps = epsilon if epsilon > 0 else 1e-9
    keep = _rdp_mask(pts, eps, anchors)
    if max_points is not None:
        floor = len({0, len(pts) - 1, *[a for a in anchors if 0 <= a < len(pts)]})
        while keep.sum() > max(max_points, floor):
            eps *= 2.0
            keep = _rdp_mask(pts, eps, anchors)
        if eps != epsilon:
            logger.debug(f"RDP epsilon escalated to {eps:.4f} for {int(keep.sum())} keypoints")
    return np.flatnonzero(keep), eps


def simplify_rdp(path, epsilon: float, max_points: Optional[int] = 8, anchors: Sequence[int] = ()) -> np.ndarray:
    pts = np.asarray(path, dtype=float).reshape(-1, 3)
    idx, _ = simplify_rdp_indices(pts, epsilon, max_points, anchors)
    return pts[idx]


def ground_endpoint(trace: Trace, depth: DepthMap, camera: CameraModel, tol: float = 0.02,
                    config: Optional[RefineConfig] = None) -> Trace:
    """Lower the final point along gravity until its depth agrees with the sensor.

    If the descent cap is hit first the trace comes back unchanged and flagged.
    """
    config = config or RefineConfig()
    end = trace.world_points[-1]
    u, v, z = camera.project_many(end)[0]
    if not (z > 1e-6 and camera.in_frame(u, v)):
        raise FinalPointOutOfFrame(f"final point {np.round(end, 3).tolist()} projects outside the image")

    steps = int(round(config.descent_cap / config.descent_step))
    offsets = np.arange(steps + 1)[:, None] * config.descent_step * UP
    candidates = end - offsets
    proj = camera.project_many(candidates)
    observed = depth.lookup(proj[:, 0], proj[:, 1])
    ok = (proj[:, 2] > 1e-6) & camera.in_frame(proj[:, 0], proj[:, 1]) & (observed > 0)
    ok &= np.abs(proj[:, 2] - observed) <= tol
    if not np.any(ok):
        logger.debug("Endpoint grounding reached the descent cap")
        return trace.with_flag(UNGROUNDED)
    k = int(np.argmax(ok))
    if k == 0:
        return trace
    world = trace.world_points.copy()
    world[-1] = candidates[k]
    return trace.with_world(camera, world)


def largest_component(mask: np.ndarray) -> np.ndarray:
    labels, count = ndimage.label(np.asarray(mask, dtype=bool))
    if count == 0:
        raise EmptyMask("mask has no foreground pixels")
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def mask_centroid(mask) -> Tuple[float, float]:
    """(u, v) centroid of the largest 4-connected component, pixel centers at i + 0.5."""
    arr = mask.to_array() if hasattr(mask, "to_array") else np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(largest_component(arr))
    return float(cols.mean()) + 0.5, float(rows.mean()) + 0.5


def align_start(trace: Trace, mask, camera: CameraModel) -> Trace:
    """Snap the first point to the mask centroid, keeping its metric depth."""
    u, v = mask_centroid(mask)
    image = trace.image_points.copy()
    image[0, 0], image[0, 1] = u, v
    world = trace.world_points.copy()
    world[0] = camera.back_project_many(image[:1])[0]
    return Trace(world, image, frame=trace.frame, via_point=trace.via_point, flags=trace.flags)


def _tangents(points: np.ndarray) -> np.ndarray:
    tangents = np.gradient(points, axis=0) if len(points) > 1 else np.zeros_like(points)
    norms = np.linalg.norm(tangents, axis=1, keepdims=True)
    return np.where(norms > 1e-12, tangents / np.maximum(norms, 1e-12), 0.0)


def discover_vias(trace: Trace, objects: Sequence[ObjectInstance], exclude_ids: Iterable[str] = (),
                  camera: Optional[CameraModel] = None, threshold: float = 0.15,
                  density: float = 0.01) -> List[Tuple[str, Direction]]:
    """Objects the trace passes within ``threshold`` of, with the side they sit on."""
    excluded = set(exclude_ids)
    dense = densify(trace.world_points, density)
    tangents = _tangents(dense)
    vectors = direction_vectors(camera)
    found = []
    for obj in sorted(objects, key=lambda o: o.id):
        if obj.id in excluded:
            continue
        surface = np.linalg.norm(dense - obj.box.center, axis=1) - obj.box.radius
        k = int(np.argmin(surface))
        if surface[k] >= threshold:
            continue
        offset = obj.box.center - dense[k]
        offset = offset - (offset @ tangents[k]) * tangents[k]
        label = max(Direction, key=lambda d: (float(offset @ vectors[d]), -list(Direction).index(d)))
        found.append((obj.id, label))
    return found
