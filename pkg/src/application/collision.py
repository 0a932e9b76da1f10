from typing import Iterable, List, Sequence, Union

import numpy as np
from loguru import logger

from ..domain.entities.scene import ObjectInstance, OccupancyGrid, OrientedBox3
from ..domain.errors import InvalidGeometry

SAT_EPSILON = 1e-9
PARALLEL_EPSILON = 1e-8
MIN_HALF_EXTENT = 1e-4
_TIE_RATIO = 1e-6


class CollisionWorld:
    """Obstacle set with cached AABBs for vectorized broad-phase culling."""

    def __init__(self, obstacles: Iterable[ObjectInstance]):
        self.objects: List[ObjectInstance] = list(obstacles)
        self.ids = [obj.id for obj in self.objects]
        if self.objects:
            boxes = [obj.box.aabb() for obj in self.objects]
            self.mins = np.array([b.min for b in boxes])
            self.maxs = np.array([b.max for b in boxes])
        else:
            self.mins = np.zeros((0, 3))
            self.maxs = np.zeros((0, 3))

    def __len__(self) -> int:
        return len(self.objects)

    def candidates(self, lo: np.ndarray, hi: np.ndarray, exclude_ids: Iterable[str] = ()) -> List[int]:
        if not self.objects:
            return []
        hit = np.all(self.mins <= hi, axis=1) & np.all(self.maxs >= lo, axis=1)
        excluded = set(exclude_ids)
        return [i for i in np.flatnonzero(hit) if self.ids[i] not in excluded]


Obstacles = Union[CollisionWorld, Sequence[ObjectInstance]]


def as_world(obstacles: Obstacles) -> CollisionWorld:
    return obstacles if isinstance(obstacles, CollisionWorld) else CollisionWorld(obstacles)


def _right_handed(axes: np.ndarray) -> np.ndarray:
    """Columns e1, e2 with a deterministic sign; e3 = e1 x e2."""
    out = np.array(axes, dtype=float)
    for k in range(2):
        col = out[:, k]
        pivot = int(np.argmax(np.abs(col) > np.abs(col).max() - 1e-9))
        if col[pivot] < 0:
            out[:, k] = -col
    out[:, 2] = np.cross(out[:, 0], out[:, 1])
    return out


def _fit_frame(centered: np.ndarray, axes: np.ndarray):
    proj = centered @ axes
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    half = np.maximum(0.5 * (hi - lo), MIN_HALF_EXTENT)
    return half, 0.5 * (hi + lo)


def _difference_frames(points: np.ndarray) -> List[np.ndarray]:
    """Orthonormal frames spanned by pairs of point differences."""
    if points.shape[0] > 16:
        points = points[np.linspace(0, points.shape[0] - 1, 16).astype(int)]
    diffs = []
    for i in range(points.shape[0]):
        for j in range(i + 1, points.shape[0]):
            d = points[j] - points[i]
            n = np.linalg.norm(d)
            if n > 1e-9:
                diffs.append(d / n)
    frames = []
    for a in diffs:
        for b in diffs:
            b_perp = b - (b @ a) * a
            n = np.linalg.norm(b_perp)
            if n < 1e-6:
                continue
            e2 = b_perp / n
            frames.append(np.column_stack([a, e2, np.cross(a, e2)]))
    return frames


def obb_from_points(points) -> OrientedBox3:
    """Oriented box from PCA on the points.

    Axes are ordered by descending spread and made right-handed. When principal
    spreads tie (cubes, squares) PCA leaves the frame undetermined, so the
    minimum-volume frame spanned by point differences is used instead.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 4 or not np.all(np.isfinite(pts)):
        raise InvalidGeometry("need at least 4 finite points")
    mean = pts.mean(axis=0)
    centered = pts - mean
    eigvals, eigvecs = np.linalg.eigh(centered.T @ centered / pts.shape[0])
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    scale = eigvals[0]
    if scale <= 1e-18 or eigvals[1] <= scale * 1e-12:
        raise InvalidGeometry("points are coincident or collinear")

    best = _right_handed(eigvecs)
    half, mid = _fit_frame(centered, best)
    tied = (eigvals[0] - eigvals[1]) <= _TIE_RATIO * scale or (eigvals[1] - eigvals[2]) <= _TIE_RATIO * scale
    if tied:
        best_volume = float(np.prod(half))
        for frame in _difference_frames(pts):
            h, m = _fit_frame(centered, frame)
            volume = float(np.prod(h))
            if volume < best_volume * (1.0 - 1e-9):
                best, half, mid, best_volume = frame, h, m, volume
        order = np.argsort(-half, kind="stable")
        best = _right_handed(best[:, order])
        half, mid = _fit_frame(centered, best)
    # Center on the projected range so every input point lies inside.
    return OrientedBox3(mean + best @ mid, half, best)


def sat_intersect(a: OrientedBox3, b: OrientedBox3) -> bool:
    """Separating-axis test over the 15 candidate axes; touching boxes do not intersect."""
    A, B = a.rotation, b.rotation
    axes = [A[:, i] for i in range(3)] + [B[:, j] for j in range(3)]
    for i in range(3):
        for j in range(3):
            c = np.cross(A[:, i], B[:, j])
            n = np.linalg.norm(c)
            if n >= PARALLEL_EPSILON:
                axes.append(c / n)
    L = np.array(axes)
    ra = np.abs(L @ A) @ a.half_extents
    rb = np.abs(L @ B) @ b.half_extents
    gap = np.abs(L @ (b.center - a.center))
    return bool(np.all(gap < ra + rb - SAT_EPSILON))


def check_collision(moving: OrientedBox3, pose_center, obstacles: Obstacles,
                    exclude_ids: Iterable[str] = ()) -> bool:
    world = as_world(obstacles)
    box = moving.translated(pose_center)
    bounds = box.aabb()
    for i in world.candidates(bounds.min, bounds.max, exclude_ids):
        if sat_intersect(box, world.objects[i].box):
            return True
    return False


def segment_collides(moving: OrientedBox3, start, end, obstacles: Obstacles,
                     exclude_ids: Iterable[str] = (), step: float = 0.02) -> bool:
    """Discretized sweep: poses spaced at most ``step`` apart, endpoints included."""
    if step <= 0:
        raise InvalidGeometry("sweep step must be positive")
    world = as_world(obstacles)
    a = np.asarray(start, dtype=float)
    b = np.asarray(end, dtype=float)
    reach = np.abs(moving.rotation) @ moving.half_extents
    lo = np.minimum(a, b) - reach
    hi = np.maximum(a, b) + reach
    candidates = world.candidates(lo, hi, exclude_ids)
    if not candidates:
        return False
    n = max(1, int(np.ceil(np.linalg.norm(b - a) / step)))
    excluded = set(exclude_ids)
    nearby = CollisionWorld([world.objects[i] for i in candidates])
    for t in np.linspace(0.0, 1.0, n + 1):
        if check_collision(moving, a + t * (b - a), nearby, excluded):
            return True
    return False


def densify(path, spacing: float) -> np.ndarray:
    """Insert points so consecutive samples are at most ``spacing`` apart."""
    pts = np.asarray(path, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 2:
        return pts.copy()
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(np.ceil(np.linalg.norm(b - a) / spacing)))
        t = np.linspace(0.0, 1.0, n + 1)[1:, None]
        out.append(a + t * (b - a))
    return np.vstack(out)


def sweep_fraction(object_points, trace, occupancy: OccupancyGrid, keypoints_only: bool = False,
                   scene_points=None) -> float:
    """Worst per-pose fraction of translated object points inside occupied voxels.

    Offsets are taken relative to the first trace point. Voxels holding only the
    object's own start-pose points are ignored; a voxel that also holds one of
    ``scene_points`` (the depth cloud with the object masked out) still counts.
    """
    pts = np.asarray(object_points, dtype=float).reshape(-1, 3)
    path = np.asarray(trace, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0 or path.shape[0] == 0 or occupancy.count == 0:
        return 0.0
    poses = path if keypoints_only else densify(path, occupancy.voxel_size)
    grid = occupancy.occupied.copy()
    own = np.zeros_like(grid)
    idx, inside = occupancy.indices(pts)
    hit = idx[inside]
    own[hit[:, 0], hit[:, 1], hit[:, 2]] = True
    if scene_points is not None:
        idx, inside = occupancy.indices(np.asarray(scene_points, dtype=float).reshape(-1, 3))
        hit = idx[inside]
        own[hit[:, 0], hit[:, 1], hit[:, 2]] = False
    grid &= ~own
    dims = np.array(grid.shape)
    worst = 0.0
    for offset in poses - path[0]:
        cells = np.floor((pts + offset - occupancy.origin) / occupancy.voxel_size).astype(int)
        ok = np.all((cells >= 0) & (cells < dims), axis=1)
        if not np.any(ok):
            continue
        c = cells[ok]
        fraction = float(np.count_nonzero(grid[c[:, 0], c[:, 1], c[:, 2]])) / pts.shape[0]
        worst = max(worst, fraction)
    logger.debug(f"Sweep over {len(poses)} poses, worst fraction {worst:.3f}")
    return worst
