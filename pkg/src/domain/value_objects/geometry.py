from dataclasses import dataclass

import numpy as np

from ..errors import InvalidGeometry


@dataclass(frozen=True, eq=False)
class Aabb3:
    """Axis-aligned box in world meters."""
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float).reshape(3)
        hi = np.asarray(self.max, dtype=float).reshape(3)
        if np.any(lo > hi):
            raise InvalidGeometry(f"AABB min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def size(self) -> np.ndarray:
        return self.max - self.min


@dataclass(frozen=True)
class Box2D:
    """Pixel rectangle, inclusive on both ends."""
    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def contains(self, u: float, v: float) -> bool:
        return self.u_min <= u <= self.u_max and self.v_min <= v <= self.v_max
