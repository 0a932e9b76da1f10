from dataclasses import dataclass
from typing import Tuple

import numpy as np


@dataclass(frozen=True)
class RleMask:
    """Binary mask run-length encoded over row-major pixels.

    Counts alternate between runs of zeros and ones and always start with a
    (possibly empty) run of zeros.
    """
    height: int
    width: int
    counts: Tuple[int, ...]

    @classmethod
    def from_array(cls, mask: np.ndarray) -> "RleMask":
        arr = np.asarray(mask).astype(bool)
        height, width = arr.shape
        flat = arr.reshape(-1).astype(np.int8)
        if flat.size == 0:
            return cls(height, width, ())
        change = np.flatnonzero(np.diff(flat)) + 1
        bounds = np.concatenate(([0], change, [flat.size]))
        runs = np.diff(bounds).tolist()
        if flat[0] == 1:
            runs.insert(0, 0)
        return cls(height, width, tuple(int(r) for r in runs))

    def to_array(self) -> np.ndarray:
        values = np.zeros(len(self.counts), dtype=bool)
        values[1::2] = True
        flat = np.repeat(values, self.counts)
        total = self.height * self.width
        if flat.size < total:
            flat = np.concatenate([flat, np.zeros(total - flat.size, dtype=bool)])
        return flat[:total].reshape(self.height, self.width)

    @property
    def area(self) -> int:
        return int(sum(self.counts[1::2]))
