from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..entities.scene import Direction
from ..errors import ConfigError


@dataclass(frozen=True)
class PlannerParams:
    step_size: float = 0.05
    goal_bias: float = 0.25
    rewire_radius: float = 0.25
    max_iterations: int = 5000
    goal_tolerance: float = 0.05
    rng_seed: int = 0
    sweep_step: float = 0.02
    refine_iterations: int = 300
    sampling_margin: float = 0.5
    shortcut: bool = True

    def __post_init__(self):
        if self.step_size <= 0:
            raise ConfigError("step_size must be positive")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ConfigError("goal_bias must lie in [0, 1]")
        if self.rewire_radius < self.step_size:
            raise ConfigError("rewire_radius must be at least step_size")
        if self.max_iterations <= 0:
            raise ConfigError("max_iterations must be positive")
        if self.goal_tolerance <= 0:
            raise ConfigError("goal_tolerance must be positive")
        if self.sweep_step <= 0:
            raise ConfigError("sweep_step must be positive")


@dataclass(frozen=True, eq=False)
class PlanResult:
    path: np.ndarray
    cost: float
    iterations: int
    escape_prefix: Optional[np.ndarray] = None
    via_point: Optional[np.ndarray] = None

    @property
    def full_path(self) -> np.ndarray:
        """Escape prefix followed by the planned path, shared point kept once."""
        if self.escape_prefix is None or len(self.escape_prefix) < 2:
            return self.path
        return np.vstack([self.escape_prefix[:-1], self.path])


@dataclass(frozen=True, eq=False)
class ViaCandidate:
    direction: Direction
    via_point: np.ndarray
    cost_j: float
    feasible: bool


@dataclass(frozen=True, eq=False)
class DestinationRegion:
    """Horizontal rectangle on a supporting platform; ``center`` y is ignored."""
    center: np.ndarray
    half_x: float
    half_z: float

    def contains_xz(self, x: float, z: float) -> bool:
        return abs(x - self.center[0]) <= self.half_x + 1e-12 and abs(z - self.center[2]) <= self.half_z + 1e-12


@dataclass(frozen=True, eq=False)
class EscapeResult:
    point: np.ndarray
    segment: np.ndarray
    mode: str = "none"


