from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple, Union

import numpy as np


class PerceptionType(str, Enum):
    REFERRING = "Referring"
    MEASURING = "Measuring"
    SCALE = "Scale"


StepValue = Union[Tuple[float, float, float], float]


@dataclass(frozen=True)
class ProcessStep:
    perception_type: PerceptionType
    target_object: str
    # Referring: (u, v, d) on the [0, 1000] grid with d in meters.
    # Measuring: meters after unit conversion. Scale: bare scalar.
    value: StepValue


@dataclass(frozen=True, eq=False)
class Rollout:
    text: str
    parsed_answer: Optional[np.ndarray] = None
    parsed_steps: Tuple[ProcessStep, ...] = ()


@dataclass(frozen=True)
class KeyStepAnnotations:
    entries: Dict[Tuple[PerceptionType, str], StepValue]
    image_width: int
    image_height: int
    scene_max_depth: float

    @property
    def longer_side(self) -> int:
        return max(self.image_width, self.image_height)


@dataclass(frozen=True)
class RewardBundle:
    r_of: float = 0.0
    r_p: float = 0.0
    r_t: float = 0.0
    r_pf: float = 0.0
    r_acc: float = 0.0
    total: float = 0.0
    alpha: float = 0.25
    advantage: Optional[float] = None
    # weighted log-space scale error, only for rollouts that predict a scale
    scale_loss: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "r_of": self.r_of, "r_p": self.r_p, "r_t": self.r_t, "r_pf": self.r_pf, "r_acc": self.r_acc,
            "total": self.total, "alpha": self.alpha, "advantage": self.advantage, "scale_loss": self.scale_loss,
        }
