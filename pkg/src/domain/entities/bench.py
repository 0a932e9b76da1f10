from dataclasses import dataclass
from enum import Enum
from typing import ClassVar, Optional, Tuple

from ..value_objects.mask import RleMask
from .scene import OrientedBox3, Scene
from .trace import Trace


class TaskCategory(str, Enum):
    PICK_PLACE = "PickPlace"
    PUSH_PULL = "PushPull"


@dataclass(frozen=True, eq=False)
class BenchSample:
    sample_id: str
    scene: Scene
    start_mask: RleMask
    end_box: OrientedBox3
    reference_trace: Trace
    prompt: str
    step_count: int
    task_category: TaskCategory = TaskCategory.PICK_PLACE
    source_id: Optional[str] = None


@dataclass
class SampleResult:
    sample_id: str
    start2d: bool = False
    end2d: bool = False
    start3d: bool = False
    end3d: bool = False
    overall: bool = False
    sweep_max_fraction: float = 1.0
    error: Optional[str] = None

    METRICS: ClassVar[Tuple[str, ...]] = ("start2d", "end2d", "start3d", "end3d", "overall")

    @property
    def all_passed(self) -> bool:
        return all(getattr(self, name) for name in self.METRICS)
