import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, ClassVar, Dict, FrozenSet, List, Optional

from ..domain.errors import ConfigError
from ..domain.value_objects.planning import PlannerParams

DEFAULTS_FILE = Path(__file__).with_name("defaults.json")


@dataclass(frozen=True)
class SceneConfig:
    box_samples: int = 5000
    box_seed: int = 0
    depth_consistency: float = 0.05
    support_gap: float = 0.05
    support_overlap: float = 0.30


@dataclass(frozen=True)
class EscapeConfig:
    max_distance: float = 0.6
    advance_step: float = 0.02
    fan_size: int = 5
    ray_cap: float = 3.0
    ray_step: float = 0.02
    depth_tolerance: float = 0.03
    inconclusive_score: float = 0.1


@dataclass(frozen=True)
class BypassConfig:
    delta_margin: float = 0.05
    blocking_margin: float = 0.05
    score_mode: str = "proxy"
    w_length: float = 1.0
    w_angle: float = 0.3
    w_backtrack: float = 2.0
    w_lateral: float = 0.2


@dataclass(frozen=True)
class RefineConfig:
    samples_per_segment: int = 10
    via_max_distance: float = 0.12
    rdp_epsilon: float = 0.01
    max_keypoints: int = 8
    descent_step: float = 0.005
    descent_cap: float = 0.5
    ground_tolerance: float = 0.02
    via_threshold: float = 0.15
    via_density: float = 0.01


@dataclass(frozen=True)
class QcConfig:
    l_base: float = 0.15
    occlusion_spacing: float = 0.01
    occlusion_tolerance: float = 0.03
    max_occlusion: float = 0.30
    max_sweep: float = 0.20
    voxel_size: float = 0.02


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.25
    include_trace_reward: bool = True
    grid: int = 1000
    pixel_fraction: float = 0.10
    depth_tolerance: float = 0.30
    measure_tolerance: float = 0.30
    scale_weight: float = 0.1


@dataclass(frozen=True)
class BenchConfig:
    distance_threshold: float = 0.20
    sweep_threshold: float = 0.20
    end_window: int = 3
    voxel_size: float = 0.02
    start_cloud_source: str = "mask_depth"
    coords: str = "normalized"
    sweep_keypoints_only: bool = False


@dataclass(frozen=True)
class InstructConfig:
    grid: int = 1000
    metric_unit_probability: float = 0.8


@dataclass(frozen=True)
class CalibConfig:
    depth_tolerance: float = 0.05
    strict_threshold: float = 1.0 / 3.0
    zero_tolerant_threshold: float = 0.83
    occlusion_radius_px: int = 30
    zero_fraction_threshold: float = 0.6
    base_frame_offset: int = 60
    move_threshold: float = 0.02
    rdp_epsilon: float = 0.01
    max_keypoints: int = 8


@dataclass(frozen=True)
class PipelineConfig:
    max_auto_tasks: int = 8
    auto_distance: float = 0.25
    region_half_size: float = 0.05
    placement_gap: float = 0.05
    workers: int = 1
    float_decimals: int = 6
    self_check: bool = True


@dataclass(frozen=True)
class Settings:
    MOVABILITY_BLOCKLIST: ClassVar[FrozenSet[str]] = frozenset({
        "floor", "wall", "ceiling", "countertop", "counter", "table", "desk",
        "cabinet", "shelf", "bookshelf", "door", "window", "bed", "sofa",
        "refrigerator", "sink", "stairs", "column", "curtain",
    })
    UNIT_FACTORS: ClassVar[Dict[str, float]] = {
        "m": 1.0, "meter": 1.0, "meters": 1.0, "metre": 1.0, "metres": 1.0,
        "cm": 0.01, "centimeter": 0.01, "centimeters": 0.01, "centimetre": 0.01, "centimetres": 0.01,
        "mm": 0.001, "millimeter": 0.001, "millimeters": 0.001, "millimetre": 0.001, "millimetres": 0.001,
        "in": 0.0254, "inch": 0.0254, "inches": 0.0254,
        "ft": 0.3048, "foot": 0.3048, "feet": 0.3048,
    }
    DIRECTION_ORDER: ClassVar[List[str]] = ["left", "right", "front", "behind", "above", "below"]

    scene: SceneConfig = field(default_factory=SceneConfig)
    planner: PlannerParams = field(default_factory=PlannerParams)
    escape: EscapeConfig = field(default_factory=EscapeConfig)
    bypass: BypassConfig = field(default_factory=BypassConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    qc: QcConfig = field(default_factory=QcConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    instruct: InstructConfig = field(default_factory=InstructConfig)
    calib: CalibConfig = field(default_factory=CalibConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    @classmethod
    def from_dict(cls, overrides: Optional[Dict[str, Any]] = None) -> "Settings":
        settings = cls()
        if not overrides:
            return settings
        if not isinstance(overrides, dict):
            raise ConfigError("configuration must be a JSON object")
        sections = {f.name for f in fields(cls)}
        updates = {}
        for section, values in overrides.items():
            if section not in sections:
                raise ConfigError(f"unknown configuration section {section!r}")
            if not isinstance(values, dict):
                raise ConfigError(f"section {section!r} must be an object")
            current = getattr(settings, section)
            known = {f.name: f for f in fields(current)}
            coerced = {}
            for key, value in values.items():
                if key not in known:
                    raise ConfigError(f"unknown key {section}.{key}")
                coerced[key] = cls._coerce(section, key, getattr(current, key), value)
            try:
                updates[section] = replace(current, **coerced)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"invalid values for {section}: {e}") from e
        return replace(settings, **updates)

    @classmethod
    def from_file(cls, path: str) -> "Settings":
        try:
            with open(path) as f:
                data = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read configuration {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"configuration {path} is not valid JSON: {e}") from e
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: Optional[str] = None) -> "Settings":
        return cls.from_file(path) if path else cls()

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: asdict(getattr(self, f.name)) for f in fields(self)}

    @staticmethod
    def _coerce(section: str, key: str, default: Any, value: Any) -> Any:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{section}.{key} must be a boolean")
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{section}.{key} must be an integer")
            return value
        if isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{section}.{key} must be a number")
            return float(value)
        if isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"{section}.{key} must be a string")
        return value
