from typing import Optional


class TraceSpatialError(Exception):
    """Base class for every error raised by the engine."""
    reason = "error"


# Geometry and camera

class InvalidGeometry(TraceSpatialError):
    reason = "invalid_geometry"


class BehindCamera(TraceSpatialError):
    reason = "behind_camera"


# Planning

class PlanningError(TraceSpatialError):
    reason = "planning_failed"


class StartInCollision(PlanningError):
    reason = "start_in_collision"


class GoalInCollision(PlanningError):
    reason = "goal_in_collision"


class MaxIterationsExceeded(PlanningError):
    reason = "max_iterations"

    def __init__(self, iterations: int, nodes: int, best_distance: float):
        super().__init__(
            f"goal not reached after {iterations} iterations "
            f"({nodes} nodes, closest approach {best_distance:.3f} m)"
        )
        self.iterations = iterations
        self.nodes = nodes
        self.best_distance = best_distance


class EscapeFailed(PlanningError):
    reason = "escape_failed"


class BypassStageError(PlanningError):
    def __init__(self, stage: int, cause: PlanningError):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause
        self.reason = f"stage{stage}_{cause.reason}"


# Refinement and generation

class FinalPointOutOfFrame(TraceSpatialError):
    reason = "final_point_out_of_frame"


class EmptyMask(TraceSpatialError):
    reason = "empty_mask"


class TemplateError(TraceSpatialError):
    reason = "template"


class TaskInfeasible(TraceSpatialError):
    def __init__(self, message: str, reason: Optional[str] = None):
        super().__init__(message)
        self.reason = reason or "infeasible"


# Rewards

class InvalidGroup(TraceSpatialError):
    reason = "invalid_group"


class InvalidScale(TraceSpatialError):
    reason = "invalid_scale"


# Calibration

class Indeterminate(TraceSpatialError):
    reason = "indeterminate"


class MultiClosure(TraceSpatialError):
    reason = "multi_closure"


class AmbiguousArms(TraceSpatialError):
    reason = "ambiguous_arms"


class NoClosure(TraceSpatialError):
    reason = "no_closure"


class TraceOutOfFrame(TraceSpatialError):
    reason = "trace_out_of_frame"


class TooManyKeypoints(TraceSpatialError):
    reason = "too_many_keypoints"


class Occluded(TraceSpatialError):
    reason = "occluded"


# Input

class ConfigError(TraceSpatialError):
    reason = "config"


class SceneFormatError(TraceSpatialError):
    reason = "scene_format"
