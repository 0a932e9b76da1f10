import math
from enum import Enum
from string import Formatter
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..config.settings import InstructConfig
from ..domain.entities.scene import CameraModel, Direction, Method, ObjectInstance, Scene, TaskSpec
from ..domain.entities.trace import Trace
from ..domain.errors import InvalidGeometry, TemplateError
from .scene_geometry import direction_vectors, semantic_dimensions

INSTRUCTION_POOLS: Dict[Method, List[str]] = {
    Method.PLACE_RELATIVE: [
        "Move the {source_obj} to a position {distance:.3f}m to the {endpoint_direction} of the {reference_obj}.",
        "Pick up the {source_obj} and move it to a position {distance:.3f}m to the {endpoint_direction} of the {reference_obj}.",
        "Place the {source_obj} to the {endpoint_direction} of the {reference_obj}.",
        "Pick up the {source_obj} on the {reference_obj}'s {endpoint_direction} side.",
        "Put the {source_obj} on the {endpoint_direction} side of the {reference_obj}.",
        "Move the {source_obj} so that it ends up to the {endpoint_direction} of the {reference_obj}.",
        "Set the {source_obj} down to the {endpoint_direction} of the {reference_obj}.",
        "Take the {source_obj} and place it next to the {reference_obj}, on its {endpoint_direction}.",
        "Relocate the {source_obj} to the {endpoint_direction} of the {reference_obj}.",
        "Bring the {source_obj} over to the {endpoint_direction} side of the {reference_obj}.",
    ],
    Method.DIRECTIONAL_MOVE: [
        "Move the {source_obj} {distance:.3f}m in the {endpoint_direction} direction.",
        "Pick up the {source_obj} and move it {distance:.3f}m toward the {endpoint_direction}.",
        "Push the {source_obj} toward the {endpoint_direction}.",
        "Slide the {source_obj} toward {endpoint_direction}.",
        "Move the {source_obj} to the {endpoint_direction}.",
        "Shift the {source_obj} a little to the {endpoint_direction}.",
        "Nudge the {source_obj} toward the {endpoint_direction}.",
        "Pick up the {source_obj} and set it down further to the {endpoint_direction}.",
        "Drag the {source_obj} in the {endpoint_direction} direction.",
        "Carry the {source_obj} toward the {endpoint_direction}.",
    ],
    Method.STACKING: [
        "Place the {source_obj} on top of the {reference_obj}.",
        "Stack the {source_obj} on the {reference_obj}.",
        "Put the {source_obj} above the {reference_obj}.",
        "Move the {source_obj} onto the {reference_obj}.",
        "Set the {source_obj} on the {reference_obj}.",
    ],
    Method.BYPASS_PLACE: [
        "Move the {source_obj} around the {via_obj} on its {via_direction} side, then place it to the {endpoint_direction} of the {reference_obj}.",
        "Pick up the {source_obj} around the {via_obj} from the {via_direction} side, then position it to the {endpoint_direction} of the {reference_obj}.",
    ],
    Method.BYPASS_STACK: [
        "Move the {source_obj} around the {via_obj} on its {via_direction} side, then place it on top of the {reference_obj}.",
        "Pick up the {source_obj} around the {via_obj} from the {via_direction} side, then place it on the {reference_obj}.",
    ],
}

VIA_ENRICHMENT = [
    "Move the {source_obj} around the {via_obj} on its {via_direction} side, then {final_action}.",
    "Pick up the {source_obj}, passing to the {via_direction} of the {via_obj}, then {final_action}.",
]

FINAL_ACTIONS = {
    Method.PLACE_RELATIVE: "place it to the {endpoint_direction} of the {reference_obj}",
    Method.DIRECTIONAL_MOVE: "move it toward the {endpoint_direction}",
    Method.STACKING: "place it on top of the {reference_obj}",
}


class QaKind(str, Enum):
    TWO_D = "2d"
    THREE_D = "3d"
    LIFT = "lift"


QA_PROMPTS: Dict[QaKind, List[str]] = {
    QaKind.TWO_D: [
        "Please predict 2D object-centric waypoints to complete the task successfully. The task is \"<instruction>\". Your answer should be formatted as a tuple, i.e. [(x, y)], where the tuple contains the x and y coordinates of a point satisfying the conditions above.",
        "Point the 2D object-centric waypoints for the task \"<instruction>\". Your answer should be formatted as a tuple, i.e. [(x, y)].",
        "You are currently a robot performing robotic manipulation tasks. The task instruction is: \"<instruction>\". Use 2D points to mark the manipulated object-centric waypoints...",
        "Please predict 2D object-centric visual trace to complete the task successfully. The task is \"<instruction>\". Your answer should be formatted as a tuple, i.e. [(x, y)].",
    ],
    QaKind.THREE_D: [
        "Please predict 3D object-centric waypoints to complete the task successfully. The task is \"<instruction>\". Your answer should be formatted as a list of tuples, i.e., [(x1, y1, d1), (x2, y2, d2), ...], where each tuple contains the x and y coordinates and the depth of the point.",
        "Point the 3D object-centric visual trace for the task \"<instruction>\". Your answer should be formatted as a list of tuples, i.e., [(x1, y1, d1), ...].",
        "You are currently a robot performing robotic manipulation tasks. The task instruction is: \"<instruction>\". Use 3D points to mark the manipulated object-centric waypoints to guide the robot...",
    ],
    QaKind.LIFT: [
        "Please lift the 2D object-centric waypoints to 3D object-centric waypoints to complete the task successfully. The task is \"<instruction>\". The 2D waypoints is <trace>. Your answer should be formatted as a list of tuples, i.e., [(x1, y1, d1), ...].",
        "Lift the 2D object-centric visual trace to 3D object-centric visual trace for the task \"<instruction>\". The 2D visual trace is <trace>. Your answer should be formatted as a list of tuples, i.e., [(x1, y1, d1), ...].",
        "Please lift the 2D object-centric visual trace to 3D object-centric visual trace to complete the task successfully. The task is \"<instruction>\". The 2D visual trace is <trace>. Your answer should be formatted as a list of tuples...",
    ],
}

ORDER_TEMPLATES: Dict[str, List[str]] = {
    "left_to_right": [
        "{dense_caption}, which is the {ordinal} {class_name} from left to right",
        "{dense_caption}, marked as the {ordinal} {class_name} in a left-to-right arrangement",
    ],
    "right_to_left": [
        "{dense_caption}, the {ordinal} {class_name} viewed from the right",
        "{dense_caption}, the {ordinal} {class_name} from the right",
    ],
    "front_to_back": [
        "{dense_caption}, which appears as the {ordinal} {class_name} when viewed from the front",
        "{dense_caption}, positioned as the {ordinal} {class_name} in front-to-back order",
    ],
    "back_to_front": [
        "{dense_caption}, which is counted as the {ordinal} {class_name}, starting from the back",
        "{dense_caption}, the {ordinal} {class_name} in the back-to-front sequence",
    ],
    "top_to_bottom": [
        "{dense_caption}, the {ordinal} {class_name} viewed from the top",
        "{dense_caption}, placed as the {ordinal} {class_name} when sorted from top to bottom",
    ],
    "bottom_to_top": [
        "{dense_caption}, which ranks as the {ordinal} {class_name} in bottom-to-top order",
        "{dense_caption}, arranged as the {ordinal} {class_name} when ordered from the bottom",
    ],
}

ORDINALS = ["first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth"]

# (metric unit, imperial unit) per magnitude band
_UNITS = {
    "small": (("centimeter", "centimeters", 100.0), ("inch", "inches", 1.0 / 0.0254)),
    "large": (("meter", "meters", 1.0), ("foot", "feet", 1.0 / 0.3048)),
}


def _fields(template: str) -> List[str]:
    return [name for _, name, _, _ in Formatter().parse(template) if name]


def _fill(template: str, values: Mapping[str, Any]) -> str:
    for name in _fields(template):
        if values.get(name) is None:
            raise TemplateError(f"template needs {name!r} but no value was given")
    return template.format(**values)


def is_metric(template: str) -> bool:
    return "distance" in _fields(template)


def _values(task: TaskSpec, phrases: Mapping[str, str], trace_length: Optional[float],
            via_direction: Optional[Direction]) -> Dict[str, Any]:
    return {
        "source_obj": phrases.get(task.source_id),
        "reference_obj": phrases.get(task.reference_id) if task.reference_id else None,
        "via_obj": phrases.get(task.via_id) if task.via_id else None,
        "endpoint_direction": task.direction.value if task.direction else None,
        "via_direction": via_direction.value if via_direction else None,
        "distance": trace_length,
    }


def render_instruction(task: TaskSpec, trace_length: float, rng: np.random.Generator,
                       phrases: Mapping[str, str], via_direction: Optional[Direction] = None) -> str:
    """Uniform template draw for the task's method; metric slots get the displacement."""
    if task.method.uses_via and not task.via_id:
        raise TemplateError(f"{task.method.value} needs a via object")
    pool = INSTRUCTION_POOLS[task.method]
    template = pool[int(rng.integers(len(pool)))]
    return _fill(template, _values(task, phrases, trace_length, via_direction))


def render_enriched_instruction(task: TaskSpec, rng: np.random.Generator, phrases: Mapping[str, str],
                                via_id: str, via_direction: Direction) -> str:
    """Bypass-style wording for a plain task whose trace happened to pass a via object."""
    if task.method not in FINAL_ACTIONS:
        raise TemplateError(f"{task.method.value} has no enrichment wording")
    values = _values(task, phrases, None, via_direction)
    values["via_obj"] = phrases.get(via_id)
    values["final_action"] = _fill(FINAL_ACTIONS[task.method], values)
    template = VIA_ENRICHMENT[int(rng.integers(len(VIA_ENRICHMENT)))]
    return _fill(template, values)


def _number(value: float) -> str:
    return f"{value:.1f}".rstrip("0").rstrip(".")


def humanize_measure(value: float, object_phrase: str, measure_kind: str, rng: np.random.Generator,
                     config: Optional[InstructConfig] = None) -> str:
    """e.g. "The height of the cup is about 20 centimeters." with a randomly drawn unit system."""
    config = config or InstructConfig()
    if not value > 0:
        raise TemplateError(f"measurement must be positive, got {value}")
    metric, imperial = _UNITS["small" if value < 1.0 else "large"]
    singular, plural, factor = metric if rng.random() < config.metric_unit_probability else imperial
    # never "about 0": tiny values read as one unit
    amount = _number(max(value * factor, 1.0))
    unit = singular if amount == "1" else plural
    return f"The {measure_kind} of {object_phrase} is about {amount} {unit}."


def _grid(value: float, size: int, grid: int) -> int:
    scaled = grid * value / size
    # Half away from zero; Python's round() is banker's rounding.
    return int(min(grid, max(0, math.floor(scaled + 0.5))))


def normalized_points(trace: Trace, camera: CameraModel, grid: int = 1000) -> List[Tuple[int, int, float]]:
    return [(_grid(u, camera.width, grid), _grid(v, camera.height, grid), float(d)) for u, v, d in trace.image_points]


def answer_2d(points: Sequence[Tuple[int, int, float]]) -> str:
    return "[" + ", ".join(f"({u}, {v})" for u, v, _ in points) + "]"


def answer_3d(points: Sequence[Tuple[int, int, float]]) -> str:
    return "[" + ", ".join(f"({u}, {v}, {d:.3f})" for u, v, d in points) + "]"


def format_trace_qa(trace: Trace, kind: QaKind, instruction: str, camera: CameraModel,
                    rng: np.random.Generator, grid: int = 1000) -> Tuple[str, str]:
    kind = QaKind(kind)
    points = normalized_points(trace, camera, grid)
    pool = QA_PROMPTS[kind]
    prompt = pool[int(rng.integers(len(pool)))].replace("<instruction>", instruction)
    if kind == QaKind.TWO_D:
        return prompt, answer_2d(points)
    if kind == QaKind.LIFT:
        prompt = prompt.replace("<trace>", answer_2d(points))
    return prompt, answer_3d(points)


def _ordinal(index: int) -> str:
    return ORDINALS[index] if index < len(ORDINALS) else f"{index + 1}th"


def order_caption(scene: Scene, object_id: str, axis: Optional[str] = None,
                  rng: Optional[np.random.Generator] = None) -> str:
    """Disambiguating caption ranking an object among same-category instances.

    Without an explicit ``axis`` the ordering runs along whichever of the
    left-right, front-back and vertical axes spreads the instances most.
    """
    rng = rng or np.random.default_rng(0)
    target = scene.object(object_id)
    caption = target.dense_caption or target.category
    peers = [o for o in scene.objects if o.category.lower() == target.category.lower()]
    if len(peers) < 2:
        return caption

    vectors = direction_vectors(scene.camera)
    axes = {
        "left_to_right": vectors[Direction.RIGHT],
        "front_to_back": vectors[Direction.BEHIND],
        "bottom_to_top": vectors[Direction.ABOVE],
    }
    reverse = {"left_to_right": "right_to_left", "front_to_back": "back_to_front", "bottom_to_top": "top_to_bottom"}
    centers = np.array([o.box.center for o in peers])
    if axis is None:
        base = max(axes, key=lambda name: float(np.var(centers @ axes[name])))
        axis = base if rng.random() < 0.5 else reverse[base]
    if axis not in ORDER_TEMPLATES:
        raise TemplateError(f"unknown ordering {axis!r}")
    flipped = {v: k for k, v in reverse.items()}
    base = axis if axis in axes else flipped[axis]
    keys = centers @ axes[base]
    if axis != base:
        keys = -keys
    order = sorted(range(len(peers)), key=lambda i: (keys[i], peers[i].id))
    rank = [peers[i].id for i in order].index(object_id)
    templates = ORDER_TEMPLATES[axis]
    template = templates[int(rng.integers(len(templates)))]
    return template.format(dense_caption=caption, ordinal=_ordinal(rank), class_name=target.category)


def key_steps_for_trace(scene: Scene, source: ObjectInstance, trace: Trace, reference: Optional[ObjectInstance] = None,
                        grid: int = 1000) -> Dict[str, Any]:
    """Referring, measuring and scale annotations in the shape the reward scorer reads."""
    camera = scene.camera
    start = normalized_points(trace, camera, grid)[0]
    steps = [{"type": "Referring", "object": source.phrase, "value": [start[0], start[1], round(start[2], 3)]}]
    if reference is not None:
        u, v, d = camera.project_many(reference.box.center)[0]
        if d > 1e-6 and camera.in_frame(u, v):
            steps.append({"type": "Referring", "object": reference.phrase,
                          "value": [_grid(u, camera.width, grid), _grid(v, camera.height, grid), round(float(d), 3)]})
    try:
        height = semantic_dimensions(source.box, source.front_axis)[2]
    except InvalidGeometry:
        height = float(source.box.aabb().size[1])
    steps.append({"type": "Measuring", "object": f"{source.phrase} height", "value": round(height, 3)})
    steps.append({"type": "Measuring", "object": f"{source.phrase} movement", "value": round(trace.displacement, 3)})
    steps.append({"type": "Scale", "object": "scene depth", "value": round(scene.depth.max_valid(), 3)})
    return {
        "image_width": camera.width,
        "image_height": camera.height,
        "scene_max_depth": round(scene.depth.max_valid(), 3),
        "key_steps": steps,
    }
