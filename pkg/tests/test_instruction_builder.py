import numpy as np
import pytest

from src.application.instruction_builder import (
    INSTRUCTION_POOLS, QaKind, format_trace_qa, humanize_measure, is_metric, key_steps_for_trace,
    normalized_points, order_caption, render_enriched_instruction, render_instruction,
)
from src.domain.entities.scene import CameraModel, DepthMap, Direction, Method, Scene, TaskSpec
from src.domain.entities.trace import Trace
from src.domain.errors import TemplateError

PHRASES = {"mug": "red mug", "book": "blue book", "vase": "white vase"}


def test_render_directional_move(fixed_rng):
    task = TaskSpec(Method.DIRECTIONAL_MOVE, "mug", direction=Direction.LEFT)
    text = render_instruction(task, 0.25, fixed_rng, PHRASES)
    assert text == "Move the red mug 0.250m in the left direction."


def test_render_stacking_and_bypass(fixed_rng):
    stack = TaskSpec(Method.STACKING, "mug", reference_id="book")
    assert render_instruction(stack, 0.3, fixed_rng, PHRASES) == "Place the red mug on top of the blue book."

    bypass = TaskSpec(Method.BYPASS_PLACE, "mug", reference_id="book", via_id="vase", direction=Direction.RIGHT)
    text = render_instruction(bypass, 0.3, fixed_rng, PHRASES, via_direction=Direction.FRONT)
    assert text == ("Move the red mug around the white vase on its front side, "
                    "then place it to the right of the blue book.")


def test_render_requires_via_values(fixed_rng):
    missing_via = TaskSpec(Method.BYPASS_STACK, "mug", reference_id="book")
    with pytest.raises(TemplateError):
        render_instruction(missing_via, 0.3, fixed_rng, PHRASES)
    no_direction = TaskSpec(Method.BYPASS_STACK, "mug", reference_id="book", via_id="vase")
    with pytest.raises(TemplateError):
        render_instruction(no_direction, 0.3, fixed_rng, PHRASES)


def test_metric_templates_are_a_fifth_of_draws():
    task = TaskSpec(Method.DIRECTIONAL_MOVE, "mug", direction=Direction.FRONT)
    rng = np.random.default_rng(0)
    texts = [render_instruction(task, 0.25, rng, PHRASES) for _ in range(10000)]
    fraction = sum("0.250m" in t for t in texts) / len(texts)
    assert fraction == pytest.approx(0.2, abs=0.03)
    assert sum(is_metric(t) for t in INSTRUCTION_POOLS[Method.DIRECTIONAL_MOVE]) == 2


def test_enriched_instruction(fixed_rng):
    task = TaskSpec(Method.PLACE_RELATIVE, "mug", reference_id="book", direction=Direction.RIGHT)
    text = render_enriched_instruction(task, fixed_rng, PHRASES, "vase", Direction.LEFT)
    assert text == ("Move the red mug around the white vase on its left side, "
                    "then place it to the right of the blue book.")
    bypass = TaskSpec(Method.BYPASS_STACK, "mug", reference_id="book", via_id="vase")
    with pytest.raises(TemplateError):
        render_enriched_instruction(bypass, fixed_rng, PHRASES, "vase", Direction.LEFT)


def test_humanize_measure(fixed_rng):
    assert humanize_measure(0.2, "the cup", "height", fixed_rng) == "The height of the cup is about 20 centimeters."
    assert humanize_measure(43.0, "the room", "length", fixed_rng) == "The length of the room is about 43 meters."
    assert humanize_measure(1.0, "the rug", "width", fixed_rng) == "The width of the rug is about 1 meter."
    assert humanize_measure(0.004, "the pin", "width", fixed_rng) == "The width of the pin is about 1 centimeter."
    assert humanize_measure(1e-5, "the hair", "width", fixed_rng) == "The width of the hair is about 1 centimeter."
    with pytest.raises(TemplateError):
        humanize_measure(0.0, "the cup", "height", fixed_rng)


def test_humanize_measure_imperial_branch():
    class AlwaysImperial:
        def random(self):
            return 0.99

    assert humanize_measure(0.0254, "the pen", "width", AlwaysImperial()) == "The width of the pen is about 1 inch."
    assert humanize_measure(3.048, "the door", "height", AlwaysImperial()) == "The height of the door is about 10 feet."


@pytest.fixture
def vga():
    return CameraModel(500.0, 500.0, 320.0, 240.0, 640, 480)


def test_format_trace_qa_answers(vga, fixed_rng):
    trace = Trace.from_image(vga, [[320.0, 240.0, 1.5], [640.0, 0.0, 2.25]])
    assert normalized_points(trace, vga) == [(500, 500, 1.5), (1000, 0, 2.25)]

    prompt, answer = format_trace_qa(trace, QaKind.TWO_D, "Move the mug.", vga, fixed_rng)
    assert answer == "[(500, 500), (1000, 0)]"
    assert '"Move the mug."' in prompt

    _, answer = format_trace_qa(trace, "3d", "Move the mug.", vga, fixed_rng)
    assert answer == "[(500, 500, 1.500), (1000, 0, 2.250)]"

    prompt, answer = format_trace_qa(trace, QaKind.LIFT, "Move the mug.", vga, fixed_rng)
    assert "[(500, 500), (1000, 0)]" in prompt
    assert "<trace>" not in prompt
    assert answer.startswith("[(500, 500, 1.500)")


def test_grid_rounds_half_up():
    camera = CameraModel(500.0, 500.0, 500.0, 250.0, 1000, 500)
    trace = Trace.from_image(camera, [[2.5, 1.25, 1.0], [0.5, 0.25, 1.0]])
    assert [p[:2] for p in normalized_points(trace, camera)] == [(3, 3), (1, 1)]


def test_order_caption_ranks_same_category(pinhole, make_object):
    cups = [
        make_object("cup-a", [-0.4, 0.0, 2.0], [0.05, 0.05, 0.05], category="cup", dense_caption="a cup"),
        make_object("cup-b", [0.0, 0.0, 2.0], [0.05, 0.05, 0.05], category="cup", dense_caption="a cup"),
        make_object("cup-c", [0.4, 0.0, 2.0], [0.05, 0.05, 0.05], category="cup", dense_caption="a cup"),
        make_object("plate", [0.0, 0.2, 2.0], [0.1, 0.01, 0.1], category="plate", dense_caption="a plate"),
    ]
    scene = Scene(cups, pinhole, DepthMap(np.ones((100, 100))))
    rng = np.random.default_rng(0)
    assert "second cup" in order_caption(scene, "cup-b", "left_to_right", rng)
    assert "first cup" in order_caption(scene, "cup-c", "right_to_left", rng)
    # spread is widest left to right, so either end of that ordering is used
    auto = order_caption(scene, "cup-c", rng=np.random.default_rng(1))
    assert "third cup" in auto or "first cup" in auto
    assert order_caption(scene, "plate") == "a plate"
    with pytest.raises(TemplateError):
        order_caption(scene, "cup-a", "inside_out", rng)


def test_key_steps_for_trace(tabletop):
    mug = tabletop.object("mug")
    table = tabletop.object("table")
    trace = Trace.from_world(tabletop.camera, [mug.box.center, mug.box.center + np.array([0.0, 0.0, 0.2])])
    steps = key_steps_for_trace(tabletop, mug, trace, reference=table)
    assert steps["image_width"] == 320 and steps["image_height"] == 240
    kinds = [(s["type"], s["object"]) for s in steps["key_steps"]]
    assert kinds == [
        ("Referring", "red mug"),
        ("Referring", "wooden table"),
        ("Measuring", "red mug height"),
        ("Measuring", "red mug movement"),
        ("Scale", "scene depth"),
    ]
    values = {s["object"]: s["value"] for s in steps["key_steps"]}
    assert values["red mug height"] == pytest.approx(0.12)
    assert values["red mug movement"] == pytest.approx(0.2)
    assert values["scene depth"] == steps["scene_max_depth"] == round(tabletop.depth.max_valid(), 3)
