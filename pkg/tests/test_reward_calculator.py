import numpy as np
import pytest

from src.application.reward_calculator import (
    RewardCalculator, annotations_from_dict, canonical_phrase, dtw_distance, group_advantages,
    outcome_format_reward, parse_answer_trace, parse_process_steps, point_reward, process_accuracy_reward,
    process_format_reward, scale_regression_loss, total_reward, trace_reward,
)
from src.config.settings import RewardConfig
from src.domain.errors import InvalidGroup, InvalidScale
from src.domain.value_objects.rewards import KeyStepAnnotations, PerceptionType, ProcessStep

ROLLOUT = (
    "<think>\n"
    "[Referring] [red mug]: [(500, 500, 2.0)]\n"
    "[Measuring] [red mug]: 12 cm\n"
    "</think><answer>[(500, 500, 2.0), (600, 500, 2.0)]</answer>"
)
GT_TRACE = [[500, 500, 2.0], [600, 500, 2.0]]
ANNOTATIONS = {
    "image_width": 640,
    "image_height": 480,
    "scene_max_depth": 4.0,
    "key_steps": [
        {"type": "Referring", "object": "red mug", "value": [500, 500, 2.0]},
        {"type": "Measuring", "object": "the red mug", "value": 0.12},
    ],
}


@pytest.mark.parametrize("text,expected", [
    ("<think>ok</think><answer>[(1, 2, 3.0)]</answer>", 1.0),
    ("  <think>a\nb</think>\n<answer>x</answer>\n", 1.0),
    ("<think>a</think><think>b</think><answer>x</answer>", 0.0),
    ("<answer>x</answer><think>a</think>", 0.0),
    ("<think>a</think><answer>x</answer> trailing", 0.0),
    ("no tags at all", 0.0),
    (None, 0.0),
])
def test_outcome_format_reward(text, expected):
    assert outcome_format_reward(text) == expected


def test_parse_answer_trace():
    points = parse_answer_trace("<answer>[(10, 20, 1.5), (30, 40, 2)]</answer>")
    assert points.tolist() == [[10, 20, 1.5], [30, 40, 2.0]]


@pytest.mark.parametrize("text", [
    "<answer>[(10.5, 20, 1.5)]</answer>",
    "<answer>[(1001, 20, 1.5)]</answer>",
    "<answer>[(10, 20, 1.5) junk]</answer>",
    "<answer>[]</answer>",
    "<answer>(10, 20, 1.5)</answer>",
    "[(10, 20, 1.5)]",
])
def test_parse_answer_trace_rejects_malformed(text):
    assert parse_answer_trace(text) is None


def test_point_reward_endpoints():
    gt = np.array([[0, 0, 0], [1, 1, 1]], dtype=float)
    pred = np.array([[0, 0, 0], [0.5, 1, 1]], dtype=float)
    assert point_reward(pred, gt) == pytest.approx(0.875)
    assert point_reward(None, gt) == 0.0
    far = np.array([[5, 5, 5], [5, 5, 5]], dtype=float)
    assert point_reward(far, gt) == 0.0


def test_trace_reward_normalized_dtw():
    gt = np.array([[0, 0, 0], [0.5, 0, 0], [1, 0, 0]])
    pred = gt + np.array([0, 0.2, 0])
    total, steps = dtw_distance(pred, gt)
    assert total == pytest.approx(0.6)
    assert steps == 3
    assert trace_reward(pred, gt) == pytest.approx(0.8)
    assert trace_reward(gt, gt) == pytest.approx(1.0)
    assert trace_reward(np.zeros((0, 3)), gt) == 0.0


def test_dtw_handles_unequal_lengths():
    gt = np.array([[0, 0, 0], [1, 0, 0]], dtype=float)
    pred = np.array([[0, 0, 0], [0.5, 0, 0], [1, 0, 0]], dtype=float)
    total, steps = dtw_distance(pred, gt)
    assert total == pytest.approx(0.5)
    assert steps == 3


def test_parse_process_steps_units_and_types():
    text = (
        "<think>\n[Referring] [the red mug]: [(10, 20, 1.25)]\n"
        "[Measuring] [table height]: 30 inch\n"
        "[Scale] [scene depth]: 3.5\n"
        "[Unknown] [x]: 1\n"
        "free text line\n</think><answer>[]</answer>"
    )
    steps = parse_process_steps(text)
    assert steps[0] == ProcessStep(PerceptionType.REFERRING, "the red mug", (10.0, 20.0, 1.25))
    assert steps[1].value == pytest.approx(0.762)
    assert steps[2] == ProcessStep(PerceptionType.SCALE, "scene depth", 3.5)
    assert len(steps) == 3
    # the unknown step line spoils the process format
    assert process_format_reward(text) == 0.0


def test_process_format_reward():
    assert process_format_reward(ROLLOUT) == 1.0
    assert process_format_reward("<think>just thinking</think><answer>[]</answer>") == 0.0
    assert process_format_reward("<think>[Measuring] [mug]: twelve</think>") == 0.0


def test_canonical_phrase():
    assert canonical_phrase("  The Red  Mug ") == "red mug"
    assert canonical_phrase("a cup on an table") == "cup on table"


def test_process_accuracy_within_tolerances():
    annotations = KeyStepAnnotations({(PerceptionType.REFERRING, "mug"): (500, 500, 2.0)}, 640, 480, 4.0)
    close = [ProcessStep(PerceptionType.REFERRING, "the mug", (550.0, 500.0, 2.5))]
    assert process_accuracy_reward(close, annotations) == pytest.approx(1.0)
    wrong_depth = [ProcessStep(PerceptionType.REFERRING, "mug", (550.0, 500.0, 3.0))]
    assert process_accuracy_reward(wrong_depth, annotations) == pytest.approx(0.5)
    far = [ProcessStep(PerceptionType.REFERRING, "mug", (700.0, 500.0, 3.0))]
    assert process_accuracy_reward(far, annotations) == 0.0
    other = [ProcessStep(PerceptionType.REFERRING, "bowl", (500.0, 500.0, 2.0))]
    assert process_accuracy_reward(other, annotations) == 0.0
    assert process_accuracy_reward(close, None) == 0.0


def test_process_accuracy_averages_over_annotations():
    annotations = annotations_from_dict(ANNOTATIONS)
    steps = [ProcessStep(PerceptionType.MEASURING, "red mug", 0.15)]
    assert process_accuracy_reward(steps, annotations) == pytest.approx(0.5)
    steps = [ProcessStep(PerceptionType.MEASURING, "red mug", 0.2)]
    assert process_accuracy_reward(steps, annotations) == 0.0


def test_total_reward_weights():
    assert total_reward(1, 1, 1, 1, 1) == pytest.approx(3.5)
    assert total_reward(1, 1, 1, 1, 1, include_trace=False) == pytest.approx(2.5)
    assert total_reward(1, 0.5, 0.5, 0, 1, alpha=0.5) == pytest.approx(2.5)


def test_group_advantages():
    assert group_advantages([1.0, 2.0, 3.0]) == pytest.approx([-1.224744871, 0.0, 1.224744871])
    assert group_advantages([2.0, 2.0]) == [0.0, 0.0]
    with pytest.raises(InvalidGroup):
        group_advantages([1.0])


def test_group_advantages_are_standardized():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        rewards = rng.uniform(0, 3.5, size=int(rng.integers(2, 9)))
        advantages = np.array(group_advantages(rewards))
        assert advantages.mean() == pytest.approx(0.0, abs=1e-9)
        assert advantages.std() == pytest.approx(1.0, abs=1e-9)


def test_scale_regression_loss():
    assert scale_regression_loss(2.0, 1.0) == pytest.approx(0.1 * np.log(2.0) ** 2)
    assert scale_regression_loss(1.5, 1.5) == 0.0
    with pytest.raises(InvalidScale):
        scale_regression_loss(0.0, 1.0)
    with pytest.raises(InvalidScale):
        scale_regression_loss(1.0, -2.0)


def test_score_rollout_perfect_answer():
    bundle = RewardCalculator().score_rollout(ROLLOUT, GT_TRACE, annotations_from_dict(ANNOTATIONS))
    assert (bundle.r_of, bundle.r_p, bundle.r_t, bundle.r_pf, bundle.r_acc) == pytest.approx((1, 1, 1, 1, 1))
    assert bundle.total == pytest.approx(3.5)


def test_score_rollout_without_trace_term():
    calculator = RewardCalculator(RewardConfig(include_trace_reward=False))
    bundle = calculator.score_rollout(ROLLOUT, GT_TRACE, annotations_from_dict(ANNOTATIONS))
    assert bundle.r_t == pytest.approx(1.0)
    assert bundle.total == pytest.approx(2.5)


def test_score_rollout_garbage_is_zero():
    bundle = RewardCalculator().score_rollout("hello", GT_TRACE)
    assert bundle.total == 0.0
    bundle = RewardCalculator().score_rollout(ROLLOUT, None)
    assert bundle.r_p == 0.0 and bundle.r_t == 0.0


def test_score_group_attaches_advantages():
    rows = [
        {"rollout_text": ROLLOUT, "gt_trace": GT_TRACE, "annotations": ANNOTATIONS},
        {"rollout_text": "nonsense", "gt_trace": GT_TRACE},
        {"rollout_text": ROLLOUT, "gt_trace": GT_TRACE, "annotations": {"key_steps": "broken"}},
    ]
    bundles = RewardCalculator().score_group(rows)
    # broken annotations only cost the accuracy term
    assert [b.total for b in bundles] == pytest.approx([3.5, 0.0, 3.25])
    assert bundles[0].advantage > bundles[2].advantage > bundles[1].advantage
    assert RewardCalculator().score_group(rows[:1])[0].advantage is None


def test_score_group_adds_weighted_scale_loss():
    rows = [
        {"rollout_text": ROLLOUT, "gt_trace": GT_TRACE, "pred_scale": 2.0, "gt_scale": 1.0},
        {"rollout_text": ROLLOUT, "gt_trace": GT_TRACE, "pred_scale": -1.0, "gt_scale": 1.0},
        {"rollout_text": ROLLOUT, "gt_trace": GT_TRACE},
    ]
    bundles = RewardCalculator(RewardConfig(scale_weight=0.5)).score_group(rows)
    assert bundles[0].scale_loss == pytest.approx(0.5 * np.log(2.0) ** 2)
    assert bundles[1].scale_loss is None
    assert bundles[2].scale_loss is None
    assert bundles[0].to_dict()["scale_loss"] == bundles[0].scale_loss
