import re
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.spatial.distance import cdist

from ..config.settings import RewardConfig, Settings
from ..domain.errors import InvalidGroup, InvalidScale
from ..domain.value_objects.rewards import KeyStepAnnotations, PerceptionType, ProcessStep, RewardBundle, Rollout

_STRICT_LAYOUT = re.compile(r"^\s*<think>(.*?)</think>\s*<answer>(.*?)</answer>\s*$", re.DOTALL)
_THINK = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_ANSWER = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_LIST = re.compile(r"\[([^\[\]]*)\]")
_NUMBER = r"[-+]?\d+(?:\.\d+)?"
_TRIPLE = re.compile(rf"\(\s*({_NUMBER})\s*,\s*({_NUMBER})\s*,\s*({_NUMBER})\s*\)")
_STEP = re.compile(r"^\[\s*([^\]]+?)\s*\]\s*\[\s*([^\]]+?)\s*\]\s*:\s*(.+?)\s*$")
_MEASURE = re.compile(rf"^({_NUMBER})\s*([A-Za-z]+)\.?$")
_SCALAR = re.compile(rf"^({_NUMBER})\.?$")
_ARTICLES = re.compile(r"\b(the|a|an)\b")


def outcome_format_reward(text: str) -> float:
    """1 for exactly one think block followed by exactly one answer block, nothing else."""
    if not isinstance(text, str):
        return 0.0
    for tag in ("<think>", "</think>", "<answer>", "</answer>"):
        if text.count(tag) != 1:
            return 0.0
    return 1.0 if _STRICT_LAYOUT.match(text) else 0.0


def _answer_block(text: str) -> Optional[str]:
    match = _ANSWER.search(text) if isinstance(text, str) else None
    return match.group(1) if match else None


def _parse_triples(body: str, grid: int) -> Optional[np.ndarray]:
    triples = _TRIPLE.findall(body)
    if not triples or _TRIPLE.sub("", body).strip(" \t\r\n,"):
        return None
    points = []
    for u, v, d in triples:
        if "." in u or "." in v:
            return None
        u, v, d = int(u), int(v), float(d)
        if not (0 <= u <= grid and 0 <= v <= grid):
            return None
        points.append((u, v, d))
    return np.array(points, dtype=float)


def parse_answer_trace(text: str, grid: int = 1000) -> Optional[np.ndarray]:
    """(u, v, d) rows from the first bracketed list in the answer block, or None."""
    body = _answer_block(text)
    if body is None:
        return None
    match = _LIST.search(body)
    if match is None:
        return None
    return _parse_triples(match.group(1), grid)


def normalize_trace(points, max_depth: float, grid: int = 1000) -> np.ndarray:
    """Grid (u, v) and metric d mapped onto [0, 1]."""
    arr = np.asarray(points, dtype=float).reshape(-1, 3)
    scale = np.array([grid, grid, max_depth if max_depth > 0 else 1.0], dtype=float)
    return arr / scale


def _f(p, q) -> float:
    return max(0.0, 1.0 - float(np.sum((np.asarray(p) - np.asarray(q)) ** 2)))


def point_reward(pred: Optional[np.ndarray], gt: Optional[np.ndarray]) -> float:
    if pred is None or gt is None or len(pred) == 0 or len(gt) == 0:
        return 0.0
    return 0.5 * (_f(pred[0], gt[0]) + _f(pred[-1], gt[-1]))


def dtw_distance(x, y) -> Tuple[float, int]:
    """Accumulated DTW cost and warping-path length (Euclidean local cost)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r, c = len(x), len(y)
    acc = np.full((r + 1, c + 1), np.inf)
    acc[0, 0] = 0.0
    cost = cdist(x, y)
    for i in range(r):
        for j in range(c):
            acc[i + 1, j + 1] = cost[i, j] + min(acc[i, j], acc[i, j + 1], acc[i + 1, j])

    i, j = r, c
    steps = 1
    while i > 1 or j > 1:
        # Diagonal wins ties.
        move = int(np.argmin((acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])))
        if move == 0:
            i, j = i - 1, j - 1
        elif move == 1:
            i -= 1
        else:
            j -= 1
        steps += 1
    return float(acc[r, c]), steps


def trace_reward(pred: Optional[np.ndarray], gt: Optional[np.ndarray]) -> float:
    if pred is None or gt is None or len(pred) == 0 or len(gt) == 0:
        return 0.0
    total, steps = dtw_distance(pred, gt)
    return max(0.0, 1.0 - total / steps)


def canonical_phrase(phrase: str) -> str:
    words = _ARTICLES.sub(" ", str(phrase).lower())
    return " ".join(words.split())


def _parse_step(line: str, grid: int) -> Optional[ProcessStep]:
    match = _STEP.match(line.strip())
    if match is None:
        return None
    kind, target, raw = match.groups()
    try:
        ptype = PerceptionType(kind)
    except ValueError:
        return None
    if ptype == PerceptionType.REFERRING:
        inner = _LIST.fullmatch(raw.strip())
        points = _parse_triples(inner.group(1) if inner else raw, grid)
        if points is None or len(points) != 1:
            return None
        return ProcessStep(ptype, target, tuple(float(x) for x in points[0]))
    if ptype == PerceptionType.MEASURING:
        measure = _MEASURE.match(raw)
        if measure is None:
            return None
        factor = Settings.UNIT_FACTORS.get(measure.group(2).lower())
        if factor is None:
            return None
        return ProcessStep(ptype, target, float(measure.group(1)) * factor)
    scalar = _SCALAR.match(raw)
    if scalar is None:
        return None
    return ProcessStep(ptype, target, float(scalar.group(1)))


def _step_lines(text: str) -> Optional[List[str]]:
    match = _THINK.search(text) if isinstance(text, str) else None
    if match is None:
        return None
    return [line.strip() for line in match.group(1).splitlines() if line.strip().startswith("[")]


def parse_process_steps(text: str, grid: int = 1000) -> Tuple[ProcessStep, ...]:
    """Every well-formed step line inside the think block; malformed lines are skipped."""
    lines = _step_lines(text) or []
    steps = (_parse_step(line, grid) for line in lines)
    return tuple(step for step in steps if step is not None)


def process_format_reward(text: str, grid: int = 1000) -> float:
    lines = _step_lines(text)
    if not lines:
        return 0.0
    return 1.0 if all(_parse_step(line, grid) is not None for line in lines) else 0.0


def _phrases_match(target: str, phrase: str) -> bool:
    t, p = canonical_phrase(target), canonical_phrase(phrase)
    return bool(t) and bool(p) and (p in t or t in p)


def _relative_ok(pred: float, gt: float, tolerance: float) -> bool:
    if gt == 0:
        return pred == 0
    return abs(pred - gt) / abs(gt) <= tolerance + 1e-12


def _step_score(step: ProcessStep, ptype: PerceptionType, gt: Any, annotations: KeyStepAnnotations,
                config: RewardConfig) -> float:
    if ptype == PerceptionType.REFERRING:
        pu, pv, pd = step.value
        gu, gv, gd = gt
        l1 = (abs(pu - gu) * annotations.image_width + abs(pv - gv) * annotations.image_height) / config.grid
        score = 0.5 if l1 <= config.pixel_fraction * annotations.longer_side + 1e-9 else 0.0
        if _relative_ok(pd, gd, config.depth_tolerance):
            score += 0.5
        return score
    return 1.0 if _relative_ok(float(step.value), float(gt), config.measure_tolerance) else 0.0


def process_accuracy_reward(steps: Sequence[ProcessStep], annotations: Optional[KeyStepAnnotations],
                            config: Optional[RewardConfig] = None) -> float:
    """Mean over annotated key steps of the best matching step's credit."""
    config = config or RewardConfig()
    if annotations is None or not annotations.entries:
        return 0.0
    total = 0.0
    for (ptype, phrase), gt in annotations.entries.items():
        best = 0.0
        for step in steps:
            if step.perception_type == ptype and _phrases_match(step.target_object, phrase):
                best = max(best, _step_score(step, ptype, gt, annotations, config))
        total += best
    return total / len(annotations.entries)


def total_reward(r_of: float, r_p: float, r_t: float, r_pf: float, r_acc: float,
                 alpha: float = 0.25, include_trace: bool = True) -> float:
    outcome = r_of + r_p + (r_t if include_trace else 0.0)
    return outcome + alpha * (r_pf + r_acc)


def group_advantages(rewards: Sequence[float]) -> List[float]:
    values = np.asarray(list(rewards), dtype=float)
    if values.size < 2:
        raise InvalidGroup(f"a group needs at least 2 rewards, got {values.size}")
    std = float(values.std())
    if std < 1e-12:
        return [0.0] * values.size
    return ((values - values.mean()) / std).tolist()


def scale_regression_loss(s_hat: float, s_star: float, weight: float = 0.1) -> float:
    if not (s_hat > 0 and s_star > 0):
        raise InvalidScale(f"scales must be strictly positive, got {s_hat} and {s_star}")
    return float(weight * (np.log(s_hat) - np.log(s_star)) ** 2)


def parse_rollout(text: str, grid: int = 1000) -> Rollout:
    return Rollout(text=text, parsed_answer=parse_answer_trace(text, grid), parsed_steps=parse_process_steps(text, grid))


def annotations_from_dict(data: Optional[Dict[str, Any]]) -> Optional[KeyStepAnnotations]:
    """Key-step annotations from the QA/rollout JSON shape, or None when absent."""
    if not data:
        return None
    entries = {}
    for step in data.get("key_steps", []):
        ptype = PerceptionType(step["type"])
        value = step["value"]
        entries[(ptype, step["object"])] = tuple(float(x) for x in value) if ptype == PerceptionType.REFERRING else float(value)
    return KeyStepAnnotations(
        entries=entries,
        image_width=int(data["image_width"]),
        image_height=int(data["image_height"]),
        scene_max_depth=float(data["scene_max_depth"]),
    )


class RewardCalculator:
    def __init__(self, config: Optional[RewardConfig] = None):
        self.config = config or RewardConfig()

    def score_rollout(self, text: str, gt_trace, annotations: Optional[KeyStepAnnotations] = None,
                      max_depth: Optional[float] = None) -> RewardBundle:
        """Full reward bundle for one rollout; never raises on malformed input."""
        cfg = self.config
        try:
            rollout = parse_rollout(text, cfg.grid)
            gt = None if gt_trace is None else np.asarray(gt_trace, dtype=float).reshape(-1, 3)
            if max_depth is None:
                max_depth = annotations.scene_max_depth if annotations else None
            if max_depth is None and gt is not None and len(gt):
                max_depth = float(gt[:, 2].max())
            pred_n = None if rollout.parsed_answer is None else normalize_trace(rollout.parsed_answer, max_depth or 1.0, cfg.grid)
            gt_n = None if gt is None or not len(gt) else normalize_trace(gt, max_depth or 1.0, cfg.grid)

            r_of = outcome_format_reward(text)
            r_p = point_reward(pred_n, gt_n)
            r_t = trace_reward(pred_n, gt_n)
            r_pf = process_format_reward(text, cfg.grid)
            r_acc = process_accuracy_reward(rollout.parsed_steps, annotations, cfg)
        except Exception as e:
            logger.warning(f"Scoring failed, rollout gets zero reward: {e}")
            return RewardBundle(alpha=cfg.alpha)
        total = total_reward(r_of, r_p, r_t, r_pf, r_acc, cfg.alpha, cfg.include_trace_reward)
        return RewardBundle(r_of, r_p, r_t, r_pf, r_acc, total, cfg.alpha)

    def scale_loss(self, s_hat, s_star) -> Optional[float]:
        """Weighted scale term for rows carrying both scales; None otherwise."""
        if s_hat is None or s_star is None:
            return None
        try:
            return scale_regression_loss(float(s_hat), float(s_star), self.config.scale_weight)
        except (InvalidScale, TypeError, ValueError) as e:
            logger.warning(f"Ignoring scale pair ({s_hat}, {s_star}): {e}")
            return None

    def score_group(self, rows: Sequence[Dict[str, Any]]) -> List[RewardBundle]:
        """Bundles for one group of rollouts with within-group advantages attached."""
        bundles = []
        for row in rows:
            try:
                annotations = annotations_from_dict(row.get("annotations"))
            except (KeyError, TypeError, ValueError) as e:
                logger.warning(f"Ignoring malformed annotations: {e}")
                annotations = None
            bundle = self.score_rollout(row.get("rollout_text", ""), row.get("gt_trace"), annotations,
                                        row.get("scene_max_depth"))
            bundles.append(replace(bundle, scale_loss=self.scale_loss(row.get("pred_scale"), row.get("gt_scale"))))
        if len(bundles) < 2:
            return bundles
        advantages = group_advantages([b.total for b in bundles])
        return [replace(b, advantage=a) for b, a in zip(bundles, advantages)]
