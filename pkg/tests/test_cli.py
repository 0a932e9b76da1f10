import json

import numpy as np
import pytest
from click.testing import CliRunner

from src.domain.entities.scene import DepthMap
from src.infrastructure.io.json_scene_repository import save_depth_png
from src.infrastructure.io.jsonl import read_json, read_jsonl, write_jsonl
from src.infrastructure.synthetic.tabletop import bench_suite
from src.presentation.cli import cli

ROLLOUT = (
    "<think>\n[Referring] [red mug]: [(500, 500, 2.0)]\n</think>"
    "<answer>[(500, 500, 2.0), (600, 500, 2.0)]</answer>"
)
GT_TRACE = [[500, 500, 2.0], [600, 500, 2.0]]
ANNOTATIONS = {
    "image_width": 640, "image_height": 480, "scene_max_depth": 4.0,
    "key_steps": [{"type": "Referring", "object": "red mug", "value": [500, 500, 2.0]}],
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    result = CliRunner().invoke(cli, ["synth", "--out", str(root), "--scenes", "2", "--seed", "0"])
    assert result.exit_code == 0, result.output
    return root


def test_synth_layout(workspace):
    assert (workspace / "scenes" / "tabletop-000" / "scene.json").exists()
    assert (workspace / "scenes" / "tabletop-001" / "depth.png").exists()
    assert sorted(p.name for p in (workspace / "bench").iterdir()) == ["sample-000", "sample-001"]


def test_generate_writes_records(workspace, tmp_path):
    tasks = tmp_path / "tasks.json"
    tasks.write_text(json.dumps({"tasks": [
        {"method": "DirectionalMove", "source_id": "mug", "direction": "front", "distance": 0.2},
        {"method": "Stacking", "source_id": "ghost", "reference_id": "book"},
    ]}))
    out = tmp_path / "traces.jsonl"
    result = CliRunner().invoke(cli, [
        "generate", "--scene", str(workspace / "scenes" / "tabletop-000" / "scene.json"),
        "--tasks", str(tasks), "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    records = read_jsonl(str(out))
    assert records[-1]["type"] == "rejection"
    assert records[-1]["reason"] == "unknown_object"
    assert "unknown_object" in result.output


def test_evaluate_reference_predictions(workspace, tmp_path):
    preds = []
    for sample in bench_suite(2, seed=0):
        camera = sample.scene.camera
        grid = sample.reference_trace.image_points * np.array([1000 / camera.width, 1000 / camera.height, 1.0])
        preds.append({"sample_id": sample.sample_id, "trace": grid.tolist()})
    pred_path = tmp_path / "preds.jsonl"
    write_jsonl(str(pred_path), preds)

    report_path = tmp_path / "report.json"
    csv_path = tmp_path / "results.csv"
    result = CliRunner().invoke(cli, [
        "evaluate", "--bench", str(workspace / "bench"), "--pred", str(pred_path),
        "--report", str(report_path), "--csv", str(csv_path),
    ])
    assert result.exit_code == 0, result.output
    report = read_json(str(report_path))
    assert report["samples"] == 2
    assert report["percentages"]["overall"] == 100.0
    assert (tmp_path / "report.txt").read_text().startswith("+")
    assert csv_path.read_text().splitlines()[0].startswith("sample_id,")


def test_evaluate_missing_bench_exits_one(tmp_path):
    pred_path = tmp_path / "preds.jsonl"
    pred_path.write_text("")
    result = CliRunner().invoke(cli, [
        "evaluate", "--bench", str(tmp_path / "nowhere"), "--pred", str(pred_path), "--report", str(tmp_path / "r.json"),
    ])
    assert result.exit_code == 1


def test_reward_scores_groups(tmp_path):
    rows = [
        {"id": "a", "group_id": "g", "rollout_text": ROLLOUT, "gt_trace": GT_TRACE, "annotations": ANNOTATIONS},
        {"id": "b", "group_id": "g", "rollout_text": "nonsense", "gt_trace": GT_TRACE},
        {"id": "c", "rollout_text": ROLLOUT, "gt_trace": GT_TRACE},
    ]
    in_path, out_path = tmp_path / "rollouts.jsonl", tmp_path / "rewards.jsonl"
    write_jsonl(str(in_path), rows)
    result = CliRunner().invoke(cli, ["reward", "--in", str(in_path), "--out", str(out_path)])
    assert result.exit_code == 0, result.output
    scored = read_jsonl(str(out_path))
    assert [r["id"] for r in scored] == ["a", "b", "c"]
    assert scored[0]["total"] == pytest.approx(3.5)
    assert scored[0]["advantage"] == pytest.approx(1.0)
    assert scored[1]["advantage"] == pytest.approx(-1.0)
    assert scored[2]["advantage"] is None
    assert "2 groups" in result.output


def _episode_file(tmp_path, depth_value):
    camera = {"fx": 100.0, "fy": 100.0, "cx": 50.0, "cy": 50.0, "width": 100, "height": 100}
    save_depth_png(DepthMap(np.full((100, 100), depth_value)), str(tmp_path / "d0.png"))
    arm = {"rotation": np.eye(3).tolist(), "position": [0.0, 0.0, 1.85], "closed": False}
    path = tmp_path / "episode.json"
    path.write_text(json.dumps({"frames": [
        {"camera": camera, "depth_file": "d0.png", "arms": {"right": arm}},
        {"arms": {"right": arm}},
    ]}))
    return str(path)


def test_validate_extrinsics_reports_fraction(tmp_path):
    result = CliRunner().invoke(cli, ["validate-extrinsics", "--episode", _episode_file(tmp_path, 2.0)])
    assert result.exit_code == 0, result.output
    assert "1.000 of frames aligned" in result.output
    assert "valid" in result.output

    result = CliRunner().invoke(cli, ["validate-extrinsics", "--episode", _episode_file(tmp_path, 3.0)])
    assert "rejected" in result.output


def test_bad_scene_exits_one(tmp_path):
    result = CliRunner().invoke(cli, ["generate", "--scene", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o.jsonl")])
    assert result.exit_code == 1
    assert "Invalid input" in result.output


def test_bad_config_exits_one(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"planner": {"no_such_key": 1}}))
    result = CliRunner().invoke(cli, ["--config", str(config), "synth", "--out", str(tmp_path)])
    assert result.exit_code == 1
