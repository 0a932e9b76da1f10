import functools
import json
import os
import sys
from collections import OrderedDict

import click
from loguru import logger

from ..application.bench_evaluator import BenchEvaluator
from ..application.calibration import extract_traces, validate_extrinsics
from ..application.reward_calculator import RewardCalculator, parse_answer_trace
from ..application.trace_generator import TraceGenerator, outcome_records, rejection_counts
from ..config.settings import Settings
from ..domain.entities.episode import ExtrinsicsMode, GripperConvention
from ..domain.entities.scene import TaskSpec
from ..domain.errors import ConfigError, Indeterminate, SceneFormatError, TraceSpatialError
from ..infrastructure.formatters.csv_formatter import CSVFormatter
from ..infrastructure.formatters.table_formatter import TableFormatter
from ..infrastructure.io.bench_directory_repository import BenchDirectoryRepository
from ..infrastructure.io.episode_json_repository import EpisodeJsonRepository
from ..infrastructure.io.json_scene_repository import JsonSceneRepository
from ..infrastructure.io.jsonl import iter_jsonl, read_json, write_json, write_jsonl
from ..infrastructure.synthetic.tabletop import bench_suite, tabletop_scene

INPUT_ERRORS = (SceneFormatError, ConfigError, FileNotFoundError, json.JSONDecodeError)


def handle_errors(command):
    """Exit 1 on bad input, 2 on anything unexpected."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except INPUT_ERRORS as e:
            click.echo(f"❌ Invalid input: {e}", err=True)
            sys.exit(1)
        except click.exceptions.Exit:
            raise
        except Exception as e:
            logger.exception(f"Internal error: {e}")
            click.echo(f"💥 Internal error: {e}", err=True)
            sys.exit(2)
    return wrapper


def load_tasks(path: str):
    data = read_json(path)
    if isinstance(data, dict):
        data = data.get("tasks", [])
    if not isinstance(data, list):
        raise SceneFormatError(f"{path}: expected a list of tasks")
    try:
        return [TaskSpec.from_dict(item) for item in data]
    except (KeyError, TypeError, ValueError) as e:
        raise SceneFormatError(f"{path}: bad task entry: {e}") from e


def load_predictions(path: str, grid: int):
    """sample_id -> predicted (u, v, d) rows; rows with model text are parsed like rollout answers."""
    preds = {}
    for row in iter_jsonl(path):
        sample_id = row.get("sample_id")
        if sample_id is None:
            raise SceneFormatError(f"{path}: prediction without sample_id")
        if "text" in row:
            parsed = parse_answer_trace(row["text"], grid)
            preds[sample_id] = None if parsed is None else parsed.tolist()
        else:
            preds[sample_id] = row.get("trace", row.get("points"))
    return preds


@click.group()
@click.option('--config', 'config_path', default=None, type=click.Path(), help='JSON file overriding module defaults.')
@click.option('--verbose', is_flag=True, help='Log debug detail to stderr.')
@click.pass_context
def cli(ctx, config_path, verbose):
    """Spatial trace generation, benchmark scoring and reward tooling"""
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else os.environ.get("TRACESPATIAL_LOG_LEVEL", "WARNING"))
    try:
        ctx.obj = Settings.load(config_path)
    except ConfigError as e:
        click.echo(f"❌ Invalid input: {e}", err=True)
        sys.exit(1)


@cli.command()
@click.option('--scene', 'scene_path', required=True, help='Scene JSON file.')
@click.option('--tasks', default='auto', help='Task JSON file, or "auto".')
@click.option('--seed', default=0, type=int, help='Seed for task selection and planning.')
@click.option('--out', required=True, help='Output JSONL of trace, QA and rejection records.')
@click.option('--workers', default=None, type=int, help='Parallel task workers.')
@click.pass_obj
@handle_errors
def generate(settings: Settings, scene_path, tasks, seed, out, workers):
    """Plan, refine and check traces for a scene"""
    scene = JsonSceneRepository().load_scene(scene_path)
    task_list = tasks if tasks == "auto" else load_tasks(tasks)
    outcomes = TraceGenerator(settings).generate(scene, task_list, seed, workers)
    written = write_jsonl(out, outcome_records(outcomes), settings.pipeline.float_decimals)

    accepted = sum(o.accepted for o in outcomes)
    click.echo(f"✅ {accepted}/{len(outcomes)} tasks accepted, {written} records saved to {out}")
    rejected = rejection_counts(outcomes)
    if rejected:
        click.echo("\n📊 Rejections:")
        click.echo(TableFormatter.format_counts(rejected))


@cli.command()
@click.option('--bench', 'bench_dir', required=True, help='Bench directory, one folder per sample.')
@click.option('--pred', 'pred_path', required=True, help='Predictions JSONL keyed by sample_id.')
@click.option('--report', 'report_path', required=True, help='Report JSON path.')
@click.option('--csv', 'csv_path', default=None, help='Optional per-sample CSV export.')
@click.pass_obj
@handle_errors
def evaluate(settings: Settings, bench_dir, pred_path, report_path, csv_path):
    """Score predicted traces against a bench suite"""
    repository = BenchDirectoryRepository(bench_dir)
    samples = [repository.load_sample(sample_id) for sample_id in repository.list_samples()]
    preds = load_predictions(pred_path, settings.reward.grid)
    report = BenchEvaluator(settings.bench).evaluate_suite(samples, preds)

    write_json(report_path, report.to_dict())
    table = TableFormatter.format_table(report.table_rows())
    text_path = os.path.splitext(report_path)[0] + ".txt"
    with open(text_path, "w", encoding="utf-8") as f:
        f.write(table + "\n")
    click.echo(f"✅ Report saved to {report_path}")
    if csv_path:
        CSVFormatter.save_results(report.results, csv_path)
        click.echo(f"✅ Per-sample results saved to {csv_path}")

    click.echo("\n📊 Bench results:")
    click.echo(table)


@cli.command()
@click.option('--in', 'in_path', required=True, help='Rollouts JSONL.')
@click.option('--out', 'out_path', required=True, help='Rewards JSONL.')
@click.pass_obj
@handle_errors
def reward(settings: Settings, in_path, out_path):
    """Reward bundles and group advantages for rollouts"""
    rows = list(iter_jsonl(in_path))
    groups = OrderedDict()
    for index, row in enumerate(rows):
        groups.setdefault(row.get("group_id", f"row-{index}"), []).append(index)

    calculator = RewardCalculator(settings.reward)
    scored = [None] * len(rows)
    for members in groups.values():
        for index, bundle in zip(members, calculator.score_group([rows[i] for i in members])):
            scored[index] = bundle

    out = []
    for row, bundle in zip(rows, scored):
        record = {key: row[key] for key in ("id", "group_id", "task_id") if key in row}
        record.update(bundle.to_dict())
        out.append(record)
    write_jsonl(out_path, out)

    mean = sum(b.total for b in scored) / len(scored) if scored else 0.0
    click.echo(f"✅ {len(out)} rollouts in {len(groups)} groups scored, mean total {mean:.3f}; saved to {out_path}")


@cli.command('validate-extrinsics')
@click.option('--episode', 'episode_path', required=True, help='Episode JSON file.')
@click.option('--mode', default=ExtrinsicsMode.STRICT.value,
              type=click.Choice([m.value for m in ExtrinsicsMode]), help='Depth agreement rule.')
@click.option('--convention', default=GripperConvention.Z_OFFSET_15.value,
              type=click.Choice([c.value for c in GripperConvention]), help='Gripper point offset.')
@click.option('--traces', 'traces_path', default=None, help='Write end-effector and object traces here when valid.')
@click.pass_obj
@handle_errors
def validate_extrinsics_command(settings: Settings, episode_path, mode, convention, traces_path):
    """Check camera extrinsics of a robot episode against its depth"""
    episode = EpisodeJsonRepository().load_episode(episode_path)
    try:
        fraction, valid = validate_extrinsics(episode, mode, convention=convention, config=settings.calib)
    except Indeterminate as e:
        click.echo(f"⚠️  Indeterminate: {e}")
        return
    click.echo(f"{'✅' if valid else '❌'} {mode}: {fraction:.3f} of frames aligned, extrinsics {'valid' if valid else 'rejected'}")
    if not (valid and traces_path):
        return
    try:
        eef, obj = extract_traces(episode, convention, settings.calib, keypoints=True)
    except TraceSpatialError as e:
        click.echo(f"⚠️  No traces extracted ({e.reason}): {e}")
        return
    records = [{"frame": t.frame.value, "points": t.to_records()} for t in (eef, obj)]
    write_jsonl(traces_path, records)
    click.echo(f"✅ Traces saved to {traces_path}")


@cli.command()
@click.option('--out', 'out_dir', required=True, help='Output directory.')
@click.option('--scenes', default=5, type=int, help='Number of synthetic scenes and bench samples.')
@click.option('--seed', default=0, type=int, help='Seed for object placement.')
@handle_errors
def synth(out_dir, scenes, seed):
    """Write synthetic tabletop scenes and a matching bench suite"""
    repository = JsonSceneRepository()
    for index in range(scenes):
        scene = tabletop_scene(seed=seed + index)
        repository.save_scene(scene, os.path.join(out_dir, "scenes", scene.scene_id, "scene.json"))
    bench = BenchDirectoryRepository(os.path.join(out_dir, "bench"))
    for sample in bench_suite(scenes, seed):
        bench.save_sample(sample)
    click.echo(f"✅ {scenes} scenes and {scenes} bench samples saved to {out_dir}")


if __name__ == '__main__':
    cli()
