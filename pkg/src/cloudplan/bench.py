"""Benchmark harness: fit models from scripted demonstrations, run planner
variants over scene suites, persist run records and search traces, and
aggregate success rates with confidence intervals.

Wall-clock timings are kept in a separate artifact (timing.json) so that
every other persisted file is byte-identical across reruns with the same
seeds.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import data
from .data import derive_seed
from .errors import ConfigError, CorruptRecord, NoPlanFound
from .geom import SegmentedCloud, transform_object
from .mde import MdeConfig, MdeModel, fit_mde
from .scene import SceneParams, SceneSpec, execute_action, generate_scene
from .search import (
    PlannerSuggesters,
    SearchParams,
    SearchResult,
    astar_plan,
    beam_search_plan,
    random_rollout_plan,
    replay_plan,
)
from .suggest import (
    ObjectSuggesterModel,
    PlacementSuggesterModel,
    fit_object_suggester,
    fit_placement_suggester,
)
from .suites import BenchScene
from .tasks import TaskSpec, evaluate_task

METHODS = ("astar", "beam", "random_rollouts", "no_object_suggester", "no_mde")


@dataclass(frozen=True)
class FittedModels:
    object_model: ObjectSuggesterModel
    placement_model: PlacementSuggesterModel
    mde_model: MdeModel | None = None


@dataclass(frozen=True)
class BenchmarkConfig:
    task: TaskSpec
    scenes: tuple[BenchScene, ...]
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    search: SearchParams
    scene_params: SceneParams = SceneParams()

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods: {unknown}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.scenes:
            raise ConfigError("at least one scene is required")


def fit_models(task: TaskSpec, demos: data.TransitionDataset,
               mde_transitions, mde_config: MdeConfig | None,
               scene_params: SceneParams = SceneParams()) -> FittedModels:
    object_model = fit_object_suggester(demos)
    placement_model = fit_placement_suggester(demos)
    mde_model = None
    if mde_config is not None and mde_transitions:
        simulator = lambda cloud, action: execute_action(cloud, action, scene_params)
        mde_model = fit_mde(mde_transitions, simulator, mde_config)
    return FittedModels(object_model, placement_model, mde_model)


def plan_with_method(method: str, root: SegmentedCloud, task: TaskSpec,
                     models: FittedModels, params: SearchParams) -> SearchResult:
    """Dispatch one planner variant. The full method uses both suggesters and
    the deviation estimator; ablations drop one component at a time."""
    full = PlannerSuggesters(models.object_model, models.placement_model)
    if method == "astar":
        return astar_plan(root, task, full, models.mde_model, params)
    if method == "no_object_suggester":
        uniform = PlannerSuggesters(None, models.placement_model, uniform_objects=True)
        return astar_plan(root, task, uniform, models.mde_model, params)
    if method == "no_mde":
        return astar_plan(root, task, full, None, params)
    if method == "beam":
        return beam_search_plan(root, task, full, models.mde_model, params)
    if method == "random_rollouts":
        return random_rollout_plan(root, task, full, params)
    raise ConfigError(f"unknown method {method!r}")


def execute_plan(root: SegmentedCloud, plan, scene_params: SceneParams) -> SegmentedCloud:
    cloud = root
    for action in plan:
        cloud = execute_action(cloud, action, scene_params)
    return cloud


def _run_one(method: str, scene: BenchScene, run_seed: int,
             config: BenchmarkConfig, models: FittedModels) -> tuple[dict, dict, float]:
    root = generate_scene(scene.spec)
    params = replace(config.search, seed=derive_seed(run_seed, scene.scene_id))
    started = time.perf_counter()
    try:
        result = plan_with_method(method, root, config.task, models, params)
        failed = None
    except NoPlanFound as exc:
        result = None
        failed = exc
    elapsed = time.perf_counter() - started

    if result is not None:
        planned_cloud = replay_plan(root, result.plan)
        planning_success = bool(evaluate_task(planned_cloud, config.task).is_goal)
        executed_cloud = execute_plan(root, result.plan, config.scene_params)
        execution_success = bool(evaluate_task(executed_cloud, config.task).is_goal)
        stats = result.stats
        trace_rows = list(result.trace)
        summary = {
            "generated": stats.generated,
            "expanded": stats.expanded,
            "planning_success": planning_success,
            "plan": [data.action_to_obj(a) for a in result.plan],
            "goal_ids": list(result.goal_ids),
            "selected_goal": result.selected_goal,
        }
    else:
        planning_success = False
        execution_success = False
        stats = failed.stats
        trace_rows = list(getattr(failed, "trace", ()) or ())
        summary = {
            "generated": stats.generated,
            "expanded": stats.expanded,
            "planning_success": False,
            "plan": [],
            "goal_ids": [],
            "selected_goal": None,
        }

    record = {
        "scene_id": scene.scene_id,
        "complexity": scene.complexity,
        "seed": run_seed,
        "method": method,
        "planning_success": planning_success,
        "execution_success": execution_success,
        "generated": stats.generated,
        "expanded": stats.expanded,
        "plan_length": len(summary["plan"]),
    }
    trace = {
        "meta": {
            "method": method,
            "scene_id": scene.scene_id,
            "seed": run_seed,
            "task": data.task_to_obj(config.task),
            "search_seed": params.seed,
            "budget": params.budget,
            "max_depth": params.max_depth,
            "k": params.k,
            "m": params.m,
            "root": data.cloud_to_obj(root),
        },
        "rows": trace_rows,
        "summary": summary,
    }
    return record, trace, elapsed


def run_benchmark(config: BenchmarkConfig, models: FittedModels,
                  out_dir: str | Path) -> dict:
    """Run every (scene, seed, method) combination, writing runs.jsonl,
    per-run traces, report.json, and timing.json under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records: list[dict] = []
    timings: list[dict] = []
    for scene in config.scenes:
        for run_seed in config.seeds:
            for method in config.methods:
                record, trace, elapsed = _run_one(method, scene, run_seed, config, models)
                trace_path = out / "traces" / f"{method}_scene{scene.scene_id:03d}_seed{run_seed}.jsonl"
                data.save_trace(trace_path, trace["meta"], trace["rows"], trace["summary"])
                record["trace"] = str(trace_path.relative_to(out))
                records.append(record)
                timings.append({"scene_id": scene.scene_id, "seed": run_seed,
                                "method": method, "seconds": elapsed})
    meta = {
        "task": data.task_to_obj(config.task),
        "methods": list(config.methods),
        "seeds": list(config.seeds),
        "n_scenes": len(config.scenes),
    }
    data.save_runs(out / "runs.jsonl", meta, records)
    report = build_report(meta, records)
    data.save_report(out / "report.json", report)
    _write_timing(out / "timing.json", timings)
    return report


def _write_timing(path: Path, timings: list[dict]) -> None:
    by_method: dict[str, list[float]] = {}
    for row in timings:
        by_method.setdefault(row["method"], []).append(row["seconds"])
    body = {
        "per_run": timings,
        "per_method": {m: {"mean_seconds": float(np.mean(v)),
                           "total_seconds": float(np.sum(v))}
                       for m, v in sorted(by_method.items())},
    }
    data.write_atomic(path, json.dumps(body, sort_keys=True, indent=2) + "\n")


def _mean_ci(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    if len(arr) < 2:
        return {"mean": mean, "ci95": 0.0}
    half = 1.96 * float(arr.std(ddof=1)) / math.sqrt(len(arr))
    return {"mean": mean, "ci95": half}


def build_report(meta: dict, records: list[dict]) -> dict:
    """Aggregate per-method means with normal-approximation 95% confidence
    intervals over per-seed averages, plus a per-complexity breakdown."""
    methods = sorted({r["method"] for r in records})
    seeds = sorted({r["seed"] for r in records})
    out_methods: dict[str, dict] = {}
    for method in methods:
        rows = [r for r in records if r["method"] == method]
        summary: dict[str, object] = {}
        for metric in ("planning_success", "execution_success", "generated", "expanded"):
            per_seed = [float(np.mean([float(r[metric]) for r in rows if r["seed"] == s]))
                        for s in seeds]
            summary[metric] = _mean_ci(per_seed)
        by_complexity: dict[str, dict] = {}
        for comp in sorted({r["complexity"] for r in rows}):
            comp_rows = [r for r in rows if r["complexity"] == comp]
            by_complexity[str(comp)] = {
                "planning_success": float(np.mean([r["planning_success"] for r in comp_rows])),
                "execution_success": float(np.mean([r["execution_success"] for r in comp_rows])),
                "runs": len(comp_rows),
            }
        summary["by_complexity"] = by_complexity
        summary["runs"] = len(rows)
        out_methods[method] = summary
    return {"meta": meta, "methods": out_methods}


def regenerate_report(runs_path: str | Path) -> dict:
    meta, records = data.load_runs(runs_path)
    return build_report(meta, records)


# ---------------------------------------------------------------------------
# trace checking

def check_trace(path: str | Path) -> dict:
    """Validate one persisted search trace: budget accounting, node
    bookkeeping, and that replaying the recorded plan from the recorded root
    reaches the goal exactly when the summary claims planning success."""
    meta, rows, summary = data.load_trace(path)
    if summary["expanded"] > summary["generated"]:
        raise CorruptRecord(f"{path}: expanded exceeds generated")

    by_id = {row["id"]: row for row in rows}
    for row in rows:
        if row["parent"] is None:
            if row["depth"] != 0:
                raise CorruptRecord(f"{path}: root must have depth 0")
            continue
        parent = by_id.get(row["parent"])
        if parent is None:
            raise CorruptRecord(f"{path}: node {row['id']} has unknown parent")
        if row["depth"] != parent["depth"] + 1:
            raise CorruptRecord(f"{path}: node {row['id']} depth mismatch")
        if abs(row["f"] - (row["g"] + row["h"])) > 1e-12:
            raise CorruptRecord(f"{path}: node {row['id']} violates f = g + h")
    if len(rows) > summary["generated"] + 1:
        raise CorruptRecord(f"{path}: more node rows than generated nodes")

    root = data.cloud_from_obj(meta["root"])
    task = data.task_from_obj(meta["task"])
    cloud = root
    for action_obj in summary["plan"]:
        cloud = transform_object(cloud, data.action_from_obj(action_obj))
    replay_goal = bool(evaluate_task(cloud, task).is_goal)
    if replay_goal != bool(summary["planning_success"]):
        raise CorruptRecord(f"{path}: plan replay disagrees with recorded success")
    return {"generated": summary["generated"], "expanded": summary["expanded"],
            "plan_length": len(summary["plan"]),
            "planning_success": bool(summary["planning_success"])}


def check_run_artifacts(out_dir: str | Path, max_depth: int | None = None,
                        budget: int | None = None) -> list[dict]:
    """Run the trace checker over every run in a benchmark output directory
    and verify rollout budget accounting against the recorded limits."""
    out = Path(out_dir)
    meta, records = data.load_runs(out / "runs.jsonl")
    results = []
    for record in records:
        checked = check_trace(out / record["trace"])
        if checked["generated"] != record["generated"]:
            raise CorruptRecord(f"{record['trace']}: generated count mismatch")
        if checked["expanded"] != record["expanded"]:
            raise CorruptRecord(f"{record['trace']}: expanded count mismatch")
        trace_meta, _, _ = data.load_trace(out / record["trace"])
        limit_budget = budget if budget is not None else trace_meta["budget"]
        limit_depth = max_depth if max_depth is not None else trace_meta["max_depth"]
        if record["method"] == "random_rollouts":
            if record["expanded"] > limit_budget + limit_depth:
                raise CorruptRecord(f"{record['trace']}: rollout expansions exceed budget + depth")
        else:
            if record["expanded"] > limit_budget:
                raise CorruptRecord(f"{record['trace']}: expansions exceed budget")
        results.append(checked)
    return results
