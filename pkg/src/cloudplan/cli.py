"""Command-line harness for the end-to-end pipeline.

Every subcommand takes one JSON config file; ``--seed`` and ``--out``
override the config's values. ``plan`` exits nonzero when no plan is found.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import bench, data, suites
from .errors import CloudPlanError, ConfigError, NoPlanFound
from .mde import MdeConfig, BLOCK_STACKING_MDE, TABLE_BUSSING_MDE
from .scene import SceneParams, generate_scene
from .search import SearchParams
from .suggest import evaluate_suggesters
from .tasks import BLOCK_STACKING, TABLE_BUSSING, TaskSpec


def default_config(task: str = BLOCK_STACKING) -> dict:
    if task == BLOCK_STACKING:
        return {
            "task": BLOCK_STACKING,
            "target_order": list(suites.DEFAULT_TARGET_ORDER),
            "demos": {"count": 96, "seed": 0},
            "mde": {"count": 510, "seed": 1, "epsilon": 1.0, "clip_max": 3.2},
            "suite": {"scenes": 23, "seed": 5},
            "search": {"k": 10, "budget": 200, "max_depth": 6, "m": 1,
                       "w_c": 2.5, "w_d": 1.0, "w_p": 0.1, "action_cost": 0.01,
                       "goal_score": "best_alignment"},
            "methods": ["astar", "beam", "random_rollouts", "no_object_suggester", "no_mde"],
            "seeds": [0, 1, 2, 3, 4],
            "out": "runs/block_stacking",
        }
    return {
        "task": TABLE_BUSSING,
        "variant": "2plate",
        "distance_threshold": 0.10,
        "demos": {"count": 156, "seed": 0},
        "mde": {"count": 126, "seed": 1, "epsilon": 0.01, "clip_max": 5000.0},
        "suite": {"scenes": 14, "seed": 5},
        "search": {"k": 3, "budget": 200, "max_depth": 6, "m": 10,
                   "w_c": 1.0, "w_d": 1.0, "w_p": 0.1, "action_cost": 0.01,
                   "goal_score": "lowest_collision_sum"},
        "methods": ["astar", "beam", "random_rollouts", "no_object_suggester", "no_mde"],
        "seeds": [0, 1, 2, 3, 4],
        "out": "runs/table_bussing",
    }


def load_config(path: str) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if "task" not in cfg:
        raise ConfigError("config must name a task")
    base = default_config(cfg["task"])
    merged = {**base, **cfg}
    for key in ("demos", "mde", "suite", "search"):
        merged[key] = {**base[key], **cfg.get(key, {})}
    return merged


def task_spec_from_config(cfg: dict) -> TaskSpec:
    if cfg["task"] == BLOCK_STACKING:
        return suites.block_stacking_task(tuple(cfg["target_order"]))
    return suites.bussing_task(cfg.get("distance_threshold", 0.10))


def scenes_from_config(cfg: dict) -> list[suites.BenchScene]:
    suite = cfg["suite"]
    if cfg["task"] == BLOCK_STACKING:
        return suites.block_stacking_suite(suite["scenes"], suite["seed"],
                                           tuple(cfg["target_order"]))
    return suites.table_bussing_suite(cfg.get("variant", "2plate"),
                                      suite["scenes"], suite["seed"])


def search_params_from_config(cfg: dict) -> SearchParams:
    s = cfg["search"]
    return SearchParams(k=s["k"], w_c=s["w_c"], w_d=s["w_d"], w_p=s["w_p"],
                        action_cost=s["action_cost"], m=s["m"], budget=s["budget"],
                        max_depth=s["max_depth"], goal_score=s["goal_score"])


def demo_spec_from_config(cfg: dict):
    if cfg["task"] == BLOCK_STACKING:
        return suites.block_demo_spec(cfg["demos"]["seed"], tuple(cfg["target_order"]))
    return suites.bussing_demo_spec(cfg["demos"]["seed"])


def _generate_demos(cfg: dict) -> data.TransitionDataset:
    spec = demo_spec_from_config(cfg)
    policy = data.scripted_policy(cfg["task"])
    return data.generate_demonstrations(spec, policy, cfg["demos"]["count"],
                                        cfg["demos"]["seed"])


def _fit_all(cfg: dict, demos: data.TransitionDataset) -> bench.FittedModels:
    task = task_spec_from_config(cfg)
    placement = bench.fit_placement_suggester(demos)
    mde_cfg = MdeConfig(epsilon=cfg["mde"]["epsilon"], clip_max=cfg["mde"]["clip_max"])
    if cfg["task"] == BLOCK_STACKING:
        mde_specs = suites.block_mde_specs(cfg["mde"]["seed"], tuple(cfg["target_order"]))
    else:
        mde_specs = suites.bussing_mde_specs(cfg["mde"]["seed"])
    transitions = data.generate_mde_transitions(mde_specs, placement,
                                                cfg["mde"]["count"], cfg["mde"]["seed"])
    return bench.fit_models(task, demos, transitions, mde_cfg)


def cmd_gen_scenes(cfg: dict, out: Path) -> int:
    scenes = scenes_from_config(cfg)
    clouds = [generate_scene(s.spec) for s in scenes]
    meta = {"task": cfg["task"],
            "complexities": [s.complexity for s in scenes]}
    data.save_clouds(out / "scenes.jsonl", clouds, meta)
    print(f"wrote {len(clouds)} scenes to {out / 'scenes.jsonl'}")
    return 0


def cmd_gen_demos(cfg: dict, out: Path) -> int:
    demos = _generate_demos(cfg)
    data.save_dataset(out / "demos.jsonl", demos)
    print(f"wrote {len(demos)} transitions to {out / 'demos.jsonl'} "
          f"(skipped episodes: {demos.provenance['skipped_episodes']})")
    return 0


def cmd_fit(cfg: dict, out: Path) -> int:
    demos_path = out / "demos.jsonl"
    if demos_path.exists():
        demos = data.load_dataset(demos_path)
    else:
        demos = _generate_demos(cfg)
        data.save_dataset(demos_path, demos)
    models = _fit_all(cfg, demos)
    data.save_object_model(out / "object_suggester.jsonl", models.object_model)
    data.save_placement_model(out / "placement_suggester.jsonl", models.placement_model)
    if models.mde_model is not None:
        data.save_mde_model(out / "mde.jsonl", models.mde_model)
    metrics = evaluate_suggesters(models.object_model, models.placement_model, demos)
    print(f"object suggester accuracy (vs uniform): {metrics.object_accuracy:.3f}")
    print(f"placement WTA translation error: {metrics.mean_translation_error * 100:.2f} cm")
    print(f"placement WTA rotation error: {metrics.mean_rotation_error_deg:.2f} deg")
    print(f"models written to {out}")
    return 0


def _load_or_fit_models(cfg: dict, out: Path) -> bench.FittedModels:
    paths = [out / "object_suggester.jsonl", out / "placement_suggester.jsonl", out / "mde.jsonl"]
    if all(p.exists() for p in paths[:2]):
        mde_model = data.load_mde_model(paths[2]) if paths[2].exists() else None
        return bench.FittedModels(data.load_object_model(paths[0]),
                                  data.load_placement_model(paths[1]), mde_model)
    cmd_fit(cfg, out)
    return _load_or_fit_models(cfg, out)


def cmd_plan(cfg: dict, out: Path, scene_index: int, method: str) -> int:
    models = _load_or_fit_models(cfg, out)
    scenes = scenes_from_config(cfg)
    scene = scenes[scene_index]
    task = task_spec_from_config(cfg)
    root = generate_scene(scene.spec)
    params = replace(search_params_from_config(cfg), seed=cfg["seeds"][0])
    try:
        result = bench.plan_with_method(method, root, task, models, params)
    except NoPlanFound as exc:
        stats = exc.stats
        print(f"no plan found (expanded {stats.expanded}, generated {stats.generated})")
        return 1
    print(f"plan with {len(result.plan)} steps "
          f"(expanded {result.stats.expanded}, generated {result.stats.generated}, "
          f"{result.stats.elapsed:.2f}s):")
    for i, action in enumerate(result.plan, 1):
        t = action.transform.translation
        print(f"  {i}. move {action.object} by ({t[0]:+.3f}, {t[1]:+.3f}, {t[2]:+.3f}) m")
    return 0


def cmd_bench(cfg: dict, out: Path) -> int:
    models = _load_or_fit_models(cfg, out)
    config = bench.BenchmarkConfig(
        task=task_spec_from_config(cfg),
        scenes=tuple(scenes_from_config(cfg)),
        methods=tuple(cfg["methods"]),
        seeds=tuple(cfg["seeds"]),
        search=search_params_from_config(cfg),
    )
    report = bench.run_benchmark(config, models, out)
    _print_report(report)
    print(f"artifacts written to {out}")
    return 0


def _print_report(report: dict) -> None:
    print(f"{'method':<22}{'plan ok':>10}{'exec ok':>10}{'generated':>12}{'expanded':>11}")
    for method, row in sorted(report["methods"].items()):
        print(f"{method:<22}"
              f"{row['planning_success']['mean']:>10.3f}"
              f"{row['execution_success']['mean']:>10.3f}"
              f"{row['generated']['mean']:>12.1f}"
              f"{row['expanded']['mean']:>11.1f}")


def cmd_report(cfg: dict, out: Path) -> int:
    report = bench.regenerate_report(out / "runs.jsonl")
    data.save_report(out / "report.json", report)
    _print_report(report)
    return 0


def cmd_viz_trace(trace_path: str, out: Path) -> int:
    meta, rows, summary = data.load_trace(trace_path)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(trace_path).stem
    plan_ids = set()
    by_id = {row["id"]: row for row in rows}
    goal = summary.get("selected_goal")
    while goal is not None:
        plan_ids.add(goal)
        goal = by_id[goal]["parent"]

    def node_label(row):
        obj = row.get("object", "root")
        return f"{row['id']}\\n{obj}\\nf={row['f']:.3f}"

    expanded_ids = {row["parent"] for row in rows if row["parent"] is not None}
    lines = ["digraph expanded {", "  node [shape=box, fontsize=9];"]
    for row in rows:
        if row["id"] in expanded_ids or row["goal"] or row["id"] in plan_ids:
            color = "green" if row["id"] in plan_ids else ("red" if row["goal"] else "gray")
            lines.append(f'  n{row["id"]} [label="{node_label(row)}", color={color}];')
            if row["parent"] is not None:
                style = " [color=green, penwidth=2]" if row["id"] in plan_ids else ""
                lines.append(f'  n{row["parent"]} -> n{row["id"]}{style};')
    lines.append("}")
    data.write_atomic(out / f"{stem}_expanded.dot", "\n".join(lines) + "\n")

    lines = ["digraph plans {", "  node [shape=box, fontsize=9];"]
    keep: set[int] = set()
    for row in rows:
        if row["goal"]:
            node = row["id"]
            while node is not None:
                keep.add(node)
                node = by_id[node]["parent"]
    for row in rows:
        if row["id"] in keep:
            color = "red" if row["goal"] else "gray"
            lines.append(f'  n{row["id"]} [label="{node_label(row)}", color={color}];')
            if row["parent"] is not None:
                lines.append(f'  n{row["parent"]} -> n{row["id"]};')
    lines.append("}")
    data.write_atomic(out / f"{stem}_plans.dot", "\n".join(lines) + "\n")
    print(f"wrote {stem}_expanded.dot and {stem}_plans.dot to {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="cloudplan",
                                     description="point-cloud rearrangement planning benchmark")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override the first run seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("init-config").add_argument("--task", default=BLOCK_STACKING)
    sub.add_parser("gen-scenes")
    sub.add_parser("gen-demos")
    sub.add_parser("fit")
    plan_p = sub.add_parser("plan")
    plan_p.add_argument("--scene", type=int, default=0)
    plan_p.add_argument("--method", default="astar")
    sub.add_parser("bench")
    sub.add_parser("report")
    viz_p = sub.add_parser("viz-trace")
    viz_p.add_argument("trace")
    args = parser.parse_args(argv)

    try:
        if args.command == "init-config":
            print(json.dumps(default_config(args.task), indent=2))
            return 0
        if args.config is None:
            raise ConfigError("--config is required for this command")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seeds"] = [args.seed] + [s for s in cfg["seeds"] if s != args.seed]
        out = Path(args.out if args.out is not None else cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "gen-scenes":
            return cmd_gen_scenes(cfg, out)
        if args.command == "gen-demos":
            return cmd_gen_demos(cfg, out)
        if args.command == "fit":
            return cmd_fit(cfg, out)
        if args.command == "plan":
            return cmd_plan(cfg, out, args.scene, args.method)
        if args.command == "bench":
            return cmd_bench(cfg, out)
        if args.command == "report":
            return cmd_report(cfg, out)
        if args.command == "viz-trace":
            return cmd_viz_trace(args.trace, out)
        raise ConfigError(f"unknown command {args.command}")
    except CloudPlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
