"""Transition datasets, scripted demonstration generation, and persistence.

Every artifact is a newline-delimited text file: a header record carrying a
schema tag and version, then one record per line with point arrays as flat
numeric lists. Floats round-trip exactly through repr, so regeneration with
the same seeds is byte-identical. Files are written to a temp path and
renamed into place.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import CorruptRecord, EmptyDataset, SchemaMismatch, ScriptFailure
from .geom import Action, RigidTransform, SegmentedCloud, object_bbox, object_center3, transform_object
from .mde import MdeConfig, MdeModel
from .scene import SceneParams, SceneSpec, generate_scene, support_graph
from .suggest import (
    NoApplicableMode,
    ObjectSuggesterModel,
    PlacementMode,
    PlacementSuggesterModel,
    suggest_placements,
)
from .tasks import TaskSpec

SCHEMA_VERSION = 1

# workspace the scripted policies place objects inside
WORKSPACE_MIN = (-0.22, -0.22)
WORKSPACE_MAX = (0.22, 0.22)
# table placements keep this distance from every object center so the
# placement suggester learns clean table modes
TABLE_SPOT_CLEARANCE = 0.11


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass(frozen=True)
class TransitionRecord:
    observation: SegmentedCloud
    action: Action
    next_observation: SegmentedCloud


@dataclass(frozen=True)
class TransitionDataset:
    records: tuple[TransitionRecord, ...]
    provenance: dict

    def __len__(self) -> int:
        return len(self.records)


def validate_dataset(dataset: TransitionDataset) -> None:
    """Reject records whose clouds disagree in objects or point counts."""
    for i, rec in enumerate(dataset.records):
        if rec.observation.ids != rec.next_observation.ids:
            raise CorruptRecord(f"record {i}: object ids changed across the transition")
        for obj in rec.observation.ids:
            n_before = int(rec.observation.mask(obj).sum())
            n_after = int(rec.next_observation.mask(obj).sum())
            if n_before != n_after:
                raise CorruptRecord(f"record {i}: object {obj!r} changed point count")
        rec.observation.index_of(rec.action.object)


# ---------------------------------------------------------------------------
# scripted demonstration policies

_BUSSING_TARGETS = {
    "cup": ("bowl", "plate"),
    "bowl": ("plate", "bowl"),
    "plate": ("plate",),
}


# demonstrators occasionally relocate a loaded supporter (carrying a stack),
# like the human demos do; without these moves the object suggester alone
# would veto every loaded-object action and mask the deviation estimator
CARRY_PROB = 0.12


def _free_objects(cloud: SegmentedCloud) -> list[str]:
    graph = support_graph(cloud)
    return [obj for obj in cloud.ids if graph.load_count(obj) == 0]


def _loaded_objects(cloud: SegmentedCloud) -> list[str]:
    graph = support_graph(cloud)
    return [obj for obj in cloud.ids if graph.load_count(obj) > 0]


def _table_spot(cloud: SegmentedCloud, rng: np.random.Generator) -> tuple[float, float]:
    centers = [object_center3(cloud, obj)[:2] for obj in cloud.ids]
    for _ in range(120):
        x = rng.uniform(WORKSPACE_MIN[0], WORKSPACE_MAX[0])
        y = rng.uniform(WORKSPACE_MIN[1], WORKSPACE_MAX[1])
        if all(math.hypot(x - cx, y - cy) >= TABLE_SPOT_CLEARANCE for cx, cy in centers):
            return x, y
    raise ScriptFailure("no clear table spot left in the workspace")


def _move_to(cloud: SegmentedCloud, obj: str, target_center: np.ndarray) -> Action:
    center = object_center3(cloud, obj)
    return Action(obj, RigidTransform.from_translation(target_center - center))


def _stack_action(cloud: SegmentedCloud, obj: str, anchor: str,
                  rng: np.random.Generator, align_sigma: float = 0.002) -> Action:
    lo, hi = object_bbox(cloud, obj)
    height = float(hi[2] - lo[2])
    alo, ahi = object_bbox(cloud, anchor)
    jx, jy = rng.normal(0.0, align_sigma, size=2)
    acx, acy = (alo[0] + ahi[0]) / 2.0, (alo[1] + ahi[1]) / 2.0
    target = np.array([acx + jx, acy + jy, float(ahi[2]) + height / 2.0])
    return _move_to(cloud, obj, target)


def _table_action(cloud: SegmentedCloud, obj: str, rng: np.random.Generator) -> Action:
    lo, hi = object_bbox(cloud, obj)
    height = float(hi[2] - lo[2])
    x, y = _table_spot(cloud, rng)
    return _move_to(cloud, obj, np.array([x, y, height / 2.0]))


def block_stacking_policy(cloud: SegmentedCloud, rng: np.random.Generator) -> Action:
    """Move a random clear block onto another clear block or a clear spot."""
    free = _free_objects(cloud)
    if not free:
        raise ScriptFailure("no movable object")
    loaded = _loaded_objects(cloud)
    if loaded and rng.random() < CARRY_PROB:
        return _table_action(cloud, loaded[int(rng.integers(len(loaded)))], rng)
    mover = free[int(rng.integers(len(free)))]
    anchors = [obj for obj in free if obj != mover]
    if anchors and rng.random() < 0.6:
        anchor = anchors[int(rng.integers(len(anchors)))]
        return _stack_action(cloud, mover, anchor, rng)
    return _table_action(cloud, mover, rng)


def table_bussing_policy(cloud: SegmentedCloud, rng: np.random.Generator) -> Action:
    """Move a clear item onto a class-appropriate clear anchor or the table."""
    free = _free_objects(cloud)
    if not free:
        raise ScriptFailure("no movable object")
    loaded = _loaded_objects(cloud)
    if loaded and rng.random() < CARRY_PROB:
        return _table_action(cloud, loaded[int(rng.integers(len(loaded)))], rng)
    order = list(free)
    rng.shuffle(order)
    for mover in order:
        cls = cloud.classes[mover]
        allowed = _BUSSING_TARGETS.get(cls, ())
        anchors = [obj for obj in free
                   if obj != mover and cloud.classes[obj] in allowed]
        if anchors and rng.random() < 0.75:
            anchor = anchors[int(rng.integers(len(anchors)))]
            return _stack_action(cloud, mover, anchor, rng)
        if cls != "plate" or rng.random() < 0.5:
            return _table_action(cloud, mover, rng)
    return _table_action(cloud, order[0], rng)


def scripted_policy(task: str) -> Callable[[SegmentedCloud, np.random.Generator], Action]:
    return block_stacking_policy if task == "block_stacking" else table_bussing_policy


def generate_demonstrations(spec: SceneSpec, policy, count: int,
                            seed: int = 0, max_episode_steps: int = 5) -> TransitionDataset:
    """Roll scripted pick-and-place episodes from seeded random scenes.

    Next observations are the transform-predicted clouds, so 3D point
    correspondence holds across every transition. Episodes whose script gets
    stuck are skipped and counted in the provenance.
    """
    records: list[TransitionRecord] = []
    skipped = 0
    episode = 0
    while len(records) < count:
        if episode > 50 * max(count, 1):
            raise ScriptFailure("demonstration generation is not making progress")
        scene = generate_scene(replace(spec, seed=derive_seed(seed, episode)))
        rng = np.random.default_rng(derive_seed(seed, episode, 1))
        steps = int(rng.integers(2, max_episode_steps + 1))
        cloud = scene
        for _ in range(steps):
            try:
                action = policy(cloud, rng)
            except ScriptFailure:
                skipped += 1
                break
            following = transform_object(cloud, action)
            records.append(TransitionRecord(cloud, action, following))
            cloud = following
            if len(records) >= count:
                break
        episode += 1
    provenance = {"task": spec.task, "count": count, "seed": seed,
                  "skipped_episodes": skipped, "episodes": episode}
    return TransitionDataset(tuple(records[:count]), provenance)


def generate_mde_transitions(specs: SceneSpec | Sequence[SceneSpec],
                             placement_model: PlacementSuggesterModel,
                             count: int, seed: int = 0,
                             per_object: int = 5) -> list[tuple[SegmentedCloud, Action]]:
    """Single-step transitions for MDE labeling: random scenes, k placement
    suggestions per object, each rolled out for one step.

    ``specs`` may be a sequence of scene specs to cycle through; the mix
    should include stacked starts so loaded-object moves appear in training.
    """
    if isinstance(specs, SceneSpec):
        specs = [specs]
    out: list[tuple[SegmentedCloud, Action]] = []
    scene_idx = 0
    while len(out) < count:
        spec = specs[scene_idx % len(specs)]
        scene = generate_scene(replace(spec, seed=derive_seed(seed, 7, scene_idx)))
        for obj_index, obj in enumerate(scene.ids):
            try:
                proposals = suggest_placements(placement_model, scene, obj, per_object,
                                               derive_seed(seed, 7, scene_idx, obj_index))
            except NoApplicableMode:
                continue
            out.extend((scene, Action(obj, t)) for t, _ in proposals)
        scene_idx += 1
    return out[:count]


# ---------------------------------------------------------------------------
# serialization

def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_records(path, schema: str, meta: dict, rows: Iterable[dict]) -> None:
    lines = [_canon({"schema": schema, "version": SCHEMA_VERSION, "meta": meta})]
    lines.extend(_canon(row) for row in rows)
    write_atomic(path, "\n".join(lines) + "\n")


def _read_records(path, schema: str) -> tuple[dict, list[dict]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CorruptRecord(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.split("\n") if ln]
    if not lines:
        raise CorruptRecord(f"{path} is empty")
    try:
        parsed = [json.loads(ln) for ln in lines]
    except json.JSONDecodeError as exc:
        raise CorruptRecord(f"{path}: {exc}") from exc
    header = parsed[0]
    if header.get("schema") != schema or header.get("version") != SCHEMA_VERSION:
        raise SchemaMismatch(
            f"{path}: expected {schema} v{SCHEMA_VERSION}, "
            f"found {header.get('schema')} v{header.get('version')}")
    return header.get("meta", {}), parsed[1:]


def cloud_to_obj(cloud: SegmentedCloud) -> dict:
    return {
        "ids": list(cloud.ids),
        "classes": dict(cloud.classes),
        "labels": [int(v) for v in cloud.labels],
        "points": [float(v) for v in cloud.points.ravel()],
    }


def cloud_from_obj(obj: dict) -> SegmentedCloud:
    try:
        points = np.array(obj["points"], dtype=float).reshape(-1, 3)
        return SegmentedCloud(points, np.array(obj["labels"], dtype=np.int32),
                              tuple(obj["ids"]), dict(obj["classes"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptRecord(f"bad cloud record: {exc}") from exc


def action_to_obj(action: Action) -> dict:
    return {
        "object": action.object,
        "rotation": [float(v) for v in action.transform.rotation.ravel()],
        "translation": [float(v) for v in action.transform.translation],
    }


def action_from_obj(obj: dict) -> Action:
    try:
        rot = np.array(obj["rotation"], dtype=float).reshape(3, 3)
        return Action(obj["object"], RigidTransform(rot, np.array(obj["translation"])))
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptRecord(f"bad action record: {exc}") from exc


def save_dataset(path, dataset: TransitionDataset) -> None:
    rows = ({"obs": cloud_to_obj(r.observation),
             "action": action_to_obj(r.action),
             "next": cloud_to_obj(r.next_observation)} for r in dataset.records)
    _write_records(path, "cloudplan.dataset", dataset.provenance, rows)


def load_dataset(path) -> TransitionDataset:
    meta, rows = _read_records(path, "cloudplan.dataset")
    records = []
    for row in rows:
        try:
            records.append(TransitionRecord(cloud_from_obj(row["obs"]),
                                            action_from_obj(row["action"]),
                                            cloud_from_obj(row["next"])))
        except KeyError as exc:
            raise CorruptRecord(f"dataset row missing field {exc}") from exc
    return TransitionDataset(tuple(records), meta)


def save_clouds(path, clouds: Sequence[SegmentedCloud], meta: dict | None = None) -> None:
    _write_records(path, "cloudplan.clouds", meta or {},
                   ({"cloud": cloud_to_obj(c)} for c in clouds))


def load_clouds(path) -> list[SegmentedCloud]:
    _, rows = _read_records(path, "cloudplan.clouds")
    return [cloud_from_obj(row["cloud"]) for row in rows]


def save_object_model(path, model: ObjectSuggesterModel) -> None:
    body = {
        "weights": [float(v) for v in model.weights],
        "bias": float(model.bias),
        "feat_mean": [float(v) for v in model.feat_mean],
        "feat_std": [float(v) for v in model.feat_std],
        "class_priors": {k: float(v) for k, v in sorted(model.class_priors.items())},
        "temperature": float(model.temperature),
    }
    _write_records(path, "cloudplan.object_suggester", {}, [body])


def load_object_model(path) -> ObjectSuggesterModel:
    _, rows = _read_records(path, "cloudplan.object_suggester")
    if len(rows) != 1:
        raise CorruptRecord("object suggester file must hold exactly one record")
    row = rows[0]
    return ObjectSuggesterModel(
        np.array(row["weights"]), row["bias"], np.array(row["feat_mean"]),
        np.array(row["feat_std"]), dict(row["class_priors"]),
        row["temperature"], fitted=True)


def save_placement_model(path, model: PlacementSuggesterModel) -> None:
    body = {
        "modes": [{
            "moved_class": m.moved_class,
            "anchor_class": m.anchor_class,
            "offset": list(m.offset),
            "rotation": list(m.rotation),
            "count": m.count,
            "weight": m.weight,
        } for m in model.modes],
        "jitter_xy_sigma": model.jitter_xy_sigma,
        "jitter_yaw_sigma": model.jitter_yaw_sigma,
        "table_anchor_radius": model.table_anchor_radius,
        "merge_radius": model.merge_radius,
    }
    _write_records(path, "cloudplan.placement_suggester", {}, [body])


def load_placement_model(path) -> PlacementSuggesterModel:
    _, rows = _read_records(path, "cloudplan.placement_suggester")
    if len(rows) != 1:
        raise CorruptRecord("placement suggester file must hold exactly one record")
    row = rows[0]
    modes = tuple(PlacementMode(m["moved_class"], m["anchor_class"],
                                tuple(m["offset"]), tuple(m["rotation"]),
                                m["count"], m["weight"]) for m in row["modes"])
    return PlacementSuggesterModel(modes, row["jitter_xy_sigma"], row["jitter_yaw_sigma"],
                                   row["table_anchor_radius"], row["merge_radius"],
                                   fitted=True)


def save_mde_model(path, model: MdeModel) -> None:
    body = {
        "epsilon": model.config.epsilon,
        "clip_max": model.config.clip_max,
        "neighbors": model.config.neighbors,
        "voxel_size": model.config.voxel_size,
        "feat_mean": [float(v) for v in model.feat_mean],
        "feat_std": [float(v) for v in model.feat_std],
        "features": [[float(v) for v in row] for row in model.features],
        "labels": [float(v) for v in model.labels],
        "label_lo": model.label_lo,
        "label_hi": model.label_hi,
    }
    _write_records(path, "cloudplan.mde", {}, [body])


def load_mde_model(path) -> MdeModel:
    _, rows = _read_records(path, "cloudplan.mde")
    if len(rows) != 1:
        raise CorruptRecord("MDE file must hold exactly one record")
    row = rows[0]
    config = MdeConfig(row["epsilon"], row["clip_max"], row["neighbors"], row["voxel_size"])
    return MdeModel(config, np.array(row["feat_mean"]), np.array(row["feat_std"]),
                    np.array(row["features"]).reshape(-1, 4), np.array(row["labels"]),
                    row["label_lo"], row["label_hi"], fitted=True)


def task_to_obj(spec: TaskSpec) -> dict:
    return {
        "kind": spec.kind,
        "target_order": list(spec.target_order),
        "xy_tol": spec.xy_tol,
        "z_tol": spec.z_tol,
        "table_height": spec.table_height,
        "distance_threshold": spec.distance_threshold,
        "plate_class": spec.plate_class,
    }


def task_from_obj(obj: dict) -> TaskSpec:
    return TaskSpec(obj["kind"], tuple(obj["target_order"]), obj["xy_tol"],
                    obj["z_tol"], obj["table_height"], obj["distance_threshold"],
                    obj["plate_class"])


def save_trace(path, meta: dict, rows: Iterable[dict], summary: dict) -> None:
    all_rows = list(rows)
    all_rows.append({"summary": summary})
    _write_records(path, "cloudplan.trace", meta, all_rows)


def load_trace(path) -> tuple[dict, list[dict], dict]:
    meta, rows = _read_records(path, "cloudplan.trace")
    if not rows or "summary" not in rows[-1]:
        raise CorruptRecord(f"{path}: trace has no summary record")
    return meta, rows[:-1], rows[-1]["summary"]


def save_runs(path, meta: dict, rows: Iterable[dict]) -> None:
    _write_records(path, "cloudplan.runs", meta, rows)


def load_runs(path) -> tuple[dict, list[dict]]:
    return _read_records(path, "cloudplan.runs")


def save_report(path, report: dict) -> None:
    body = {"schema": "cloudplan.report", "version": SCHEMA_VERSION, **report}
    write_atomic(path, json.dumps(body, sort_keys=True, indent=2) + "\n")


def load_report(path) -> dict:
    try:
        body = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptRecord(f"cannot read report {path}: {exc}") from exc
    if body.get("schema") != "cloudplan.report" or body.get("version") != SCHEMA_VERSION:
        raise SchemaMismatch(f"{path} is not a cloudplan report")
    return body
