"""Task-specific heuristic and goal functions, computed from clouds alone.

Block stacking counts how many blocks sit outside the longest correctly
stacked bottom-up chain; the count is zero exactly at the goal. Table
bussing sums XY distances of every other object's center to a reference
plate's center and is satisfied when all of them fall under a threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import MissingObject
from .geom import SegmentedCloud, object_bbox, object_center

BLOCK_STACKING = "block_stacking"
TABLE_BUSSING = "table_bussing"


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    # block stacking: class order of the target stack, top to bottom
    target_order: tuple[str, ...] = ()
    xy_tol: float = 0.015
    z_tol: float = 0.010
    table_height: float = 0.0
    # table bussing: goal radius around the reference plate's center
    distance_threshold: float = 0.10
    plate_class: str = "plate"


@dataclass(frozen=True)
class TaskEvaluation:
    heuristic: float
    is_goal: bool


def evaluate_task(cloud: SegmentedCloud, spec: TaskSpec) -> TaskEvaluation:
    if spec.kind == BLOCK_STACKING:
        return _evaluate_stacking(cloud, spec)
    if spec.kind == TABLE_BUSSING:
        return _evaluate_bussing(cloud, spec)
    raise ValueError(f"unknown task kind {spec.kind!r}")


def _objects_by_class(cloud: SegmentedCloud) -> dict[str, str]:
    return {cloud.classes[obj]: obj for obj in cloud.ids}


def _evaluate_stacking(cloud: SegmentedCloud, spec: TaskSpec) -> TaskEvaluation:
    by_class = _objects_by_class(cloud)
    try:
        bottom_up = [by_class[cls] for cls in reversed(spec.target_order)]
    except KeyError as exc:
        raise MissingObject(f"no object of class {exc.args[0]!r} in cloud") from None

    chain = 0
    prev = None
    for obj in bottom_up:
        lo, hi = object_bbox(cloud, obj)
        cx, cy = object_center(cloud, obj)
        if prev is None:
            ok = abs(lo[2] - spec.table_height) <= spec.z_tol
        else:
            plo, phi = object_bbox(cloud, prev)
            pcx, pcy = object_center(cloud, prev)
            ok = (abs(lo[2] - phi[2]) <= spec.z_tol
                  and math.hypot(cx - pcx, cy - pcy) <= spec.xy_tol)
        if not ok:
            break
        chain += 1
        prev = obj
    out_of_place = len(bottom_up) - chain
    return TaskEvaluation(float(out_of_place), out_of_place == 0)


def reference_plate(cloud: SegmentedCloud, spec: TaskSpec) -> str:
    """The plate whose center minimizes the summed XY distance of all other
    objects; ties break toward the lowest object id."""
    plates = [obj for obj in cloud.ids if cloud.classes[obj] == spec.plate_class]
    if not plates:
        raise MissingObject(f"no object of class {spec.plate_class!r} in cloud")
    centers = {obj: object_center(cloud, obj) for obj in cloud.ids}

    def total(plate: str) -> float:
        px, py = centers[plate]
        return sum(math.hypot(cx - px, cy - py)
                   for obj, (cx, cy) in centers.items() if obj != plate)

    return min(plates, key=lambda p: (total(p), p))


def _evaluate_bussing(cloud: SegmentedCloud, spec: TaskSpec) -> TaskEvaluation:
    ref = reference_plate(cloud, spec)
    px, py = object_center(cloud, ref)
    total = 0.0
    done = True
    for obj in cloud.ids:
        if obj == ref:
            continue
        cx, cy = object_center(cloud, obj)
        dist = math.hypot(cx - px, cy - py)
        total += dist
        if dist >= spec.distance_threshold:
            done = False
    return TaskEvaluation(total, done)
