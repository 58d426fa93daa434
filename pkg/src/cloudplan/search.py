"""Multi-goal A* over point-cloud nodes, plus beam-search and random-rollout
baselines.

Nodes carry full clouds; children come from the suggesters (k placements per
eligible object, the last-moved object excluded). Step cost is the weighted
sum of a constant action cost, a voxel collision cost (placement overlap
averaged with the vertical pick-column overlap), the predicted deviation,
and one minus the action's suggester likelihood.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Protocol

import numpy as np

from .errors import NoApplicableMode, NoPlanFound, UnknownObject
from .geom import (
    Action,
    RigidTransform,
    SegmentedCloud,
    STATIC_LABEL,
    object_center,
    transform_object,
    voxel_indices,
)
from .mde import MdeModel, predict_scaled, transition_features
from .scene import support_graph
from .suggest import (
    ObjectSuggesterModel,
    PlacementSuggesterModel,
    suggest_objects,
    suggest_placements,
)
from .tasks import BLOCK_STACKING, TaskSpec, evaluate_task

GOAL_SCORE_COLLISION = "lowest_collision_sum"
GOAL_SCORE_ALIGNMENT = "best_alignment"


@dataclass(frozen=True)
class SearchParams:
    k: int = 10
    w_c: float = 1.0
    w_d: float = 1.0
    w_p: float = 0.1
    action_cost: float = 0.01
    m: int = 1
    budget: int = 200
    max_depth: int = 6
    seed: int = 0
    goal_score: str = GOAL_SCORE_ALIGNMENT
    voxel_size: float = 0.01

    def __post_init__(self):
        if self.k < 1 or self.budget < 1 or self.m < 1:
            raise ValueError("k, budget and m must be >= 1")
        if min(self.w_c, self.w_d, self.w_p) < 0:
            raise ValueError("cost weights must be nonnegative")


@dataclass(frozen=True)
class SearchNode:
    cloud: SegmentedCloud
    action: Action | None
    parent: "SearchNode | None"
    g: float
    h: float
    f: float
    depth: int
    node_id: int
    cost_action: float = 0.0
    cost_collision: float = 0.0
    cost_deviation: float = 0.0
    cost_probability: float = 0.0
    p_phi: float = 1.0
    p_theta: float = 1.0
    is_goal: bool = False


@dataclass(frozen=True)
class SearchStats:
    elapsed: float
    generated: int
    expanded: int


@dataclass(frozen=True)
class SearchResult:
    plan: tuple[Action, ...]
    goal_ids: tuple[int, ...]
    selected_goal: int
    stats: SearchStats
    trace: tuple[dict, ...]


class SuggesterBundle(Protocol):
    def object_probabilities(self, cloud: SegmentedCloud) -> dict[str, float]: ...
    def placements(self, cloud: SegmentedCloud, obj: str, k: int,
                   seed: int) -> list[tuple[RigidTransform, float]]: ...


class PlannerSuggesters:
    """Adapter binding fitted models to the planner's sampling interface."""

    def __init__(self, object_model: ObjectSuggesterModel | None,
                 placement_model: PlacementSuggesterModel,
                 uniform_objects: bool = False):
        self.object_model = object_model
        self.placement_model = placement_model
        self.uniform_objects = uniform_objects or object_model is None

    def object_probabilities(self, cloud: SegmentedCloud) -> dict[str, float]:
        if self.uniform_objects:
            p = 1.0 / cloud.num_objects
            return {obj: p for obj in cloud.ids}
        return suggest_objects(self.object_model, cloud)

    def placements(self, cloud, obj, k, seed):
        return suggest_placements(self.placement_model, cloud, obj, k, seed)


def derive_seed(*parts: int) -> int:
    """Stable integer stream id from a tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _voxel_set(points: np.ndarray, voxel_size: float) -> set[tuple[int, int, int]]:
    return set(map(tuple, voxel_indices(points, voxel_size).tolist()))


class _ExpansionCache:
    """Per-parent geometry shared by all children of one expansion."""

    def __init__(self, cloud: SegmentedCloud, voxel_size: float):
        self.voxel_size = voxel_size
        self.graph = support_graph(cloud)
        self.voxels = {obj: _voxel_set(cloud.object_points(obj), voxel_size)
                       for obj in cloud.ids}
        top = max((iz for vox in self.voxels.values() for _, _, iz in vox), default=0)
        self.sweep_top = top + 1
        self._centers = {}
        for obj in cloud.ids:
            pts = cloud.object_points(obj)
            self._centers[obj] = (pts.min(axis=0) + pts.max(axis=0)) / 2.0

    def others_union(self, moved: str) -> set[tuple[int, int, int]]:
        out: set[tuple[int, int, int]] = set()
        for obj, vox in self.voxels.items():
            if obj != moved:
                out |= vox
        return out

    def pick_overlap(self, moved: str) -> float:
        """Fraction of the vertical lift column above the moved object that
        other objects occupy."""
        vox = self.voxels[moved]
        footprint = {(ix, iy) for ix, iy, _ in vox}
        top = max(iz for _, _, iz in vox)
        if self.sweep_top <= top + 1:
            return 0.0
        column = {(ix, iy, iz) for ix, iy in footprint
                  for iz in range(top + 1, self.sweep_top + 1)}
        others = self.others_union(moved)
        return len(column & others) / len(column)

    def center(self, obj: str) -> np.ndarray:
        return self._centers[obj]


@dataclass(frozen=True)
class StepCost:
    action: float
    collision: float
    deviation: float
    probability: float
    total: float


def _step_cost(cache: _ExpansionCache, child_cloud: SegmentedCloud, action: Action,
               p_phi: float, p_theta: float, mde: MdeModel | None,
               params: SearchParams) -> StepCost:
    moved_vox = _voxel_set(child_cloud.object_points(action.object), params.voxel_size)
    others = cache.others_union(action.object)
    place_overlap = len(moved_vox & others) / len(moved_vox)
    c_c = 0.5 * (place_overlap + cache.pick_overlap(action.object))

    if mde is not None:
        after = child_cloud.object_points(action.object)
        c_after = (after.min(axis=0) + after.max(axis=0)) / 2.0
        feats = np.array([
            float(cache.graph.load_count(action.object)),
            place_overlap,
            float(np.linalg.norm(c_after - cache.center(action.object))),
            float(np.arccos(np.clip((np.trace(action.transform.rotation) - 1.0) / 2.0, -1.0, 1.0))),
        ])
        c_d = predict_scaled(mde, feats)
    else:
        c_d = 0.0

    c_p = 1.0 - p_theta * p_phi
    total = params.action_cost + params.w_c * c_c + params.w_d * c_d + params.w_p * c_p
    return StepCost(params.action_cost, c_c, c_d, c_p, total)


def step_cost(parent: SearchNode, child: SearchNode, mde: MdeModel | None,
              suggesters: SuggesterBundle, params: SearchParams) -> StepCost:
    """Cost of the move that produced ``child`` from ``parent``; the
    probabilities attached to the child by the suggesters feed the
    probability term."""
    cache = _ExpansionCache(parent.cloud, params.voxel_size)
    return _step_cost(cache, child.cloud, child.action, child.p_phi, child.p_theta,
                      mde, params)


def _eligible_objects(node: SearchNode) -> list[str]:
    if node.action is None:
        return list(node.cloud.ids)
    return [obj for obj in node.cloud.ids if obj != node.action.object]


def expand_node(node: SearchNode, task: TaskSpec, suggesters: SuggesterBundle,
                mde: MdeModel | None, params: SearchParams,
                next_id: int) -> list[SearchNode]:
    """Generate up to k children per eligible object (all objects at the
    root, excluding the last-moved object afterwards)."""
    cache = _ExpansionCache(node.cloud, params.voxel_size)
    p_phi = suggesters.object_probabilities(node.cloud)
    children: list[SearchNode] = []
    for obj_index, obj in enumerate(_eligible_objects(node)):
        seed = derive_seed(params.seed, node.node_id, obj_index)
        try:
            proposals = suggesters.placements(node.cloud, obj, params.k, seed)
        except NoApplicableMode:
            continue
        for transform, p_theta in proposals:
            action = Action(obj, transform)
            child_cloud = transform_object(node.cloud, action)
            cost = _step_cost(cache, child_cloud, action, p_phi[obj], p_theta, mde, params)
            ev = evaluate_task(child_cloud, task)
            g = node.g + cost.total
            children.append(SearchNode(
                cloud=child_cloud, action=action, parent=node,
                g=g, h=ev.heuristic, f=g + ev.heuristic,
                depth=node.depth + 1, node_id=next_id + len(children),
                cost_action=cost.action, cost_collision=cost.collision,
                cost_deviation=cost.deviation, cost_probability=cost.probability,
                p_phi=p_phi[obj], p_theta=p_theta, is_goal=ev.is_goal))
    return children


def _root_node(cloud: SegmentedCloud, task: TaskSpec) -> SearchNode:
    ev = evaluate_task(cloud, task)
    return SearchNode(cloud=cloud, action=None, parent=None, g=0.0, h=ev.heuristic,
                      f=ev.heuristic, depth=0, node_id=0, is_goal=ev.is_goal)


def _trace_row(node: SearchNode) -> dict:
    row = {
        "id": node.node_id,
        "parent": None if node.parent is None else node.parent.node_id,
        "depth": node.depth,
        "g": node.g,
        "h": node.h,
        "f": node.f,
        "goal": bool(node.is_goal),
        "costs": [node.cost_action, node.cost_collision,
                  node.cost_deviation, node.cost_probability],
        "p_phi": node.p_phi,
        "p_theta": node.p_theta,
    }
    if node.action is not None:
        row["object"] = node.action.object
        row["rotation"] = [float(v) for v in node.action.transform.rotation.ravel()]
        row["translation"] = [float(v) for v in node.action.transform.translation]
    return row


def _backtrack(node: SearchNode) -> tuple[Action, ...]:
    actions: list[Action] = []
    while node.parent is not None:
        actions.append(node.action)
        node = node.parent
    return tuple(reversed(actions))


def _path_collision_sum(node: SearchNode) -> float:
    total = 0.0
    while node is not None:
        total += node.cost_collision
        node = node.parent
    return total


def _stack_alignment(node: SearchNode, task: TaskSpec) -> float:
    """Sum of XY center misalignments between consecutive blocks of the
    target stack; only meaningful for block stacking goal nodes."""
    if task.kind != BLOCK_STACKING:
        return _path_collision_sum(node)
    by_class = {node.cloud.classes[obj]: obj for obj in node.cloud.ids}
    total = 0.0
    order = [by_class[cls] for cls in reversed(task.target_order)]
    for below, above in zip(order, order[1:]):
        bx, by = object_center(node.cloud, below)
        ax, ay = object_center(node.cloud, above)
        total += math.hypot(ax - bx, ay - by)
    return total


def _select_goal(goals: list[SearchNode], task: TaskSpec, params: SearchParams) -> int:
    if params.goal_score == GOAL_SCORE_COLLISION:
        scores = [_path_collision_sum(n) for n in goals]
    else:
        scores = [_stack_alignment(n, task) for n in goals]
    return int(min(range(len(goals)), key=lambda i: (scores[i], i)))


def astar_plan(root_cloud: SegmentedCloud, task: TaskSpec,
               suggesters: SuggesterBundle, mde: MdeModel | None,
               params: SearchParams) -> SearchResult:
    """Best-first search ordered by f = g + h with deterministic (f, g,
    insertion) tie-breaking. Runs until the open list empties, the expansion
    budget is hit, or m goal nodes have been popped; then returns the path
    to the goal with the best score under ``params.goal_score``."""
    start = time.perf_counter()
    root = _root_node(root_cloud, task)
    trace = [_trace_row(root)]
    counter = 0
    heap: list[tuple[float, float, int, SearchNode]] = [(root.f, root.g, counter, root)]
    goals: list[SearchNode] = []
    generated = 0
    expanded = 0
    next_id = 1

    while heap:
        _, _, _, node = heapq.heappop(heap)
        if node.is_goal:
            goals.append(node)
            if len(goals) >= params.m:
                break
            continue
        if node.depth >= params.max_depth:
            continue
        if expanded >= params.budget:
            break
        children = expand_node(node, task, suggesters, mde, params, next_id)
        expanded += 1
        generated += len(children)
        next_id += len(children)
        for child in children:
            counter += 1
            trace.append(_trace_row(child))
            heapq.heappush(heap, (child.f, child.g, counter, child))

    stats = SearchStats(time.perf_counter() - start, generated, expanded)
    if not goals:
        raise NoPlanFound("expansion budget exhausted without reaching a goal", stats, tuple(trace))
    pick = _select_goal(goals, task, params)
    return SearchResult(
        plan=_backtrack(goals[pick]),
        goal_ids=tuple(n.node_id for n in goals),
        selected_goal=goals[pick].node_id,
        stats=stats,
        trace=tuple(trace),
    )


def beam_search_plan(root_cloud: SegmentedCloud, task: TaskSpec,
                     suggesters: SuggesterBundle, mde: MdeModel | None,
                     params: SearchParams) -> SearchResult:
    """Width-1 beam: repeatedly commit to the child with the best heuristic
    value, myopically and without backtracking."""
    start = time.perf_counter()
    node = _root_node(root_cloud, task)
    trace = [_trace_row(node)]
    generated = 0
    expanded = 0
    next_id = 1
    while True:
        if node.is_goal:
            stats = SearchStats(time.perf_counter() - start, generated, expanded)
            return SearchResult(_backtrack(node), (node.node_id,), node.node_id,
                                stats, tuple(trace))
        if node.depth >= params.max_depth or expanded >= params.budget:
            break
        children = expand_node(node, task, suggesters, mde, params, next_id)
        expanded += 1
        generated += len(children)
        next_id += len(children)
        for child in children:
            trace.append(_trace_row(child))
        if not children:
            break
        node = min(children, key=lambda c: (c.h, c.node_id))
    stats = SearchStats(time.perf_counter() - start, generated, expanded)
    raise NoPlanFound("beam search reached a dead end before any goal", stats, tuple(trace))


def random_rollout_plan(root_cloud: SegmentedCloud, task: TaskSpec,
                        suggesters: SuggesterBundle,
                        params: SearchParams) -> SearchResult:
    """Repeated rollouts choosing uniformly among the b = k * M proposals per
    step; a fresh rollout starts only while the cumulative expansion count is
    within budget, so the total never exceeds budget + max_depth."""
    start = time.perf_counter()
    rng = np.random.default_rng(derive_seed(params.seed, 0x5eed))
    root = _root_node(root_cloud, task)
    trace = [_trace_row(root)]
    generated = 0
    expanded = 0
    next_id = 1

    def finish(node: SearchNode) -> SearchResult:
        stats = SearchStats(time.perf_counter() - start, generated, expanded)
        return SearchResult(_backtrack(node), (node.node_id,), node.node_id,
                            stats, tuple(trace))

    if root.is_goal:
        return finish(root)

    while expanded <= params.budget:
        node = root
        for _ in range(params.max_depth):
            proposals: list[tuple[str, RigidTransform, float]] = []
            for obj_index, obj in enumerate(_eligible_objects(node)):
                seed = derive_seed(params.seed, node.node_id, obj_index)
                try:
                    placements = suggesters.placements(node.cloud, obj, params.k, seed)
                except NoApplicableMode:
                    continue
                proposals.extend((obj, t, p) for t, p in placements)
            expanded += 1
            generated += len(proposals)
            if not proposals:
                break
            obj, transform, p_theta = proposals[int(rng.integers(len(proposals)))]
            action = Action(obj, transform)
            child_cloud = transform_object(node.cloud, action)
            ev = evaluate_task(child_cloud, task)
            node = SearchNode(
                cloud=child_cloud, action=action, parent=node,
                g=node.g + params.action_cost, h=ev.heuristic,
                f=node.g + params.action_cost + ev.heuristic,
                depth=node.depth + 1, node_id=next_id,
                cost_action=params.action_cost, p_theta=p_theta,
                is_goal=ev.is_goal)
            next_id += 1
            trace.append(_trace_row(node))
            if node.is_goal:
                return finish(node)
    stats = SearchStats(time.perf_counter() - start, generated, expanded)
    raise NoPlanFound("rollout budget exhausted without reaching a goal", stats, tuple(trace))


def replay_plan(root_cloud: SegmentedCloud, plan: Iterable[Action]) -> SegmentedCloud:
    """Apply a plan with pure transform dynamics (the planner's model)."""
    cloud = root_cloud
    for action in plan:
        cloud = transform_object(cloud, action)
    return cloud
