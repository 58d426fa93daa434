"""Bundled benchmark scene families with task-complexity annotations.

Complexity for block stacking is the exact optimal move count from an
abstract blocks-world search; bussing scenes are annotated with the number
of objects that start outside the goal radius (a lower bound on moves).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .scene import ExplicitPose, RandomLayout, SceneSpec, template_for
from .tasks import BLOCK_STACKING, TABLE_BUSSING, TaskSpec

BLOCK_CLASSES = ("block_red", "block_green", "block_blue")
# target stack, top to bottom
DEFAULT_TARGET_ORDER = ("block_red", "block_green", "block_blue")


@dataclass(frozen=True)
class BenchScene:
    scene_id: int
    spec: SceneSpec
    complexity: int


def optimal_block_moves(stacks: tuple[tuple[str, ...], ...],
                        goal_bottom_up: tuple[str, ...]) -> int:
    """Exact optimum by breadth-first search over abstract stack states.

    A move takes the top block of any stack and puts it on the table (a new
    singleton stack) or on top of another stack.
    """
    start = frozenset(tuple(s) for s in stacks if s)
    goal = frozenset({tuple(goal_bottom_up)})
    if start == goal:
        return 0
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        state, dist = frontier.popleft()
        stacks_now = sorted(state)
        for src in stacks_now:
            top = src[-1]
            rest = src[:-1]
            targets = [None] + [t for t in stacks_now if t != src]
            for dst in targets:
                if dst is None:
                    if not rest:
                        continue  # already a singleton on the table
                    new = (state - {src}) | ({rest} if rest else set()) | {(top,)}
                else:
                    new = (state - {src, dst}) | ({rest} if rest else set()) | {dst + (top,)}
                if new == goal:
                    return dist + 1
                if new not in seen:
                    seen.add(new)
                    frontier.append((new, dist + 1))
    raise ValueError("goal unreachable in abstract block world")


def _abstract_block_configs(goal_bottom_up: tuple[str, ...]) -> list[tuple[tuple[tuple[str, ...], ...], int]]:
    blocks = list(goal_bottom_up)
    configs: list[tuple[tuple[str, ...], ...]] = []
    configs.append(tuple((b,) for b in blocks))  # all unstacked
    for pair in permutations(blocks, 2):
        third = next(b for b in blocks if b not in pair)
        configs.append((tuple(pair), (third,)))
    for order in permutations(blocks):
        configs.append((tuple(order),))
    out = []
    for cfg in configs:
        moves = optimal_block_moves(cfg, goal_bottom_up)
        if moves >= 2:
            out.append((cfg, moves))
    out.sort(key=lambda item: (item[1], item[0]))
    return out


def block_stacking_task(target_order: tuple[str, ...] = DEFAULT_TARGET_ORDER) -> TaskSpec:
    return TaskSpec(kind=BLOCK_STACKING, target_order=target_order)


def block_stacking_suite(n_scenes: int = 23, seed: int = 0,
                         target_order: tuple[str, ...] = DEFAULT_TARGET_ORDER
                         ) -> list[BenchScene]:
    """Randomized 3-block scenes cycling through every abstract start
    configuration that is 2 to 4 optimal steps from the goal."""
    goal_bottom_up = tuple(reversed(target_order))
    pool = _abstract_block_configs(goal_bottom_up)
    scenes = []
    for i in range(n_scenes):
        stacks, moves = pool[i % len(pool)]
        layout = RandomLayout(stacks=stacks)
        spec = SceneSpec(
            task=BLOCK_STACKING,
            objects=tuple((cls, cls) for cls in target_order),
            layout=layout,
            seed=int(np.random.SeedSequence([seed, i]).generate_state(1)[0]),
        )
        scenes.append(BenchScene(i, spec, moves))
    return scenes


def bussing_task(distance_threshold: float = 0.10) -> TaskSpec:
    return TaskSpec(kind=TABLE_BUSSING, distance_threshold=distance_threshold)


_BUSSING_VARIANTS = {
    # two plates, a bowl, and a cup / one plate, two bowls, and a cup
    "2plate": (("plate_0", "plate"), ("plate_1", "plate"), ("bowl_0", "bowl"), ("cup_0", "cup")),
    "2bowl": (("plate_0", "plate"), ("bowl_0", "bowl"), ("bowl_1", "bowl"), ("cup_0", "cup")),
}


def bussing_demo_objects() -> tuple[tuple[str, str], ...]:
    """Superset object roster used to record bussing demonstrations, so the
    placement modes cover every class pair the eval variants need."""
    return (("plate_0", "plate"), ("plate_1", "plate"),
            ("bowl_0", "bowl"), ("bowl_1", "bowl"), ("cup_0", "cup"))


def table_bussing_suite(variant: str = "2plate", n_scenes: int = 14,
                        seed: int = 0) -> list[BenchScene]:
    objects = _BUSSING_VARIANTS[variant]
    ids = [obj for obj, _ in objects]
    scenes = []
    stack_options: list[tuple[tuple[str, ...], ...]] = [
        tuple((obj,) for obj in ids),
    ]
    if variant == "2plate":
        stack_options.append((("plate_0",), ("plate_1",), ("bowl_0", "cup_0")))
        stack_options.append((("plate_0", "bowl_0"), ("plate_1",), ("cup_0",)))
    else:
        stack_options.append((("plate_0",), ("bowl_0", "cup_0"), ("bowl_1",)))
        stack_options.append((("plate_0", "bowl_0"), ("bowl_1", "cup_0")))
    for i in range(n_scenes):
        stacks = stack_options[i % len(stack_options)]
        spec = SceneSpec(
            task=TABLE_BUSSING,
            objects=objects,
            layout=RandomLayout(stacks=stacks, randomize_yaw=False),
            seed=int(np.random.SeedSequence([seed, 101, i]).generate_state(1)[0]),
        )
        complexity = sum(1 for obj in ids if obj != "plate_0") + (
            1 if len(stacks) < len(ids) else 0)
        scenes.append(BenchScene(i, spec, complexity))
    return scenes


def bussing_demo_spec(seed: int = 0) -> SceneSpec:
    objects = bussing_demo_objects()
    return SceneSpec(
        task=TABLE_BUSSING,
        objects=objects,
        layout=RandomLayout(stacks=tuple((obj,) for obj, _ in objects), randomize_yaw=False),
        seed=seed,
    )


def block_demo_spec(seed: int = 0,
                    target_order: tuple[str, ...] = DEFAULT_TARGET_ORDER) -> SceneSpec:
    return SceneSpec(
        task=BLOCK_STACKING,
        objects=tuple((cls, cls) for cls in target_order),
        layout=RandomLayout(stacks=tuple((cls,) for cls in target_order)),
        seed=seed,
    )


def block_mde_specs(seed: int = 0,
                    target_order: tuple[str, ...] = DEFAULT_TARGET_ORDER
                    ) -> tuple[SceneSpec, ...]:
    """Scene mix for MDE data collection: stacked starts included so the
    labels cover loaded-object moves."""
    ids = list(target_order)
    variants = [
        tuple((b,) for b in ids),
        ((ids[0], ids[1]), (ids[2],)),
        ((ids[2], ids[0]), (ids[1],)),
        (tuple(ids),),
    ]
    return tuple(
        SceneSpec(task=BLOCK_STACKING, objects=tuple((cls, cls) for cls in ids),
                  layout=RandomLayout(stacks=v), seed=seed + i)
        for i, v in enumerate(variants))


def bussing_mde_specs(seed: int = 0) -> tuple[SceneSpec, ...]:
    objects = bussing_demo_objects()
    singles = tuple((obj,) for obj, _ in objects)
    variants = [
        singles,
        (("plate_0",), ("plate_1",), ("bowl_0", "cup_0"), ("bowl_1",)),
        (("plate_0", "bowl_0"), ("plate_1",), ("bowl_1", "cup_0")),
    ]
    return tuple(
        SceneSpec(task=TABLE_BUSSING, objects=objects,
                  layout=RandomLayout(stacks=v, randomize_yaw=False), seed=seed + i)
        for i, v in enumerate(variants))


def mde_challenge_suite(n_scenes: int = 20, seed: int = 0) -> list[BenchScene]:
    """Stacked-start bussing scenes built to tempt the planner into moving a
    loaded bowl: the cup rides the bowl's rim on the side facing the plate,
    so the one move that topples the cup also looks geometrically greediest.
    """
    bowl = template_for("bowl")
    cup = template_for("cup")
    scenes = []
    rng = np.random.default_rng(np.random.SeedSequence([seed, 202]).generate_state(1)[0])
    for i in range(n_scenes):
        angle = float(rng.uniform(0.0, 2.0 * math.pi))
        dist = float(rng.uniform(0.18, 0.23))
        ux, uy = math.cos(angle), math.sin(angle)
        plate_xy = (-dist / 2.0 * ux, -dist / 2.0 * uy)
        bowl_xy = (dist / 2.0 * ux, dist / 2.0 * uy)
        rim = bowl.footprint_radius - cup.footprint_radius * 0.4
        cup_xy = (bowl_xy[0] - rim * ux, bowl_xy[1] - rim * uy)
        objects = [("plate_0", "plate"), ("bowl_0", "bowl"), ("cup_0", "cup")]
        layout = {
            "plate_0": ExplicitPose(plate_xy[0], plate_xy[1], 0.0),
            "bowl_0": ExplicitPose(bowl_xy[0], bowl_xy[1], 0.0),
            "cup_0": ExplicitPose(cup_xy[0], cup_xy[1], bowl.height),
        }
        if i % 4 == 3:
            # occasionally add a free bowl that also needs consolidating
            perp = (-uy, ux)
            objects.append(("bowl_1", "bowl"))
            layout["bowl_1"] = ExplicitPose(0.16 * perp[0], 0.16 * perp[1], 0.0)
        spec = SceneSpec(task=TABLE_BUSSING, objects=tuple(objects),
                         layout=layout, seed=i)
        scenes.append(BenchScene(i, spec, 2 if len(objects) == 3 else 3))
    return scenes
