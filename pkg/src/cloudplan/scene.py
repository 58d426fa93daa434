"""Deterministic kinematic scenes: object templates, seeded scene generation,
support relations, and drop-and-settle execution dynamics.

The simulator stands in for a physics engine at desk scale. Moving an object
never carries the things resting on it; they lose support, topple aside, and
drop until supported again, which is the failure mode the deviation
estimator is trained to flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .errors import InvalidSpec, UnknownObject
from .geom import (
    Action,
    RigidTransform,
    SegmentedCloud,
    object_bbox,
    object_center3,
    rotation_about_z,
    transform_object,
)

TABLE_ID = "__table__"


@dataclass(frozen=True)
class SceneParams:
    """Contact tolerances and settle behavior."""

    contact_tol: float = 0.005
    table_height: float = 0.0
    # lateral displacement of an object whose support is pulled out from
    # under it; models "falls off and rolls aside" deterministically
    topple_distance: float = 0.12


@dataclass(frozen=True)
class ObjectTemplate:
    """Canonical object geometry in its own frame, base at z = 0."""

    class_name: str
    cloud: np.ndarray
    footprint_radius: float
    height: float

    def __post_init__(self):
        cloud = np.array(self.cloud, dtype=float).reshape(-1, 3)
        if cloud.shape[0] == 0:
            raise InvalidSpec(f"template {self.class_name!r} has an empty cloud")
        if abs(float(cloud[:, 2].min())) > 1e-12:
            raise InvalidSpec(f"template {self.class_name!r} base must sit at z = 0")
        cloud.setflags(write=False)
        object.__setattr__(self, "cloud", cloud)


def _disk(radius: float, z: float, rings: int = 4, spokes: int = 16) -> np.ndarray:
    pts = [(0.0, 0.0, z)]
    for r in np.linspace(radius / rings, radius, rings):
        for ang in np.linspace(0.0, 2.0 * math.pi, spokes, endpoint=False):
            pts.append((r * math.cos(ang), r * math.sin(ang), z))
    return np.array(pts)


def _ring(radius: float, z: float, spokes: int = 16) -> np.ndarray:
    angs = np.linspace(0.0, 2.0 * math.pi, spokes, endpoint=False)
    return np.stack([radius * np.cos(angs), radius * np.sin(angs), np.full_like(angs, z)], axis=1)


def block_template(class_name: str, side: float = 0.03, points_per_edge: int = 5) -> ObjectTemplate:
    axis = np.linspace(-side / 2.0, side / 2.0, points_per_edge)
    zaxis = np.linspace(0.0, side, points_per_edge)
    grid = np.stack(np.meshgrid(axis, axis, zaxis, indexing="ij"), axis=-1).reshape(-1, 3)
    return ObjectTemplate(class_name, grid, footprint_radius=side * math.sqrt(2.0) / 2.0, height=side)


def plate_template(class_name: str = "plate", radius: float = 0.10, height: float = 0.02) -> ObjectTemplate:
    layers = [_disk(radius, z, rings=4, spokes=20) for z in (0.0, height / 2.0, height)]
    return ObjectTemplate(class_name, np.vstack(layers), footprint_radius=radius, height=height)


def bowl_template(class_name: str = "bowl", radius: float = 0.06, height: float = 0.04) -> ObjectTemplate:
    parts = [_disk(radius * 0.6, 0.0, rings=2, spokes=12)]
    for frac, z in ((0.7, height * 0.25), (0.8, height * 0.5), (0.9, height * 0.75), (1.0, height)):
        parts.append(_ring(radius * frac, z))
    return ObjectTemplate(class_name, np.vstack(parts), footprint_radius=radius, height=height)


def cup_template(class_name: str = "cup", radius: float = 0.03, height: float = 0.05) -> ObjectTemplate:
    parts = [_disk(radius, 0.0, rings=2, spokes=10)]
    for z in np.linspace(height / 4.0, height, 4):
        parts.append(_ring(radius, float(z), spokes=12))
    return ObjectTemplate(class_name, np.vstack(parts), footprint_radius=radius, height=height)


_TEMPLATES: dict[str, ObjectTemplate] = {}


def template_for(class_name: str) -> ObjectTemplate:
    if not _TEMPLATES:
        for color in ("red", "green", "blue", "yellow"):
            tpl = block_template(f"block_{color}")
            _TEMPLATES[tpl.class_name] = tpl
        for tpl in (plate_template(), bowl_template(), cup_template()):
            _TEMPLATES[tpl.class_name] = tpl
    try:
        return _TEMPLATES[class_name]
    except KeyError:
        raise InvalidSpec(f"unknown object class {class_name!r}") from None


@dataclass(frozen=True)
class ExplicitPose:
    """Base position and yaw of one object; z is the height of its base."""

    x: float
    y: float
    z: float = 0.0
    yaw: float = 0.0


@dataclass(frozen=True)
class RandomLayout:
    """Randomization recipe: stack groups scattered with XY jitter.

    Each group is a bottom-to-top tuple of object ids placed as one stack at
    a random location; groups keep a clearance of the summed footprints.
    """

    stacks: tuple[tuple[str, ...], ...]
    xy_min: tuple[float, float] = (-0.18, -0.18)
    xy_max: tuple[float, float] = (0.18, 0.18)
    clearance: float = 0.01
    align_sigma: float = 0.002
    randomize_yaw: bool = True


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to realize one scene deterministically."""

    task: str
    objects: tuple[tuple[str, str], ...]
    layout: Mapping[str, ExplicitPose] | RandomLayout
    seed: int = 0


def _place(template: ObjectTemplate, x: float, y: float, z: float, yaw: float) -> np.ndarray:
    pts = template.cloud @ rotation_about_z(yaw).T
    return pts + np.array([x, y, z])


def _validate_objects(spec: SceneSpec) -> dict[str, ObjectTemplate]:
    ids = [obj for obj, _ in spec.objects]
    if len(set(ids)) != len(ids):
        raise InvalidSpec("duplicate object ids in scene spec")
    return {obj: template_for(cls) for obj, cls in spec.objects}


def generate_scene(spec: SceneSpec) -> SegmentedCloud:
    """Realize ``spec`` into a segmented cloud; bit-reproducible per seed."""
    templates = _validate_objects(spec)
    classes = dict(spec.objects)

    if isinstance(spec.layout, RandomLayout):
        parts = _random_parts(spec, templates, classes)
    else:
        parts = []
        placed: list[tuple[float, float, float, float, float]] = []  # x, y, r, z0, z1
        for obj, _cls in spec.objects:
            pose = spec.layout.get(obj)
            if pose is None:
                raise InvalidSpec(f"no pose for object {obj!r}")
            tpl = templates[obj]
            body = (pose.x, pose.y, tpl.footprint_radius, pose.z, pose.z + tpl.height)
            for ox, oy, orad, oz0, oz1 in placed:
                xy_hit = math.hypot(pose.x - ox, pose.y - oy) < tpl.footprint_radius + orad
                z_hit = body[3] < oz1 - 1e-9 and oz0 < body[4] - 1e-9
                if xy_hit and z_hit:
                    raise InvalidSpec("explicit poses overlap")
            placed.append(body)
            parts.append((obj, classes[obj], _place(tpl, pose.x, pose.y, pose.z, pose.yaw)))
    return SegmentedCloud.build(parts)


def _random_parts(spec: SceneSpec, templates, classes):
    layout: RandomLayout = spec.layout
    in_stacks = [obj for stack in layout.stacks for obj in stack]
    if sorted(in_stacks) != sorted(obj for obj, _ in spec.objects):
        raise InvalidSpec("random layout stacks must cover every object exactly once")

    rng = np.random.default_rng(spec.seed)
    lo = np.asarray(layout.xy_min, dtype=float)
    hi = np.asarray(layout.xy_max, dtype=float)
    centers: list[tuple[float, float, float]] = []  # (x, y, reach)
    parts = []
    for stack in layout.stacks:
        reach = max(templates[obj].footprint_radius for obj in stack)
        for _attempt in range(200):
            x, y = rng.uniform(lo, hi)
            ok = all(math.hypot(x - cx, y - cy) >= reach + cr + layout.clearance
                     for cx, cy, cr in centers)
            if ok:
                break
        else:
            raise InvalidSpec("could not scatter stacks inside the workspace")
        centers.append((x, y, reach))
        z = 0.0
        for obj in stack:
            tpl = templates[obj]
            jx, jy = (rng.normal(0.0, layout.align_sigma, size=2) if z > 0.0 else (0.0, 0.0))
            yaw = rng.uniform(0.0, 2.0 * math.pi) if layout.randomize_yaw else 0.0
            parts.append((obj, classes[obj], _place(tpl, x + jx, y + jy, z, yaw)))
            z += tpl.height
    return parts


@dataclass(frozen=True)
class SupportGraph:
    """Who rests on whom. ``below`` maps each supported object to the object
    under it (or TABLE_ID); objects supported by nothing are ``floating``."""

    below: Mapping[str, str]
    floating: frozenset[str]

    @property
    def edges(self) -> frozenset[tuple[str, str]]:
        return frozenset(self.below.items())

    def directly_above(self, obj: str) -> tuple[str, ...]:
        return tuple(sorted(a for a, b in self.below.items() if b == obj))

    def load_count(self, obj: str) -> int:
        return sum(1 for b in self.below.values() if b == obj)

    def transitively_above(self, obj: str) -> tuple[str, ...]:
        out: list[str] = []
        frontier = [obj]
        while frontier:
            nxt = [a for a, b in self.below.items() if b in frontier and a not in out]
            out.extend(nxt)
            frontier = nxt
        return tuple(sorted(out))

    def supported_by(self, obj: str, root: str) -> bool:
        """True when obj rests (transitively) on root."""
        cur = obj
        for _ in range(len(self.below) + 1):
            under = self.below.get(cur)
            if under is None:
                return False
            if under == root:
                return True
            cur = under
        return False


def _xy_overlap(a_lo, a_hi, b_lo, b_hi) -> float:
    w = min(a_hi[0], b_hi[0]) - max(a_lo[0], b_lo[0])
    h = min(a_hi[1], b_hi[1]) - max(a_lo[1], b_lo[1])
    return w * h if (w > 0.0 and h > 0.0) else 0.0


def support_graph(cloud: SegmentedCloud, params: SceneParams = SceneParams()) -> SupportGraph:
    """Contact relations from geometry alone: A rests on B when their XY
    boxes overlap and A's bottom is within tolerance of B's top."""
    boxes = {obj: object_bbox(cloud, obj) for obj in cloud.ids}
    below: dict[str, str] = {}
    floating: set[str] = set()
    for obj in cloud.ids:
        lo, hi = boxes[obj]
        best: tuple[float, float, str] | None = None  # (gap, -area, id)
        for other in cloud.ids:
            if other == obj:
                continue
            olo, ohi = boxes[other]
            gap = abs(lo[2] - ohi[2])
            if gap > params.contact_tol:
                continue
            area = _xy_overlap(lo, hi, olo, ohi)
            if area <= 0.0:
                continue
            key = (gap, -area, other)
            if best is None or key < best:
                best = key
        if best is not None:
            below[obj] = best[2]
        elif abs(lo[2] - params.table_height) <= params.contact_tol:
            below[obj] = TABLE_ID
        else:
            floating.add(obj)
    return SupportGraph(below, frozenset(floating))


def _drop(cloud: SegmentedCloud, obj: str, settled: list[str], params: SceneParams) -> SegmentedCloud:
    """Settle one object vertically onto the highest support under it."""
    lo, hi = object_bbox(cloud, obj)
    landing = params.table_height
    for other in settled:
        olo, ohi = object_bbox(cloud, other)
        if ohi[2] <= lo[2] + params.contact_tol and _xy_overlap(lo, hi, olo, ohi) > 0.0:
            landing = max(landing, float(ohi[2]))
    dz = float(lo[2]) - landing
    if abs(dz) <= params.contact_tol:
        return cloud
    return transform_object(cloud, Action(obj, RigidTransform.from_translation((0.0, 0.0, -dz))))


def execute_action(cloud: SegmentedCloud, action: Action,
                   params: SceneParams = SceneParams()) -> SegmentedCloud:
    """Apply the action, then settle the scene.

    The moved object lands at its target (dropping if placed in the air).
    Objects that were resting on it keep their position only if still
    supported; otherwise they topple aside by ``params.topple_distance``
    (away from the supporter's new location) and drop until supported.
    Deterministic and pure.
    """
    cloud.index_of(action.object)
    before = support_graph(cloud, params)
    dependents = set(before.transitively_above(action.object))

    out = transform_object(cloud, action)
    moved_center = object_center3(out, action.object)
    unsettled = sorted(dependents | {action.object},
                       key=lambda o: (float(object_bbox(out, o)[0][2]), o))
    for i, obj in enumerate(unsettled):
        pending = set(unsettled[i:])
        settled = [o for o in out.ids if o not in pending]
        if obj in dependents:
            lo, hi = object_bbox(out, obj)
            supported = abs(lo[2] - params.table_height) <= params.contact_tol
            for other in settled:
                olo, ohi = object_bbox(out, other)
                if abs(lo[2] - ohi[2]) <= params.contact_tol and _xy_overlap(lo, hi, olo, ohi) > 0.0:
                    supported = True
                    break
            if not supported:
                center = object_center3(out, obj)
                direction = center[:2] - moved_center[:2]
                norm = float(np.linalg.norm(direction))
                direction = direction / norm if norm > 1e-9 else np.array([1.0, 0.0])
                shift = params.topple_distance * direction
                out = transform_object(
                    out, Action(obj, RigidTransform.from_translation((shift[0], shift[1], 0.0))))
        out = _drop(out, obj, settled, params)
    return out


def occlusion_filter(cloud: SegmentedCloud, params: SceneParams = SceneParams()) -> SegmentedCloud:
    """Optional observation filter: hide points of nested objects below the
    rim of the object containing them. At least one point is always kept."""
    keep = np.ones(len(cloud.points), dtype=bool)
    boxes = {obj: object_bbox(cloud, obj) for obj in cloud.ids}
    for obj in cloud.ids:
        lo, hi = boxes[obj]
        for other in cloud.ids:
            if other == obj:
                continue
            olo, ohi = boxes[other]
            nested = (olo[0] <= lo[0] and olo[1] <= lo[1]
                      and ohi[0] >= hi[0] and ohi[1] >= hi[1]
                      and lo[2] < ohi[2] - params.contact_tol
                      and lo[2] > olo[2] - params.contact_tol)
            if not nested:
                continue
            mask = cloud.mask(obj) & (cloud.points[:, 2] < ohi[2])
            if mask.sum() < cloud.mask(obj).sum():
                keep &= ~mask
            else:
                top = np.argmax(np.where(cloud.mask(obj), cloud.points[:, 2], -np.inf))
                mask[top] = False
                keep &= ~mask
    pts = cloud.points[keep]
    labels = cloud.labels[keep]
    return SegmentedCloud(pts, labels, cloud.ids, cloud.classes)
