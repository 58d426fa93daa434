"""Demonstration-derived suggesters.

The object suggester scores "should this object be moved next?" per object
and normalizes the scores with a softmax. The placement suggester remembers
anchor-relative placements per (moved class, anchor class) key and samples k
diverse placements by iteratively downweighting latent mass near each draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset, NoApplicableMode, UnfittedModel, UnknownObject
from .geom import (
    Action,
    RigidTransform,
    SegmentedCloud,
    object_bbox,
    object_center3,
    rotation_about_z,
    rotation_angle,
    transform_object,
)
from .scene import SceneParams, TABLE_ID, support_graph

OBJECT_FEATURE_NAMES = ("covered_fraction", "relative_height", "load_count", "class_prior")


@dataclass(frozen=True)
class ObjectSuggesterModel:
    """Logistic scorer over per-object movability features."""

    weights: np.ndarray = field(default_factory=lambda: np.zeros(len(OBJECT_FEATURE_NAMES)))
    bias: float = 0.0
    feat_mean: np.ndarray = field(default_factory=lambda: np.zeros(len(OBJECT_FEATURE_NAMES)))
    feat_std: np.ndarray = field(default_factory=lambda: np.ones(len(OBJECT_FEATURE_NAMES)))
    class_priors: dict[str, float] = field(default_factory=dict)
    temperature: float = 1.0
    fitted: bool = False


def _covered_fraction(cloud: SegmentedCloud, obj: str) -> float:
    """Fraction of the object's points lying under another object's footprint."""
    pts = cloud.object_points(obj)
    covered = np.zeros(len(pts), dtype=bool)
    for other in cloud.ids:
        if other == obj:
            continue
        lo, hi = object_bbox(cloud, other)
        inside = ((pts[:, 0] >= lo[0]) & (pts[:, 0] <= hi[0])
                  & (pts[:, 1] >= lo[1]) & (pts[:, 1] <= hi[1])
                  & (pts[:, 2] < hi[2] - 1e-9))
        covered |= inside
    return float(covered.mean())


def object_features(cloud: SegmentedCloud, obj: str, priors: dict[str, float],
                    graph=None) -> np.ndarray:
    if graph is None:
        graph = support_graph(cloud)
    scene_top = max(float(object_bbox(cloud, o)[1][2]) for o in cloud.ids)
    mean_z = float(cloud.object_points(obj)[:, 2].mean())
    prior = priors.get(cloud.classes[obj], 1.0 / max(len(priors), 1))
    return np.array([
        _covered_fraction(cloud, obj),
        mean_z / scene_top if scene_top > 0 else 0.0,
        float(graph.load_count(obj)),
        prior,
    ])


def fit_object_suggester(dataset, seed: int = 0,
                         iterations: int = 400, lr: float = 0.5,
                         l2: float = 1e-4) -> ObjectSuggesterModel:
    """Fit the movability scorer with full-batch logistic regression.

    Each transition yields one positive query (the moved object) and one
    negative per other object. Examples are canonically sorted before the
    gradient loop, so the fit is invariant to dataset shuffling.
    """
    records = list(dataset.records) if hasattr(dataset, "records") else list(dataset)
    if not records:
        raise EmptyDataset("cannot fit object suggester on an empty dataset")

    counts: dict[str, int] = {}
    for rec in records:
        cls = rec.observation.classes[rec.action.object]
        counts[cls] = counts.get(cls, 0) + 1
    total = sum(counts.values())
    priors = {cls: c / total for cls, c in counts.items()}

    rows: list[tuple[float, tuple[float, ...]]] = []
    for rec in records:
        graph = support_graph(rec.observation)
        for obj in rec.observation.ids:
            feats = object_features(rec.observation, obj, priors, graph)
            rows.append((1.0 if obj == rec.action.object else 0.0, tuple(feats)))
    rows.sort()
    labels = np.array([lab for lab, _ in rows])
    feats = np.array([f for _, f in rows])

    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std[std < 1e-12] = 1.0
    x = (feats - mean) / std

    w = np.zeros(x.shape[1])
    b = 0.0
    n = len(labels)
    for _ in range(iterations):
        p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
        grad_w = x.T @ (p - labels) / n + l2 * w
        grad_b = float((p - labels).mean())
        w -= lr * grad_w
        b -= lr * grad_b
    return ObjectSuggesterModel(w, b, mean, std, priors, temperature=1.0, fitted=True)


def suggest_objects(model: ObjectSuggesterModel, cloud: SegmentedCloud) -> dict[str, float]:
    """Probability that each object should be moved next (softmax over scores)."""
    if model is None or not model.fitted:
        raise UnfittedModel("object suggester is not fitted")
    graph = support_graph(cloud)
    scores = []
    for obj in cloud.ids:
        feats = (object_features(cloud, obj, model.class_priors, graph) - model.feat_mean) / model.feat_std
        scores.append(float(feats @ model.weights) + model.bias)
    scores = np.asarray(scores) / model.temperature
    scores -= scores.max()
    probs = np.exp(scores)
    probs /= probs.sum()
    return {obj: float(p) for obj, p in zip(cloud.ids, probs)}


@dataclass(frozen=True)
class PlacementMode:
    """One remembered relative placement: put a ``moved_class`` object at
    ``offset`` from the anchor's bounding-box center (world frame when the
    anchor is the table)."""

    moved_class: str
    anchor_class: str
    offset: tuple[float, float, float]
    rotation: tuple[float, ...]  # row-major 3x3
    count: int
    weight: float


@dataclass(frozen=True)
class PlacementSuggesterModel:
    modes: tuple[PlacementMode, ...] = ()
    jitter_xy_sigma: float = 0.005
    jitter_yaw_sigma: float = math.radians(3.0)
    table_anchor_radius: float = 0.07
    merge_radius: float = 0.02
    fitted: bool = False


@dataclass(frozen=True)
class LatentCandidate:
    """A candidate placement target: latent position z plus probability mass."""

    position: np.ndarray
    rotation: np.ndarray
    anchor: str
    probability: float


def fit_placement_suggester(dataset, seed: int = 0,
                            table_anchor_radius: float = 0.07,
                            merge_radius: float = 0.02) -> PlacementSuggesterModel:
    """Store anchor-relative placements from every transition.

    The anchor is the object whose center is nearest (in XY) to the moved
    object's post-action center, or the table when nothing is close enough.
    Placements within ``merge_radius`` of an existing mode merge into it;
    weights count occurrences, normalized per moved class.
    """
    records = list(dataset.records) if hasattr(dataset, "records") else list(dataset)
    if not records:
        raise EmptyDataset("cannot fit placement suggester on an empty dataset")

    raw: list[dict] = []
    for rec in records:
        cloud = rec.observation
        moved = rec.action.object
        moved_class = cloud.classes[moved]
        after = rec.action.transform.apply(cloud.object_points(moved))
        c_after = (after.min(axis=0) + after.max(axis=0)) / 2.0

        anchor_id = TABLE_ID
        anchor_class = TABLE_ID
        best = table_anchor_radius
        for other in cloud.ids:
            if other == moved:
                continue
            c_other = object_center3(cloud, other)
            dist = math.hypot(c_after[0] - c_other[0], c_after[1] - c_other[1])
            if dist < best:
                best = dist
                anchor_id = other
                anchor_class = cloud.classes[other]
        if anchor_id == TABLE_ID:
            offset = c_after
        else:
            offset = c_after - object_center3(cloud, anchor_id)
        raw.append({
            "moved": moved_class,
            "anchor": anchor_class,
            "offset": offset,
            "rotation": rec.action.transform.rotation,
        })

    clusters: list[dict] = []
    for item in raw:
        placed = False
        for cl in clusters:
            if cl["moved"] != item["moved"] or cl["anchor"] != item["anchor"]:
                continue
            same_spot = float(np.linalg.norm(cl["offset"] - item["offset"])) <= merge_radius
            same_rot = rotation_angle(cl["rotation"].T @ item["rotation"]) <= math.radians(10.0)
            if same_spot and same_rot:
                cl["count"] += 1
                placed = True
                break
        if not placed:
            clusters.append({**item, "count": 1})

    totals: dict[str, int] = {}
    for cl in clusters:
        totals[cl["moved"]] = totals.get(cl["moved"], 0) + cl["count"]
    modes = tuple(
        PlacementMode(
            moved_class=cl["moved"],
            anchor_class=cl["anchor"],
            offset=tuple(float(v) for v in cl["offset"]),
            rotation=tuple(float(v) for v in np.asarray(cl["rotation"]).ravel()),
            count=cl["count"],
            weight=cl["count"] / totals[cl["moved"]],
        )
        for cl in clusters
    )
    return PlacementSuggesterModel(modes, table_anchor_radius=table_anchor_radius,
                                   merge_radius=merge_radius, fitted=True)


def _settle_target(cloud: SegmentedCloud, obj: str, pos: np.ndarray,
                   tol: float = 0.005) -> np.ndarray:
    """Context-aware instantiation: when the target column is already
    occupied above the intended base, the placement rises to the occupant's
    top, the way a demonstrated placement would land on the current stack."""
    pts = cloud.object_points(obj)
    half = (pts.max(axis=0) - pts.min(axis=0)) / 2.0
    lo_xy = pos[:2] - half[:2]
    hi_xy = pos[:2] + half[:2]
    base = pos[2] - half[2]
    top_needed = base
    for other in cloud.ids:
        if other == obj:
            continue
        olo, ohi = object_bbox(cloud, other)
        if (min(hi_xy[0], ohi[0]) - max(lo_xy[0], olo[0]) > 0.0
                and min(hi_xy[1], ohi[1]) - max(lo_xy[1], olo[1]) > 0.0
                and ohi[2] > base + tol):
            top_needed = max(top_needed, float(ohi[2]))
    if top_needed > base:
        return np.array([pos[0], pos[1], top_needed + half[2]])
    return pos


def placement_candidates(model: PlacementSuggesterModel, cloud: SegmentedCloud,
                         obj: str) -> list[LatentCandidate]:
    """Instantiate every stored mode against every matching anchor in the
    scene. Candidates at identical positions merge; masses normalize to 1."""
    if model is None or not model.fitted:
        raise UnfittedModel("placement suggester is not fitted")
    moved_class = cloud.class_of(obj)

    raw: list[tuple[np.ndarray, np.ndarray, str, float]] = []
    for mode in model.modes:
        if mode.moved_class != moved_class:
            continue
        rot = np.asarray(mode.rotation).reshape(3, 3)
        offset = np.asarray(mode.offset)
        if mode.anchor_class == TABLE_ID:
            raw.append((_settle_target(cloud, obj, offset), rot, TABLE_ID, mode.weight))
            continue
        for other in cloud.ids:
            if other == obj or cloud.classes[other] != mode.anchor_class:
                continue
            pos = _settle_target(cloud, obj, object_center3(cloud, other) + offset)
            raw.append((pos, rot, other, mode.weight))
    if not raw:
        raise NoApplicableMode(
            f"no placement mode for class {moved_class!r} matches this scene")

    merged: list[tuple[np.ndarray, np.ndarray, str, float]] = []
    for pos, rot, anchor, mass in raw:
        for i, (mpos, mrot, manchor, mmass) in enumerate(merged):
            if np.array_equal(pos, mpos):
                merged[i] = (mpos, mrot, manchor, mmass + mass)
                break
        else:
            merged.append((pos, rot, anchor, mass))
    total = sum(m for _, _, _, m in merged)
    return [LatentCandidate(pos, rot, anchor, mass / total)
            for pos, rot, anchor, mass in merged]


def suggest_placements(model: PlacementSuggesterModel, cloud: SegmentedCloud,
                       obj: str, k: int, seed: int = 0
                       ) -> list[tuple[RigidTransform, float]]:
    """Sample k placements for ``obj``, rescoring the candidate distribution
    after every draw by the squared distance to the drawn latent position
    (normalized by its maximum), which zeroes the drawn candidate and pushes
    subsequent samples apart. Returns (world transform, probability at draw
    time) pairs; kernel jitter perturbs the realized pose, not the latent."""
    candidates = placement_candidates(model, cloud, obj)
    positions = np.array([c.position for c in candidates])
    base = np.array([c.probability for c in candidates])
    current = cloud.object_points(obj)
    c_now = (current.min(axis=0) + current.max(axis=0)) / 2.0

    rng = np.random.default_rng(seed)
    probs = base.copy()
    out: list[tuple[RigidTransform, float]] = []
    for _ in range(max(int(k), 1)):
        total = probs.sum()
        if total <= 0.0:
            probs = base.copy()  # round exhausted; start over
            total = probs.sum()
        probs = probs / total
        j = int(rng.choice(len(candidates), p=probs))
        drawn_prob = float(probs[j])

        yaw = float(rng.normal(0.0, model.jitter_yaw_sigma))
        jx, jy = rng.normal(0.0, model.jitter_xy_sigma, size=2)
        rot = rotation_about_z(yaw) @ candidates[j].rotation
        target = positions[j] + np.array([jx, jy, 0.0])
        transform = RigidTransform(rot, target - rot @ c_now)
        out.append((transform, drawn_prob))

        dist2 = ((positions - positions[j]) ** 2).sum(axis=1)
        peak = dist2.max()
        probs = probs * (dist2 / peak) if peak > 0.0 else np.zeros_like(probs)
    return out


@dataclass(frozen=True)
class SuggesterMetrics:
    object_accuracy: float
    mean_translation_error: float
    mean_rotation_error_deg: float
    transitions: int


def evaluate_suggesters(obj_model: ObjectSuggesterModel,
                        plc_model: PlacementSuggesterModel,
                        heldout, samples: int = 10, seed: int = 0) -> SuggesterMetrics:
    """Object-suggester accuracy (ground-truth object scored at least as high
    as uniform) and winner-takes-all placement errors over sampled batches."""
    records = list(heldout.records) if hasattr(heldout, "records") else list(heldout)
    if not records:
        raise EmptyDataset("cannot evaluate suggesters on an empty dataset")

    hits = 0
    t_errors: list[float] = []
    r_errors: list[float] = []
    for i, rec in enumerate(records):
        cloud = rec.observation
        probs = suggest_objects(obj_model, cloud)
        if probs[rec.action.object] >= 1.0 / cloud.num_objects - 1e-12:
            hits += 1
        try:
            proposals = suggest_placements(plc_model, cloud, rec.action.object,
                                           samples, seed=seed + i)
        except NoApplicableMode:
            continue
        pts = cloud.object_points(rec.action.object)
        center = (pts.min(axis=0) + pts.max(axis=0)) / 2.0
        truth = rec.action.transform
        t_best = min(float(np.linalg.norm(t.apply(center) - truth.apply(center)))
                     for t, _ in proposals)
        r_best = min(rotation_angle(t.rotation.T @ truth.rotation) for t, _ in proposals)
        t_errors.append(t_best)
        r_errors.append(math.degrees(r_best))

    return SuggesterMetrics(
        object_accuracy=hits / len(records),
        mean_translation_error=float(np.mean(t_errors)) if t_errors else float("nan"),
        mean_rotation_error_deg=float(np.mean(r_errors)) if r_errors else float("nan"),
        transitions=len(records),
    )
