"""Model deviation estimator: ground-truth labeling, label normalization,
and a distance-weighted k-NN reference estimator over transition features."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset, MismatchedObjects, UnfittedModel
from .geom import (
    Action,
    SegmentedCloud,
    chamfer_distance,
    rotation_angle,
    transform_object,
    voxel_overlap,
)
from .scene import support_graph

MDE_FEATURE_NAMES = ("load_count", "place_overlap", "move_distance", "rotation_angle")


@dataclass(frozen=True)
class MdeConfig:
    epsilon: float = 1.0
    clip_max: float = 3.2
    neighbors: int = 5
    voxel_size: float = 0.01

    def __post_init__(self):
        if self.epsilon <= 0 or self.clip_max <= 0:
            raise ValueError("epsilon and clip_max must be positive")


# per-task defaults from the deviation-estimator training setup
BLOCK_STACKING_MDE = MdeConfig(epsilon=1.0, clip_max=3.2)
TABLE_BUSSING_MDE = MdeConfig(epsilon=0.01, clip_max=5000.0)


def deviation_label(expected: SegmentedCloud, observed: SegmentedCloud,
                    initial: SegmentedCloud, epsilon: float) -> float:
    """Ground-truth deviation of one transition.

    Sum over objects of (CD(expected_i, observed_i) + eps) divided by
    (CD(expected_i, initial_i) + eps), where CD is the Chamfer distance of
    that object's points. Fully static transitions score exactly M.
    """
    for other in (observed, initial):
        if other.ids != expected.ids:
            raise MismatchedObjects("clouds disagree in object ids")
    total = 0.0
    for obj in expected.ids:
        exp_pts = expected.object_points(obj)
        obs_pts = observed.object_points(obj)
        init_pts = initial.object_points(obj)
        if len(obs_pts) != len(exp_pts) or len(init_pts) != len(exp_pts):
            raise MismatchedObjects(f"object {obj!r} changed point count across clouds")
        num = chamfer_distance(exp_pts, obs_pts) + epsilon
        den = chamfer_distance(exp_pts, init_pts) + epsilon
        total += num / den
    return total


def transition_features(cloud: SegmentedCloud, action: Action,
                        voxel_size: float = 0.01,
                        expected: SegmentedCloud | None = None) -> np.ndarray:
    """Hand-crafted features of a proposed transition: how loaded the moved
    object is, how much its target pose collides, and how far it travels."""
    if expected is None:
        expected = transform_object(cloud, action)
    graph = support_graph(cloud)
    before = cloud.object_points(action.object)
    after = expected.object_points(action.object)
    c_before = (before.min(axis=0) + before.max(axis=0)) / 2.0
    c_after = (after.min(axis=0) + after.max(axis=0)) / 2.0
    return np.array([
        float(graph.load_count(action.object)),
        voxel_overlap(expected, action.object, voxel_size),
        float(np.linalg.norm(c_after - c_before)),
        rotation_angle(action.transform.rotation),
    ])


def scale_labels(raw: np.ndarray, clip_max: float) -> tuple[np.ndarray, float, float]:
    """Clip outliers at clip_max, then min-max scale into [0, 1].

    A degenerate range (all labels equal) maps everything to 0 so an
    uninformative estimator cannot penalize any action.
    """
    clipped = np.minimum(np.asarray(raw, dtype=float), clip_max)
    lo = float(clipped.min())
    hi = float(clipped.max())
    if hi - lo < 1e-12:
        return np.zeros_like(clipped), lo, hi
    return (clipped - lo) / (hi - lo), lo, hi


@dataclass(frozen=True)
class MdeModel:
    config: MdeConfig
    feat_mean: np.ndarray = field(default_factory=lambda: np.zeros(len(MDE_FEATURE_NAMES)))
    feat_std: np.ndarray = field(default_factory=lambda: np.ones(len(MDE_FEATURE_NAMES)))
    features: np.ndarray = field(default_factory=lambda: np.zeros((0, len(MDE_FEATURE_NAMES))))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0))
    label_lo: float = 0.0
    label_hi: float = 0.0
    fitted: bool = False


def fit_mde(transitions, simulator, config: MdeConfig, seed: int = 0) -> MdeModel:
    """Label every (cloud, action) transition by simulating it, then store
    scaled labels with their features for nearest-neighbor prediction.

    ``simulator`` maps (cloud, action) to the observed next cloud. Min-max
    bounds come from these training labels only.
    """
    transitions = list(transitions)
    if not transitions:
        raise EmptyDataset("cannot fit MDE on an empty dataset")

    feats = []
    raw = []
    for cloud, action in transitions:
        expected = transform_object(cloud, action)
        observed = simulator(cloud, action)
        raw.append(deviation_label(expected, observed, cloud, config.epsilon))
        feats.append(transition_features(cloud, action, config.voxel_size, expected))
    feats = np.asarray(feats)
    scaled, lo, hi = scale_labels(np.asarray(raw), config.clip_max)

    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std[std < 1e-12] = 1.0
    return MdeModel(config, mean, std, feats, scaled, lo, hi, fitted=True)


def predict_scaled(model: MdeModel, features: np.ndarray) -> float:
    """Distance-weighted k-NN over stored transitions; exact matches dominate."""
    if model is None or not model.fitted:
        raise UnfittedModel("MDE is not fitted")
    q = (np.asarray(features) - model.feat_mean) / model.feat_std
    x = (model.features - model.feat_mean) / model.feat_std
    dist = np.linalg.norm(x - q, axis=1)
    k = min(model.config.neighbors, len(dist))
    nearest = np.argpartition(dist, k - 1)[:k]
    weights = 1.0 / (dist[nearest] + 1e-9)
    value = float(np.average(model.labels[nearest], weights=weights))
    return min(max(value, 0.0), 1.0)


def predict_deviation(model: MdeModel, cloud: SegmentedCloud, action: Action) -> float:
    """Estimated (scaled) deviation of applying ``action`` to ``cloud``."""
    if model is None or not model.fitted:
        raise UnfittedModel("MDE is not fitted")
    return predict_scaled(model, transition_features(cloud, action, model.config.voxel_size))
