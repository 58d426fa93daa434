"""Point-cloud and SE(3) primitives: segmented clouds, rigid transforms,
Chamfer distance, voxel-overlap collision measure, and RANSAC+SVD
rigid-transform estimation from corresponding point sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateInput,
    EmptyCloud,
    InvalidVoxelSize,
    UnknownObject,
)

# Reserved label for non-movable scenery points.
STATIC_ID = "__static__"
STATIC_LABEL = -1

_ORTHO_TOL = 1e-9


def rotation_about_z(angle: float) -> np.ndarray:
    """3x3 rotation matrix for a yaw of ``angle`` radians."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle(rotation: np.ndarray) -> float:
    """Angle of a rotation matrix in radians (geodesic distance to identity)."""
    tr = float(np.trace(rotation))
    return float(np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0)))


@dataclass(frozen=True)
class RigidTransform:
    """An SE(3) transform: p -> rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        tra = np.array(self.translation, dtype=float).reshape(3)
        ortho_err = float(np.abs(rot.T @ rot - np.eye(3)).max())
        if ortho_err > _ORTHO_TOL:
            raise ValueError(f"rotation is not orthonormal (error {ortho_err:.3e})")
        if abs(float(np.linalg.det(rot)) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must be proper (det = +1)")
        rot.setflags(write=False)
        tra.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_translation(offset) -> "RigidTransform":
        return RigidTransform(np.eye(3), np.asarray(offset, dtype=float))

    @staticmethod
    def about_point(rotation: np.ndarray, center, offset=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rotate about ``center`` then translate by ``offset``."""
        center = np.asarray(center, dtype=float)
        rotation = np.asarray(rotation, dtype=float)
        return RigidTransform(rotation, center - rotation @ center + np.asarray(offset, dtype=float))

    @staticmethod
    def from_matrix(matrix: np.ndarray) -> "RigidTransform":
        matrix = np.asarray(matrix, dtype=float)
        return RigidTransform(matrix[:3, :3], matrix[:3, 3])

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self.compose(other)).apply(p) == self.apply(other.apply(p))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rot_inv = self.rotation.T
        return RigidTransform(rot_inv, -rot_inv @ self.translation)


@dataclass(frozen=True)
class Action:
    """Move one object by one rigid transform."""

    object: str
    transform: RigidTransform


@dataclass(frozen=True)
class SegmentedCloud:
    """A scene observation: 3D points partitioned into labeled rigid objects.

    ``labels[i]`` indexes into ``ids`` (or is ``STATIC_LABEL`` for scenery).
    ``classes`` maps each object id to its semantic class name.
    """

    points: np.ndarray
    labels: np.ndarray
    ids: tuple[str, ...]
    classes: Mapping[str, str]

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        lab = np.array(self.labels, dtype=np.int32).reshape(-1)
        ids = tuple(self.ids)
        if pts.shape[0] != lab.shape[0]:
            raise ValueError("points and labels disagree in length")
        if len(set(ids)) != len(ids):
            raise ValueError("object ids must be unique")
        if lab.size and (lab.min() < STATIC_LABEL or lab.max() >= len(ids)):
            raise ValueError("labels reference unknown objects")
        for i, obj in enumerate(ids):
            if not np.any(lab == i):
                raise ValueError(f"object {obj!r} owns no points")
            if obj not in self.classes:
                raise ValueError(f"object {obj!r} has no class entry")
        pts.setflags(write=False)
        lab.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "classes", dict(self.classes))

    @staticmethod
    def build(parts: Sequence[tuple[str, str, np.ndarray]],
              static_points: np.ndarray | None = None) -> "SegmentedCloud":
        """Assemble a cloud from (object id, class name, points) parts."""
        ids = tuple(obj for obj, _, _ in parts)
        classes = {obj: cls for obj, cls, _ in parts}
        chunks = [np.asarray(p, dtype=float).reshape(-1, 3) for _, _, p in parts]
        labels = [np.full(len(c), i, dtype=np.int32) for i, c in enumerate(chunks)]
        if static_points is not None and len(static_points):
            chunks.append(np.asarray(static_points, dtype=float).reshape(-1, 3))
            labels.append(np.full(len(chunks[-1]), STATIC_LABEL, dtype=np.int32))
        return SegmentedCloud(np.vstack(chunks), np.concatenate(labels), ids, classes)

    @property
    def num_objects(self) -> int:
        return len(self.ids)

    def index_of(self, obj: str) -> int:
        try:
            return self.ids.index(obj)
        except ValueError:
            raise UnknownObject(f"object {obj!r} not in cloud") from None

    def mask(self, obj: str) -> np.ndarray:
        return self.labels == self.index_of(obj)

    def object_points(self, obj: str) -> np.ndarray:
        return self.points[self.mask(obj)]

    def class_of(self, obj: str) -> str:
        self.index_of(obj)
        return self.classes[obj]

    def with_points(self, points: np.ndarray) -> "SegmentedCloud":
        return SegmentedCloud(points, self.labels, self.ids, self.classes)


def transform_object(cloud: SegmentedCloud, action: Action) -> SegmentedCloud:
    """Apply ``action.transform`` to the points of ``action.object`` only."""
    mask = cloud.mask(action.object)
    points = cloud.points.copy()
    points[mask] = action.transform.apply(points[mask])
    return cloud.with_points(points)


def object_bbox(cloud: SegmentedCloud, obj: str) -> tuple[np.ndarray, np.ndarray]:
    pts = cloud.object_points(obj)
    return pts.min(axis=0), pts.max(axis=0)


def object_center(cloud: SegmentedCloud, obj: str) -> tuple[float, float]:
    """Midpoint of the object's axis-aligned bounding box in the XY plane."""
    lo, hi = object_bbox(cloud, obj)
    return float((lo[0] + hi[0]) / 2.0), float((lo[1] + hi[1]) / 2.0)


def object_center3(cloud: SegmentedCloud, obj: str) -> np.ndarray:
    """3D bounding-box midpoint; the anchor point used by placement modes."""
    lo, hi = object_bbox(cloud, obj)
    return (lo + hi) / 2.0


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean-of-squared nearest-neighbor distances between point sets."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptyCloud("chamfer_distance requires non-empty point sets")
    if a.shape[0] * b.shape[0] <= 250_000:
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())
    # exact k-d queries for big inputs; results match the dense path
    dist_ab, _ = cKDTree(b).query(a, k=1)
    dist_ba, _ = cKDTree(a).query(b, k=1)
    return float((dist_ab ** 2).mean() + (dist_ba ** 2).mean())


def voxel_indices(points: np.ndarray, voxel_size: float,
                  origin=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Integer voxel index of every point; the grid is snapped to ``origin``."""
    if voxel_size <= 0:
        raise InvalidVoxelSize(f"voxel_size must be > 0, got {voxel_size}")
    rel = (np.asarray(points, dtype=float) - np.asarray(origin, dtype=float)) / voxel_size
    return np.floor(rel).astype(np.int64)


@dataclass(frozen=True)
class VoxelGrid:
    """Sparse occupancy map: voxel index -> ids of the objects inside it."""

    voxel_size: float
    origin: tuple[float, float, float]
    occupied: Mapping[tuple[int, int, int], frozenset[str]]

    def objects_in(self, index: tuple[int, int, int]) -> frozenset[str]:
        return self.occupied.get(index, frozenset())


def voxelize(cloud: SegmentedCloud, voxel_size: float,
             origin=(0.0, 0.0, 0.0)) -> VoxelGrid:
    idx = voxel_indices(cloud.points, voxel_size, origin)
    occupied: dict[tuple[int, int, int], set[str]] = {}
    for key_row, lab in zip(idx, cloud.labels):
        obj = cloud.ids[lab] if lab != STATIC_LABEL else STATIC_ID
        occupied.setdefault(tuple(int(v) for v in key_row), set()).add(obj)
    frozen = {k: frozenset(v) for k, v in occupied.items()}
    return VoxelGrid(voxel_size, tuple(float(v) for v in origin), frozen)


def object_voxels(cloud: SegmentedCloud, obj: str, voxel_size: float) -> set[tuple[int, int, int]]:
    idx = voxel_indices(cloud.object_points(obj), voxel_size)
    return set(map(tuple, idx.tolist()))


def voxel_overlap(cloud: SegmentedCloud, moved: str, voxel_size: float) -> float:
    """Fraction of the moved object's voxels shared with any other object."""
    moved_vox = object_voxels(cloud, moved, voxel_size)
    others = cloud.points[(cloud.labels != cloud.index_of(moved)) & (cloud.labels != STATIC_LABEL)]
    if len(others) == 0:
        return 0.0
    other_vox = set(map(tuple, voxel_indices(others, voxel_size).tolist()))
    return len(moved_vox & other_vox) / len(moved_vox)


@dataclass(frozen=True)
class RansacParams:
    """Parameters for RANSAC rigid-transform estimation; the seed is mandatory."""

    iterations: int = 256
    sample_size: int = 3
    inlier_threshold: float = 1e-3
    seed: int = 0


def _kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation + translation mapping src onto dst (SVD)."""
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    h = (src - c_src).T @ (dst - c_dst)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return rot, c_dst - rot @ c_src


def _is_collinear(points: np.ndarray, rel_tol: float = 1e-9) -> bool:
    centered = points - points.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    scale = svals[0] if svals[0] > 0 else 1.0
    return svals[1] / scale < rel_tol


def estimate_rigid_transform(src: np.ndarray, dst: np.ndarray,
                             ransac: RansacParams = RansacParams()) -> RigidTransform:
    """Estimate the SE(3) transform mapping src onto dst from noisy,
    outlier-contaminated correspondences.

    Random minimal samples are scored by inlier count under the threshold;
    the winning consensus set is refined with a full SVD fit. Deterministic
    for a fixed ``ransac.seed``.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    n = src.shape[0]
    if n != dst.shape[0]:
        raise DegenerateInput("src and dst must be in correspondence")
    if n < 3:
        raise DegenerateInput("need at least 3 correspondences")

    rng = np.random.default_rng(ransac.seed)
    best_inliers: np.ndarray | None = None
    best_count = 0
    for _ in range(ransac.iterations):
        pick = rng.choice(n, size=min(ransac.sample_size, n), replace=False)
        sample = src[pick]
        if _is_collinear(sample):
            continue
        rot, tra = _kabsch(sample, dst[pick])
        resid = np.linalg.norm(src @ rot.T + tra - dst, axis=1)
        inliers = resid <= ransac.inlier_threshold
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers

    if best_inliers is None or best_count < 3 or _is_collinear(src[best_inliers]):
        raise DegenerateInput("fewer than 3 non-collinear correspondences survive")
    rot, tra = _kabsch(src[best_inliers], dst[best_inliers])
    return RigidTransform(rot, tra)
