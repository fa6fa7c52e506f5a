"""Core 3D types, rigid-transform algebra, neighbor queries and distance metrics.

All coordinates are in millimeters.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateConfiguration,
    EmptyCloud,
    KTooLarge,
    SizeMismatch,
    TargetTooLarge,
)

UNKNOWN = 0
STERNUM = 1
RIB_LEVELS = (2, 3, 4, 5)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered array of 3D points with an optional integer label per point.

    Labels: 2-5 rib level, 1 sternum, 0 unknown.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=int).reshape(-1)
            if lab.shape[0] != pts.shape[0]:
                raise SizeMismatch(
                    f"{lab.shape[0]} labels for {pts.shape[0]} points"
                )
            object.__setattr__(self, "labels", lab)

    def __len__(self):
        return self.points.shape[0]

    def with_points(self, points) -> "PointCloud":
        """Same labels, new coordinates."""
        return PointCloud(points, self.labels)

    def subset(self, index) -> "PointCloud":
        index = np.asarray(index)
        labels = None if self.labels is None else self.labels[index]
        return PointCloud(self.points[index], labels)

    def unlabeled(self) -> "PointCloud":
        return PointCloud(self.points)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        trans = np.array(self.translation, dtype=float).reshape(3)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9) or abs(
            np.linalg.det(rot) - 1.0
        ) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        m = np.asarray(matrix, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


def rotation_about_axis(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = np.array(
        [[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]]
    )
    return np.eye(3) + np.sin(angle_rad) * k + (1.0 - np.cos(angle_rad)) * (k @ k)


def apply_transform(t: RigidTransform, c: PointCloud) -> PointCloud:
    return c.with_points(t.apply_points(c.points))


def _as_points(c) -> np.ndarray:
    if isinstance(c, PointCloud):
        return c.points
    return np.asarray(c, dtype=float).reshape(-1, 3)


def kabsch_fit(source, target) -> RigidTransform:
    """Least-squares rigid transform mapping paired ``source`` points onto ``target``.

    Points are paired by index. The reflection solution is rejected by
    flipping the direction of the smallest singular value.
    """
    src = _as_points(source)
    dst = _as_points(target)
    if src.shape != dst.shape:
        raise SizeMismatch(f"{len(src)} source points vs {len(dst)} target points")
    if len(src) < 3:
        raise DegenerateConfiguration("at least 3 paired points are required")
    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    h = (src - src_c).T @ (dst - dst_c)
    return _kabsch_from_covariance(h, src_c, dst_c)


def _kabsch_from_covariance(h, src_c, dst_c) -> RigidTransform:
    u, s, vt = np.linalg.svd(h)
    if s[0] <= 0.0 or s[1] <= 1e-12 * s[0]:
        raise DegenerateConfiguration(
            f"covariance rank < 2 (singular values {s[0]:.3g}, {s[1]:.3g})"
        )
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, dst_c - rot @ src_c)


def batch_kabsch(src: np.ndarray, dst: np.ndarray):
    """Vectorized Kabsch over a batch of paired sets, shapes (b, k, 3).

    Returns rotations (b, 3, 3) and translations (b, 3).
    """
    src_c = src.mean(axis=1)
    dst_c = dst.mean(axis=1)
    h = np.einsum("bki,bkj->bij", src - src_c[:, None], dst - dst_c[:, None])
    u, s, vt = np.linalg.svd(h)
    bad = (s[:, 0] <= 0.0) | (s[:, 1] <= 1e-12 * s[:, 0])
    if np.any(bad):
        raise DegenerateConfiguration(
            f"{int(bad.sum())} local key-point subsets have covariance rank < 2"
        )
    v = np.swapaxes(vt, 1, 2)
    ut = np.swapaxes(u, 1, 2)
    d = np.sign(np.linalg.det(v @ ut))
    d[d == 0] = 1.0
    diag = np.zeros((len(src), 3, 3))
    diag[:, 0, 0] = 1.0
    diag[:, 1, 1] = 1.0
    diag[:, 2, 2] = d
    rot = v @ diag @ ut
    trans = dst_c - np.einsum("bij,bj->bi", rot, src_c)
    return rot, trans


def _distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))


def nearest_neighbors(query, reference, k: int) -> list[tuple[int, float]]:
    """The ``k`` closest reference points, ascending; ties go to the lower index."""
    ref = _as_points(reference)
    if k > len(ref):
        raise KTooLarge(f"k={k} exceeds reference size {len(ref)}")
    q = np.asarray(query, dtype=float).reshape(1, 3)
    d = _distance_matrix(q, ref)[0]
    order = np.argsort(d, kind="stable")[:k]
    return [(int(i), float(d[i])) for i in order]


def nearest_indices(queries: np.ndarray, reference: np.ndarray, k: int) -> np.ndarray:
    """Row-wise version of :func:`nearest_neighbors` returning indices only."""
    if k > len(reference):
        raise KTooLarge(f"k={k} exceeds reference size {len(reference)}")
    d = _distance_matrix(queries, reference)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


class NNStats(NamedTuple):
    mean: float
    std: float
    distances: np.ndarray


def _check_nonempty(*clouds):
    for c in clouds:
        if len(_as_points(c)) == 0:
            raise EmptyCloud("point cloud is empty")


def nn_distances(moved, target) -> np.ndarray:
    """Distance from every moved point to its closest target point."""
    _check_nonempty(moved, target)
    d, _ = cKDTree(_as_points(target)).query(_as_points(moved), k=1)
    return np.asarray(d, dtype=float)


def mean_nn_distance(moved, target) -> NNStats:
    d = nn_distances(moved, target)
    return NNStats(float(d.mean()), float(d.std()), d)


def hausdorff_distance(a, b) -> float:
    _check_nonempty(a, b)
    return float(max(nn_distances(a, b).max(), nn_distances(b, a).max()))


def ideal_spacing(points: np.ndarray, count: int) -> float:
    """Uniform spacing for ``count`` points filling the bounding box.

    Collapsed bounding-box axes are dropped, so a segment uses its length
    and a flat patch its area.
    """
    extent = points.max(axis=0) - points.min(axis=0)
    scale = extent.max()
    if scale == 0.0:
        return 0.0
    live = extent[extent > 1e-9 * scale]
    return float((np.prod(live) / count) ** (1.0 / len(live)))


def downsample(c: PointCloud, target_count: int, seed: int = 0) -> PointCloud:
    """Poisson-disc subset of ``c`` by greedy dart throwing.

    The radius starts at the ideal uniform spacing and is relaxed by 0.9 per
    round until ``target_count`` points are accepted.
    """
    n = len(c)
    if target_count > n:
        raise TargetTooLarge(f"target {target_count} exceeds cloud size {n}")
    if target_count < 1:
        raise TargetTooLarge("target count must be at least 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    if target_count == n:
        return c.subset(order)
    pts = c.points
    tree = cKDTree(pts)
    radius = ideal_spacing(pts, target_count)
    floor = 1e-9 * float(np.ptp(pts, axis=0).max())
    accepted: list[int] = []
    taken = np.zeros(n, dtype=bool)
    # blocked[i]: point i lies within the current radius of an accepted point
    while True:
        if radius <= floor:
            # only duplicates remain; fill in shuffled order
            rest = [int(i) for i in order if not taken[i]]
            accepted.extend(rest[: target_count - len(accepted)])
            return c.subset(np.array(accepted))
        blocked = np.zeros(n, dtype=bool)
        if accepted:
            for nbrs in tree.query_ball_point(pts[accepted], r=radius):
                blocked[nbrs] = True
        for i in order:
            if taken[i] or blocked[i]:
                continue
            accepted.append(int(i))
            taken[i] = True
            if len(accepted) == target_count:
                return c.subset(np.array(accepted))
            nbrs = tree.query_ball_point(pts[i], r=radius)
            blocked[nbrs] = True
        radius *= 0.9
