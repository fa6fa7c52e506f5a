"""Locally rigid warping over paired key points, the rigid ICP baseline,
distance metrics and scan-waypoint transfer."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import MissingRib
from .geometry import (
    RIB_LEVELS,
    PointCloud,
    RigidTransform,
    batch_kabsch,
    hausdorff_distance,
    kabsch_fit,
    mean_nn_distance,
    nearest_indices,
)
from .resample import Correspondence, ResampledSkeleton

__all__ = [
    "Correspondence", "RegistrationReport", "Waypoint", "WAYPOINT_SCHEME",
    "warp_nonrigid", "warp_points", "icp_rigid", "evaluate", "principal_axes_alignment",
    "plan_waypoints", "transfer_waypoints",
]


@dataclass(eq=False)
class RegistrationReport:
    distances: np.ndarray
    ed_mean: float
    ed_std: float
    hausdorff: float
    runtime: float = 0.0
    method: str = ""
    history: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "method": self.method,
            "ed_mean": round(self.ed_mean, 6),
            "ed_std": round(self.ed_std, 6),
            "hausdorff": round(self.hausdorff, 6),
            "n_points": int(len(self.distances)),
        }


def evaluate(moved: PointCloud, target: PointCloud, method: str = "", runtime: float = 0.0) -> RegistrationReport:
    """ED (moved-to-target nearest distances) and symmetric Hausdorff distance."""
    stats = mean_nn_distance(moved, target)
    return RegistrationReport(
        stats.distances, stats.mean, stats.std, hausdorff_distance(moved, target),
        runtime, method,
    )


def warp_points(points: np.ndarray, corr: Correspondence, n_r: int) -> np.ndarray:
    """Move every point by the rigid fit of its ``n_r`` nearest source key points."""
    if n_r < 3:
        raise ValueError("n_r must be at least 3")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    nn = np.sort(nearest_indices(pts, corr.source, n_r), axis=1)
    groups, inverse = np.unique(nn, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    rot, trans = batch_kabsch(corr.source[groups], corr.target[groups])
    return np.einsum("nij,nj->ni", rot[inverse], pts) + trans[inverse]


def warp_nonrigid(source: PointCloud, corr: Correspondence, n_r: int = 10) -> PointCloud:
    return source.with_points(warp_points(source.points, corr, n_r))


def principal_axes_alignment(source: PointCloud, target: PointCloud) -> RigidTransform:
    """Centroid plus principal-axes pre-alignment.

    Among the four proper sign choices for the target axes, the one whose
    rotation is closest to the identity wins.
    """
    def axes(pts):
        c = pts.mean(axis=0)
        _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
        return c, vt.T

    cs, a = axes(source.points)
    ct, b = axes(target.points)
    best = None
    for signs in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
        bs = b * np.array(signs)
        rot = bs @ a.T
        if np.linalg.det(rot) < 0:
            rot = bs @ np.diag([1, 1, -1]) @ a.T
        if best is None or np.trace(rot) > np.trace(best):
            best = rot
    return RigidTransform(best, ct - best @ cs)


def icp_rigid(source: PointCloud, target: PointCloud, max_iter: int = 100, tol: float = 1e-4,
              initial: Optional[RigidTransform] = None):
    """Point-to-point ICP; returns the source-to-target transform and a report.

    Stops when the mean nearest-neighbor distance improves by less than
    ``tol`` mm or gets worse; in the latter case the previous estimate is kept.
    """
    start = time.perf_counter()
    src = source.points
    tgt = target.points
    tree = cKDTree(tgt)
    xf = initial or RigidTransform.identity()
    d, idx = tree.query(xf.apply_points(src), k=1)
    err = float(d.mean())
    history = [err]
    for _ in range(max_iter):
        cand = kabsch_fit(src, tgt[idx])
        d_new, idx_new = tree.query(cand.apply_points(src), k=1)
        err_new = float(d_new.mean())
        if err_new > err:
            break
        gain = err - err_new
        xf, err, idx = cand, err_new, idx_new
        history.append(err)
        if gain < tol:
            break
    moved = source.with_points(xf.apply_points(src))
    report = evaluate(moved, target, "icp", time.perf_counter() - start)
    report.history = history
    return xf, report


# ---------------------------------------------------------------- waypoints


@dataclass(eq=False)
class Waypoint:
    point: np.ndarray
    gap: str  # "2-3", "3-4" or "4-5"
    side: str  # "left" or "right"

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float).reshape(3)
        if self.gap not in ("2-3", "3-4", "4-5"):
            raise ValueError(f"invalid intercostal gap {self.gap!r}")
        if self.side not in ("left", "right"):
            raise ValueError(f"invalid side {self.side!r}")


# normalized position along the rib (0 = left end, 1 = right end) per gap
WAYPOINT_SCHEME = {
    (2, 3): (0.25, 0.75),
    (3, 4): (0.15, 0.35, 0.65, 0.85),
    (4, 5): (0.15, 0.35, 0.65, 0.85),
}


def _along(rib: np.ndarray, t: float) -> np.ndarray:
    f = t * (len(rib) - 1)
    k = min(int(np.floor(f)), len(rib) - 2)
    w = f - k
    return (1.0 - w) * rib[k] + w * rib[k + 1]


def plan_waypoints(skel: ResampledSkeleton, scheme=None) -> list:
    """Ten waypoints midway between neighboring ribs, on both sides of the sternum."""
    scheme = scheme or WAYPOINT_SCHEME
    for lv in RIB_LEVELS:
        if lv not in skel.ribs:
            raise MissingRib(f"rib {lv} missing")
    out = []
    for (a, b), ts in scheme.items():
        for t in ts:
            mid = 0.5 * (_along(skel.ribs[a], t) + _along(skel.ribs[b], t))
            out.append(Waypoint(mid, f"{a}-{b}", "left" if t < 0.5 else "right"))
    return out


def transfer_waypoints(wp: list, corr: Correspondence, n_r: int = 10) -> list:
    """Warp waypoints with the same per-point rule as cloud points."""
    if not wp:
        return []
    moved = warp_points(np.stack([w.point for w in wp]), corr, n_r)
    return [Waypoint(p, w.gap, w.side) for p, w in zip(moved, wp)]
