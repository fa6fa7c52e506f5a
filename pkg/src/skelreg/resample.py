"""Cubic fits of rib paths and uniform resampling into paired key points."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CountMismatch, IllConditioned, MissingRib, TooFewPoints
from .geometry import RIB_LEVELS, _as_points

DEGREE = 3


@dataclass(eq=False)
class RibCurve:
    """Rib centerline ``origin + u*axis + f_y(u)*e_y + f_z(u)*e_z``.

    ``coef_y`` and ``coef_z`` are polynomial coefficients in ascending
    powers of the local abscissa ``u`` (mm).
    """

    level: int
    axis: np.ndarray
    e_y: np.ndarray
    e_z: np.ndarray
    origin: np.ndarray
    coef_y: np.ndarray
    coef_z: np.ndarray
    u_min: float
    u_max: float

    def evaluate(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        y = np.polynomial.polynomial.polyval(u, self.coef_y)
        z = np.polynomial.polynomial.polyval(u, self.coef_z)
        return (self.origin + u[:, None] * self.axis + y[:, None] * self.e_y
                + z[:, None] * self.e_z)


@dataclass(eq=False)
class ResampledSkeleton:
    ribs: dict  # level -> (N_i, 3) array, ordered left to right

    @property
    def counts(self) -> dict:
        return {lv: len(p) for lv, p in self.ribs.items()}

    def stacked(self):
        """All points plus matching (level, index) rows, levels ascending."""
        pts, tags = [], []
        for lv in sorted(self.ribs):
            pts.append(self.ribs[lv])
            tags.extend((lv, k) for k in range(len(self.ribs[lv])))
        return np.concatenate(pts), np.array(tags, dtype=int)


def local_frame(axis) -> tuple:
    """Right-handed (axis, e_y, e_z) with e_z = axis x Y when possible."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    e_z = np.cross(a, [0.0, 1.0, 0.0])
    if np.linalg.norm(e_z) < 1e-6:
        e_z = np.cross(a, [1.0, 0.0, 0.0])
    e_z /= np.linalg.norm(e_z)
    e_y = np.cross(e_z, a)
    return a, e_y, e_z


def fit_rib_curve(path, rib_level: int, axis=None, origin=None) -> RibCurve:
    """Least-squares cubic fit of the transverse coordinates against the abscissa.

    The abscissa defaults to the path's first principal axis, oriented from
    the first path point toward the last, through the path centroid.
    """
    pts = _as_points(path)
    if len(pts) < DEGREE + 2:
        raise TooFewPoints(f"rib {rib_level}: {len(pts)} points, need {DEGREE + 2}")
    origin = pts.mean(axis=0) if origin is None else np.asarray(origin, dtype=float)
    if axis is None:
        _, _, vt = np.linalg.svd(pts - pts.mean(axis=0), full_matrices=False)
        axis = vt[0]
        if (pts[-1] - pts[0]) @ axis < 0:
            axis = -axis
    a, e_y, e_z = local_frame(axis)
    rel = pts - origin
    u = rel @ a
    u_min, u_max = float(u.min()), float(u.max())
    if u_max - u_min < 1.0:
        raise IllConditioned(f"rib {rib_level}: abscissa spread {u_max - u_min:.3g} mm")
    # fit on u scaled to [-1, 1], then convert back to powers of u
    mid, half = 0.5 * (u_max + u_min), 0.5 * (u_max - u_min)
    x = (u - mid) / half
    vander = np.vander(x, DEGREE + 1, increasing=True)
    col = np.linalg.norm(vander, axis=0)
    vs = vander / col
    rhs = np.stack([rel @ e_y, rel @ e_z], axis=1)
    coef = np.linalg.solve(vs.T @ vs, vs.T @ rhs) / col[:, None]
    return RibCurve(rib_level, a, e_y, e_z, origin,
                    _unscale(coef[:, 0], mid, half), _unscale(coef[:, 1], mid, half),
                    u_min, u_max)


def _unscale(c, mid, half):
    """Coefficients in x = (u - mid)/half  ->  coefficients in u."""
    poly = np.polynomial.Polynomial(c)
    lin = np.polynomial.Polynomial([-mid / half, 1.0 / half])
    out = poly(lin).coef
    return np.pad(out, (0, DEGREE + 1 - len(out)))


def resample_curve(curve: RibCurve, n: int) -> np.ndarray:
    """``n`` points at equal abscissa steps over the fitted range."""
    if n < 2:
        raise ValueError("need at least 2 samples")
    return curve.evaluate(np.linspace(curve.u_min, curve.u_max, n))


def resample_skeleton(paths: dict, counts: dict, axis=None) -> ResampledSkeleton:
    """Fit and resample every rib; ``paths`` maps level -> ordered points."""
    ribs = {}
    for lv in RIB_LEVELS:
        if lv not in paths:
            raise MissingRib(f"rib {lv} missing")
        curve = fit_rib_curve(paths[lv], lv, axis=axis)
        ribs[lv] = resample_curve(curve, counts[lv])
    return ResampledSkeleton(ribs)


@dataclass(eq=False)
class Correspondence:
    """Paired key points; row k of ``source`` matches row k of ``target``.

    ``tags`` holds (rib level, index along rib) per row.
    """

    source: np.ndarray
    target: np.ndarray
    tags: np.ndarray

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=float).reshape(-1, 3)
        self.target = np.asarray(self.target, dtype=float).reshape(-1, 3)
        self.tags = np.asarray(self.tags, dtype=int).reshape(-1, 2)
        if not len(self.source) == len(self.target) == len(self.tags):
            raise CountMismatch("correspondence arrays differ in length")

    def __len__(self):
        return len(self.source)


def build_correspondence(source: ResampledSkeleton, target: ResampledSkeleton) -> Correspondence:
    if source.counts != target.counts:
        raise CountMismatch(f"{source.counts} vs {target.counts}")
    src, tags = source.stacked()
    dst, _ = target.stacked()
    return Correspondence(src, dst, tags)
