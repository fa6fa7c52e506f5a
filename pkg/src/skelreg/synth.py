"""Synthetic rib-cartilage clouds with known geometry and a known smooth deformation.

Coordinates: x runs left to right, y points up (rib 2 on top), z points
anteriorly. Rib centerlines are parabolic arcs in the x-y plane whose
lateral ends sag downward, lifted out of plane by a cubic profile in z.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import InvalidSpec
from .geometry import RIB_LEVELS, STERNUM, PointCloud, rotation_about_axis


@dataclass(frozen=True)
class RibSpec:
    span: float  # mm, left end to right end along x
    sag: float  # mm, drop of the lateral ends below the midline height
    offset: float  # mm, height (y) where the rib crosses the midline
    depth: float = 20.0  # mm, posterior bend of the lateral ends
    twist: float = 2.0  # mm, cubic z term; breaks left/right symmetry

    def centerline(self, xi: np.ndarray) -> np.ndarray:
        """Point at normalized lateral position ``xi`` in [-1, 1]."""
        xi = np.asarray(xi, dtype=float)
        return np.stack([
            0.5 * self.span * xi,
            self.offset - self.sag * xi**2,
            -self.depth * xi**2 + self.twist * xi**3,
        ], axis=-1)

    def arc_length(self, samples: int = 2001):
        """Cumulative arc length over a uniform ``xi`` grid on [-1, 1]."""
        xi = np.linspace(-1.0, 1.0, samples)
        seg = np.linalg.norm(np.diff(self.centerline(xi), axis=0), axis=1)
        return xi, np.concatenate([[0.0], np.cumsum(seg)])

    def tangent(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        t = np.stack([
            np.full_like(xi, 0.5 * self.span),
            -2.0 * self.sag * xi,
            -2.0 * self.depth * xi + 3.0 * self.twist * xi**2,
        ], axis=-1)
        return t / np.linalg.norm(t, axis=-1, keepdims=True)


DEFAULT_RIBS = (
    RibSpec(span=100.0, sag=10.0, offset=0.0),
    RibSpec(span=120.0, sag=12.0, offset=-25.0),
    RibSpec(span=134.0, sag=14.0, offset=-50.0),
    RibSpec(span=144.0, sag=16.0, offset=-75.0),
)


@dataclass(frozen=True)
class CageSpec:
    ribs: tuple = DEFAULT_RIBS  # levels 2, 3, 4, 5 top to bottom
    sternum_width: float = 24.0
    sternum_margin: float = 10.0  # mm beyond ribs 2 and 5 at the midline
    tube_radius: float = 2.0
    points_per_rib: int = 300  # mean count; ribs share the total in proportion to length
    sternum_points: int = 150
    noise: float = 0.5
    seed: int = 0

    def validate(self):
        if len(self.ribs) != len(RIB_LEVELS):
            raise InvalidSpec(f"expected {len(RIB_LEVELS)} ribs, got {len(self.ribs)}")
        for lv, rib in zip(RIB_LEVELS, self.ribs):
            if not rib.span > 0:
                raise InvalidSpec(f"rib {lv}: span must be positive")
        offsets = [r.offset for r in self.ribs]
        if any(b >= a for a, b in zip(offsets, offsets[1:])):
            raise InvalidSpec("rib offsets must decrease strictly from rib 2 to rib 5")
        if self.noise < 0 or self.tube_radius < 0 or self.sternum_width < 0:
            raise InvalidSpec("noise, tube radius and sternum width must be >= 0")
        if self.points_per_rib < 1 or self.sternum_points < 0:
            raise InvalidSpec("point counts must be positive")


class CageTruth(NamedTuple):
    centerlines: dict  # level -> (M, 3)
    endpoints: dict  # level -> (2, 3), rows [left, right]


def generate_cage(spec: CageSpec = CageSpec(), samples: int = 200):
    """Labeled cloud of four rib bands plus the sternum, and its ground truth."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    pts, labels = [], []
    centerlines, endpoints = {}, {}
    tables = [rib.arc_length() for rib in spec.ribs]
    lengths = np.array([t[1][-1] for t in tables])
    counts = np.maximum(1, np.round(spec.points_per_rib * len(lengths) * lengths / lengths.sum())).astype(int)
    for lv, rib, (grid, arc), count in zip(RIB_LEVELS, spec.ribs, tables, counts):
        # uniform in arc length, so every rib has the same linear density
        xi = np.interp(rng.uniform(0.0, arc[-1], count), arc, grid)
        base = rib.centerline(xi)
        tan = rib.tangent(xi)
        n1 = np.cross(tan, [0.0, 0.0, 1.0])
        n1 /= np.linalg.norm(n1, axis=1, keepdims=True)
        n2 = np.cross(tan, n1)
        r = spec.tube_radius * np.sqrt(rng.uniform(0.0, 1.0, len(xi)))
        phi = rng.uniform(0.0, 2.0 * math.pi, len(xi))
        scatter = r[:, None] * (np.cos(phi)[:, None] * n1 + np.sin(phi)[:, None] * n2)
        pts.append(base + scatter)
        labels.append(np.full(len(xi), lv))
        centerlines[lv] = rib.centerline(np.linspace(-1.0, 1.0, samples))
        endpoints[lv] = rib.centerline(np.array([-1.0, 1.0]))
    if spec.sternum_points:
        top = spec.ribs[0].offset + spec.sternum_margin
        bottom = spec.ribs[-1].offset - spec.sternum_margin
        n = spec.sternum_points
        st = np.stack([
            rng.uniform(-0.5, 0.5, n) * spec.sternum_width,
            rng.uniform(bottom, top, n),
            rng.uniform(-1.0, 1.0, n) * spec.tube_radius,
        ], axis=1)
        pts.append(st)
        labels.append(np.full(n, STERNUM))
    pts = np.concatenate(pts)
    if spec.noise > 0:
        pts = pts + rng.normal(0.0, spec.noise, pts.shape)
    return PointCloud(pts, np.concatenate(labels)), CageTruth(centerlines, endpoints)


# ---------------------------------------------------------------- deformation


@dataclass(frozen=True)
class DeformationSpec:
    """Scale about a center, then a sinusoidal bend in z, then a rigid offset.

    ``phase`` and ``direction`` (degrees, in the x-y plane) of the bend are
    drawn from ``seed`` when left as None.
    """

    scale: tuple = (1.0, 1.0, 1.0)
    amplitude: float = 0.0
    wavelength: float = 300.0
    phase: Optional[float] = None
    direction: Optional[float] = None
    rotation_deg: tuple = (0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)
    seed: int = 0

    def validate(self):
        if len(self.scale) != 3 or any(not 0.8 <= s <= 1.25 for s in self.scale):
            raise InvalidSpec("scale factors must lie in [0.8, 1.25]")
        if not 0.0 <= self.amplitude <= 15.0:
            raise InvalidSpec("bend amplitude must lie in [0, 15] mm")
        if not self.wavelength > 0:
            raise InvalidSpec("wavelength must be positive")
        if len(self.rotation_deg) != 3 or len(self.translation) != 3:
            raise InvalidSpec("rotation and translation need 3 components")


@dataclass(eq=False)
class Deformation:
    """The exact forward map and its analytic inverse."""

    spec: DeformationSpec
    center: np.ndarray
    phase: float
    direction: float
    rotation: np.ndarray = field(init=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        rx, ry, rz = (math.radians(a) for a in self.spec.rotation_deg)
        self.rotation = (rotation_about_axis([0, 0, 1], rz)
                         @ rotation_about_axis([0, 1, 0], ry)
                         @ rotation_about_axis([1, 0, 0], rx))

    def _bend(self, rel):
        a = math.radians(self.direction)
        s = rel[:, 0] * math.cos(a) + rel[:, 1] * math.sin(a)
        return self.spec.amplitude * np.sin(2.0 * math.pi * s / self.spec.wavelength + self.phase)

    def apply(self, points) -> np.ndarray:
        rel = (np.asarray(points, dtype=float).reshape(-1, 3) - self.center) * np.asarray(self.spec.scale)
        rel[:, 2] += self._bend(rel)
        return rel @ self.rotation.T + self.center + np.asarray(self.spec.translation)

    def inverse(self, points) -> np.ndarray:
        rel = (np.asarray(points, dtype=float).reshape(-1, 3) - self.center
               - np.asarray(self.spec.translation)) @ self.rotation
        rel[:, 2] -= self._bend(rel)
        return rel / np.asarray(self.spec.scale) + self.center

    def displacement(self, points) -> np.ndarray:
        return self.apply(points) - np.asarray(points, dtype=float).reshape(-1, 3)

    def to_dict(self) -> dict:
        s = self.spec
        return {
            "scale": list(s.scale), "amplitude": s.amplitude, "wavelength": s.wavelength,
            "phase": self.phase, "direction": self.direction,
            "rotation_deg": list(s.rotation_deg), "translation": list(s.translation),
            "seed": s.seed, "center": self.center.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Deformation":
        spec = DeformationSpec(
            scale=tuple(d["scale"]), amplitude=d["amplitude"], wavelength=d["wavelength"],
            phase=d["phase"], direction=d["direction"],
            rotation_deg=tuple(d["rotation_deg"]), translation=tuple(d["translation"]),
            seed=d.get("seed", 0),
        )
        spec.validate()
        return cls(spec, d["center"], d["phase"], d["direction"])


class Deformed(NamedTuple):
    cloud: PointCloud
    centerlines: dict
    field: Deformation


def make_deformation(spec: DeformationSpec, center) -> Deformation:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    phase = spec.phase if spec.phase is not None else float(rng.uniform(0.0, 2.0 * math.pi))
    direction = spec.direction if spec.direction is not None else float(rng.uniform(-30.0, 30.0))
    return Deformation(spec, center, phase, direction)


def deform(cloud: PointCloud, centerlines: dict, spec: DeformationSpec, center=None) -> Deformed:
    """Apply the deformation to a cloud and its centerlines; labels are kept.

    The scaling center defaults to the cloud centroid.
    """
    center = cloud.centroid if center is None else center
    field_ = make_deformation(spec, center)
    moved = cloud.with_points(field_.apply(cloud.points))
    lines = {lv: field_.apply(c) for lv, c in centerlines.items()}
    return Deformed(moved, lines, field_)


def random_deformation(seed: int, scale_range=(0.9, 1.1), max_amplitude: float = 10.0,
                       max_rotation: float = 5.0, max_translation: float = 10.0) -> DeformationSpec:
    """Seeded draw within the given ranges; used for benchmark cases."""
    rng = np.random.default_rng(seed)
    return DeformationSpec(
        scale=tuple(float(s) for s in rng.uniform(*scale_range, 3)),
        amplitude=float(rng.uniform(0.0, max_amplitude)),
        wavelength=float(rng.uniform(250.0, 400.0)),
        rotation_deg=tuple(float(a) for a in rng.uniform(-max_rotation, max_rotation, 3)),
        translation=tuple(float(t) for t in rng.uniform(-max_translation, max_translation, 3)),
        seed=seed,
    )
