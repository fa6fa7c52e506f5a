"""Rectangular-lattice Kohonen self-organizing map over 3D points.

Used twice per cloud: a large grid resamples the raw cloud to a fixed size,
a small grid then yields the skeleton key points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numba
import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateCloud, EmptyCloud
from .geometry import PointCloud


@dataclass(eq=False)
class SomGrid:
    rows: int
    cols: int
    weights: np.ndarray  # (rows, cols, 3)
    epoch: int = 0
    error_history: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(self.rows, self.cols, 3)
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("SOM weights must be finite")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def copy(self) -> "SomGrid":
        return replace(self, weights=self.weights.copy(), error_history=list(self.error_history))


@dataclass(frozen=True)
class SomParams:
    """Training schedule.

    ``lr_decay`` and ``sigma_decay`` are exponential time constants in
    iterations (one iteration = one sample). When left as None they are
    derived so the schedule ends at ``learning_rate_final`` and
    ``sigma_final``. ``sigma0`` defaults to half the larger grid dimension.
    """

    learning_rate: float = 0.5
    lr_decay: Optional[float] = None
    sigma0: Optional[float] = None
    sigma_decay: Optional[float] = None
    epochs: int = 200
    seed: int = 0
    learning_rate_final: float = 0.01
    sigma_final: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.sigma0 is not None and self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def schedule(self, grid: SomGrid, n_samples: int):
        """Return (lr0, tau_lr, sigma0, tau_sigma) for a run over ``n_samples`` points."""
        total = self.epochs * n_samples
        sigma0 = self.sigma0 if self.sigma0 is not None else max(grid.rows, grid.cols) / 2.0
        tau_l = self.lr_decay
        if tau_l is None:
            ratio = self.learning_rate / self.learning_rate_final
            tau_l = total / math.log(ratio) if ratio > 1.0 else math.inf
        tau_s = self.sigma_decay
        if tau_s is None:
            ratio = sigma0 / self.sigma_final
            tau_s = total / math.log(ratio) if ratio > 1.0 else math.inf
        return self.learning_rate, tau_l, sigma0, tau_s


def init_grid(cloud: PointCloud, m_g: int, n_g: int, seed: int = 0) -> SomGrid:
    """Lay the lattice on the cloud's principal plane, spanning +-2 standard deviations.

    The longer grid dimension follows the first principal axis. The layout is
    deterministic, so ``seed`` has no effect; it is accepted for symmetry with
    :func:`train`.
    """
    pts = cloud.points
    if len(pts) == 0:
        raise EmptyCloud("cannot initialise a grid from an empty cloud")
    centroid = pts.mean(axis=0)
    if m_g * n_g == 1:
        return SomGrid(1, 1, centroid.reshape(1, 1, 3))
    _, s, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    std = s / math.sqrt(len(pts))
    if std[0] == 0.0:
        raise DegenerateCloud("cloud has zero variance in its principal plane")
    axes = [_canonical_sign(v) for v in vt[:2]]
    stds = [std[0], std[1] if len(std) > 1 else 0.0]
    if len(axes) < 2:
        axes.append(_orthogonal(axes[0]))
    col_axis, row_axis, col_std, row_std = axes[0], axes[1], stds[0], stds[1]
    if m_g > n_g:
        col_axis, row_axis, col_std, row_std = row_axis, col_axis, row_std, col_std
    a = _span(m_g, row_std)
    b = _span(n_g, col_std)
    w = centroid + a[:, None, None] * row_axis + b[None, :, None] * col_axis
    return SomGrid(m_g, n_g, w)


def _span(count, std):
    if count == 1:
        return np.zeros(1)
    return np.linspace(-2.0 * std, 2.0 * std, count)


def _canonical_sign(v):
    return v if v[np.argmax(np.abs(v))] > 0 else -v


def _orthogonal(v):
    helper = np.eye(3)[np.argmin(np.abs(v))]
    u = np.cross(v, helper)
    return u / np.linalg.norm(u)


@numba.njit(cache=True)
def _train_span(w, rows, cols, data, order, i0, lr0, tau_l, sigma0, tau_s):
    n_nodes = rows * cols
    er = np.empty(rows)
    ec = np.empty(cols)
    for step in range(order.shape[0]):
        i = i0 + step
        k = order[step]
        p0 = data[k, 0]
        p1 = data[k, 1]
        p2 = data[k, 2]
        best = 0
        best_d = np.inf
        for node in range(n_nodes):
            d0 = w[node, 0] - p0
            d1 = w[node, 1] - p1
            d2 = w[node, 2] - p2
            d = d0 * d0 + d1 * d1 + d2 * d2
            if d < best_d:
                best_d = d
                best = node
        br = best // cols
        bc = best % cols
        lr = lr0 * math.exp(-i / tau_l)
        sigma = sigma0 * math.exp(-i / tau_s)
        inv = 1.0 / (2.0 * sigma * sigma)
        # Gaussian over lattice distance is separable in row/col offsets
        for r in range(rows):
            er[r] = math.exp(-((r - br) ** 2) * inv)
        for c in range(cols):
            ec[c] = math.exp(-((c - bc) ** 2) * inv)
        for r in range(rows):
            for c in range(cols):
                node = r * cols + c
                h = er[r] * ec[c] * lr
                w[node, 0] += h * (p0 - w[node, 0])
                w[node, 1] += h * (p1 - w[node, 1])
                w[node, 2] += h * (p2 - w[node, 2])


def train(grid: SomGrid, cloud: PointCloud, params: SomParams, record_error: bool = False) -> SomGrid:
    """Online SOM training; returns a new grid.

    Each epoch visits every point once in a seeded random order. With
    ``record_error`` the quantization error is appended to
    ``error_history`` before training and after every epoch.
    """
    data = np.ascontiguousarray(cloud.points, dtype=float)
    if len(data) == 0:
        raise EmptyCloud("cannot train on an empty cloud")
    out = grid.copy()
    w = np.ascontiguousarray(out.weights.reshape(-1, 3))
    lr0, tau_l, sigma0, tau_s = params.schedule(grid, len(data))
    rng = np.random.default_rng(params.seed)
    if record_error:
        out.error_history.append(_qe(w, data))
    for epoch in range(params.epochs):
        order = rng.permutation(len(data)).astype(np.int64)
        _train_span(w, out.rows, out.cols, data, order, epoch * len(data),
                    lr0, tau_l, sigma0, tau_s)
        if record_error:
            out.error_history.append(_qe(w, data))
    out.weights = w.reshape(out.rows, out.cols, 3)
    out.epoch = grid.epoch + params.epochs
    return out


def _qe(weights: np.ndarray, data: np.ndarray) -> float:
    d, _ = cKDTree(weights).query(data, k=1)
    return float(np.mean(d))


def quantization_error(grid: SomGrid, cloud: PointCloud) -> float:
    """Mean distance from each cloud point to its best matching unit."""
    return _qe(grid.weights.reshape(-1, 3), cloud.points)


def live_nodes(nodes, cloud: PointCloud) -> np.ndarray:
    """Sorted indices of the nodes that are the best matching unit of some cloud point.

    Nodes left in empty space between clusters win no point and are dropped.
    """
    w = nodes.weights.reshape(-1, 3) if isinstance(nodes, SomGrid) else np.asarray(nodes.points)
    bmu = np.empty(len(cloud), dtype=np.int64)
    for lo in range(0, len(cloud), 2048):
        d = ((cloud.points[lo:lo + 2048, None, :] - w[None, :, :]) ** 2).sum(axis=2)
        bmu[lo:lo + 2048] = np.argmin(d, axis=1)
    return np.unique(bmu)


def extract_key_points(grid: SomGrid) -> PointCloud:
    """All node weights in row-major order."""
    return PointCloud(grid.weights.reshape(-1, 3).copy())
