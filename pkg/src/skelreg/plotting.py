"""Report figures rendered to PNG bytes.

Figures are drawn with the Agg backend and saved without a software tag, so
identical inputs give byte-identical files.
"""
from __future__ import annotations

import io as _io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geometry import RIB_LEVELS  # noqa: E402

_PNG_META = {"Software": None}
_RIB_COLORS = dict(zip(RIB_LEVELS, ("tab:blue", "tab:orange", "tab:green", "tab:red")))


def _render(fig) -> bytes:
    buf = _io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return buf.getvalue()


def distance_violin(groups: dict, title: str = "") -> bytes:
    """Violin plot of per-point distances, one violin per method."""
    names = list(groups)
    data = [np.asarray(groups[n], dtype=float) for n in names]
    fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(names), 4.0))
    drawable = [i for i, d in enumerate(data) if len(d) > 1 and np.ptp(d) > 0]
    if drawable:
        ax.violinplot([data[i] for i in drawable], positions=[i + 1 for i in drawable],
                      showmeans=True, showextrema=True)
    for i, d in enumerate(data):
        if i not in drawable and len(d):
            ax.plot([i + 1], [d.mean()], "k_", markersize=20)
    ax.set_xticks(range(1, len(names) + 1), names)
    ax.set_ylabel("distance to target (mm)")
    ax.set_xlim(0.4, len(names) + 0.6)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _render(fig)


def _frontal(points):
    """Two in-plane coordinates for a frontal view: first two principal axes."""
    pts = np.asarray(points, dtype=float)
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    # keep the view stable: first axis points toward +x, second toward +y
    for k, ref in ((0, 0), (1, 1)):
        if vt[k][ref] < 0:
            vt[k] = -vt[k]
    return c, vt[:2].T


def skeleton_figure(cloud, key_points, edges, paths: dict, resampled: dict) -> bytes:
    """Frontal view: cloud, key points, tree edges, filtered paths and resampled ribs."""
    c, basis = _frontal(cloud.points)

    def proj(p):
        return (np.asarray(p, dtype=float).reshape(-1, 3) - c) @ basis

    fig, ax = plt.subplots(figsize=(8.0, 6.0))
    q = proj(cloud.points)
    ax.scatter(q[:, 0], q[:, 1], s=1, c="0.8", label="cloud")
    k = proj(key_points)
    for i, j, _ in edges:
        ax.plot(k[[i, j], 0], k[[i, j], 1], color="0.3", lw=0.7)
    ax.scatter(k[:, 0], k[:, 1], s=14, c="k", zorder=3, label="key points")
    for lv in RIB_LEVELS:
        if lv in paths:
            p = proj(paths[lv])
            ax.plot(p[:, 0], p[:, 1], color=_RIB_COLORS[lv], lw=3, alpha=0.45)
        if lv in resampled:
            r = proj(resampled[lv])
            ax.plot(r[:, 0], r[:, 1], "o", color=_RIB_COLORS[lv], ms=5, label=f"rib {lv}")
    ax.set_aspect("equal")
    ax.set_xlabel("principal axis 1 (mm)")
    ax.set_ylabel("principal axis 2 (mm)")
    ax.legend(loc="lower center", fontsize=7, ncol=3)
    fig.tight_layout()
    return _render(fig)


def registration_figure(moved, target, title: str = "") -> bytes:
    """Frontal overlay of the registered source on the target."""
    c, basis = _frontal(target.points)
    t = (target.points - c) @ basis
    m = (moved.points - c) @ basis
    fig, ax = plt.subplots(figsize=(8.0, 6.0))
    ax.scatter(t[:, 0], t[:, 1], s=2, c="tab:blue", alpha=0.5, label="target")
    ax.scatter(m[:, 0], m[:, 1], s=2, c="tab:red", alpha=0.5, label="registered source")
    ax.set_aspect("equal")
    ax.legend(loc="lower center", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _render(fig)


def waypoint_figure(planned, transferred, truth=None) -> bytes:
    """Planned, transferred and (optionally) true waypoint positions."""
    pts = [np.asarray(planned), np.asarray(transferred)]
    if truth is not None:
        pts.append(np.asarray(truth))
    c, basis = _frontal(np.concatenate(pts))
    fig, ax = plt.subplots(figsize=(7.0, 5.0))
    for arr, style, name in zip(pts, ("o", "x", "+"), ("planned", "transferred", "truth")):
        q = (arr - c) @ basis
        ax.plot(q[:, 0], q[:, 1], style, ms=7, label=name)
    ax.set_aspect("equal")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _render(fig)
