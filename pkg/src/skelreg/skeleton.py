"""Skeleton graph over SOM key points and per-rib path extraction.

The key points are joined by a Euclidean minimum spanning tree. Rib
endpoints come from the convex hull and are labeled by aligning a template's
labeled endpoints onto the hull vertices. Each rib is the unique tree path
between its two endpoints, pruned by a turn-angle continuity filter.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import AmbiguousPairing, DegenerateInput, MissingRib, TooFewPoints
from .geometry import RIB_LEVELS, PointCloud, RigidTransform, _as_points, kabsch_fit

log = logging.getLogger(__name__)

LEFT, RIGHT = "left", "right"


@dataclass(eq=False)
class SkeletonGraph:
    vertices: PointCloud
    edges: list  # (i, j, weight)
    adjacency: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.adjacency:
            adj = {i: [] for i in range(len(self.vertices))}
            for i, j, _ in self.edges:
                adj[i].append(j)
                adj[j].append(i)
            self.adjacency = adj

    @property
    def total_weight(self) -> float:
        return float(sum(w for _, _, w in self.edges))


@dataclass(eq=False)
class EndpointPairs:
    """Per rib level: (left, right) vertex indices and their coordinates."""

    pairs: dict  # level -> (left index, right index)
    coords: dict  # level -> array (2, 3), rows [left, right]

    @classmethod
    def from_indices(cls, points, pairs: dict) -> "EndpointPairs":
        pts = _as_points(points)
        coords = {lv: pts[[a, b]].copy() for lv, (a, b) in pairs.items()}
        return cls(dict(pairs), coords)

    def stacked(self) -> np.ndarray:
        """(8, 3) coordinates ordered level 2 left, level 2 right, level 3 left, ..."""
        return np.concatenate([self.coords[lv] for lv in RIB_LEVELS])


@dataclass(eq=False)
class RibPath:
    raw: list  # vertex indices along the tree path
    filtered: list  # subsequence kept by the continuity filter


@dataclass(eq=False)
class RibPathSet:
    vertices: PointCloud
    paths: dict  # level -> RibPath

    def raw_points(self, level) -> np.ndarray:
        return self.vertices.points[self.paths[level].raw]

    def filtered_points(self, level) -> np.ndarray:
        return self.vertices.points[self.paths[level].filtered]


# ---------------------------------------------------------------- MST


def build_mst(points) -> SkeletonGraph:
    """Prim's algorithm on the complete Euclidean graph.

    Starts at vertex 0; ties go to the lowest candidate index.
    """
    cloud = points if isinstance(points, PointCloud) else PointCloud(points)
    pts = cloud.points
    n = len(pts)
    if n < 2:
        raise TooFewPoints("a spanning tree needs at least 2 points")
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = dist[0].copy()
    parent = np.zeros(n, dtype=int)
    best[0] = np.inf
    edges = []
    for _ in range(n - 1):
        cand = np.where(in_tree, np.inf, best)
        j = int(np.argmin(cand))
        edges.append((int(parent[j]), j, float(dist[parent[j], j])))
        in_tree[j] = True
        closer = (~in_tree) & (dist[j] < best)
        best[closer] = dist[j][closer]
        parent[closer] = j
    return SkeletonGraph(cloud, edges)


def tree_path(graph: SkeletonGraph, a: int, b: int) -> list:
    """The unique path from ``a`` to ``b`` in the tree, both inclusive."""
    parent = {a: None}
    queue = deque([a])
    while queue:
        u = queue.popleft()
        if u == b:
            break
        for v in graph.adjacency[u]:
            if v not in parent:
                parent[v] = u
                queue.append(v)
    path = [b]
    while path[-1] != a:
        path.append(parent[path[-1]])
    return path[::-1]


# ---------------------------------------------------------------- convex hull


def convex_hull_vertices(points, flat_ratio: float = 1e-9) -> list:
    """Indices of the strict convex-hull vertices, by 3D gift wrapping.

    If the cloud's thinnest principal extent is below ``flat_ratio`` times
    its widest, the hull is computed in 2D within the best-fit plane.
    Returned indices are sorted ascending.
    """
    pts = _as_points(points)
    n = len(pts)
    if n < 3:
        raise DegenerateInput("need at least 3 points for a hull")
    centered = pts - pts.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s[0] == 0 or s[1] <= 1e-9 * s[0]:
        raise DegenerateInput("all points are collinear")
    if len(s) < 3 or s[2] <= flat_ratio * s[0]:
        return sorted(_jarvis_2d(centered @ vt[:2].T))
    return sorted(_gift_wrap_3d(pts))


def _jarvis_2d(q: np.ndarray) -> list:
    """Counter-clockwise Jarvis march; collinear boundary points are skipped."""
    n = len(q)
    scale = float(np.ptp(q, axis=0).max())
    eps = 1e-12 * scale * scale
    start = int(np.lexsort((q[:, 1], q[:, 0]))[0])
    hull = [start]
    cur = start
    for _ in range(n + 1):
        cand = -1
        for j in range(n):
            dj = q[j] - q[cur]
            if dj @ dj <= eps:
                continue
            if cand < 0:
                cand = j
                continue
            dc = q[cand] - q[cur]
            cr = dc[0] * dj[1] - dc[1] * dj[0]
            if cr < -eps or (abs(cr) <= eps and dj @ dj > dc @ dc):
                cand = j
        if cand < 0 or cand == start:
            break
        hull.append(cand)
        cur = cand
    return hull


def _gift_wrap_3d(pts: np.ndarray) -> set:
    """Face-by-face gift wrapping that tolerates coplanar faces.

    Each supporting plane collects every point lying on it; the face polygon
    is that set's 2D hull, and wrapping proceeds across each polygon edge.
    """
    scale = float(np.ptp(pts, axis=0).max())
    eps = 1e-9 * scale
    p0 = int(np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))[0])
    # virtual first edge: the line through p0 along z inside the plane x = x0
    n0 = np.array([-1.0, 0.0, 0.0])
    u0 = np.array([0.0, 0.0, 1.0])
    normal, members = _wrap(pts, pts[p0], u0, n0, np.cross(u0, n0), eps)
    if _rank(pts[members], eps) < 2:
        # hit an edge, not a face: wrap once more around that edge
        far = members[int(np.argmax(np.linalg.norm(pts[members] - pts[p0], axis=1)))]
        u = pts[far] - pts[p0]
        u /= np.linalg.norm(u)
        normal, members = _wrap(pts, pts[p0], u, normal, np.cross(u, normal), eps)
    vertices = set()
    seen_faces = set()
    seen_edges = set()
    stack = [(normal, members)]
    while stack:
        normal, members = stack.pop()
        poly = _face_polygon(pts, members, normal)
        key = tuple(sorted(poly))
        if key in seen_faces:
            continue
        seen_faces.add(key)
        vertices.update(poly)
        for k in range(len(poly)):
            a, b = poly[k], poly[(k + 1) % len(poly)]
            edge = (min(a, b), max(a, b))
            if edge in seen_edges:
                continue
            seen_edges.add(edge)
            u = pts[b] - pts[a]
            u /= np.linalg.norm(u)
            # polygon is CCW about the outward normal, so its interior is on n x u
            stack.append(_wrap(pts, pts[a], u, normal, np.cross(u, normal), eps))
        if len(seen_faces) > 4 * len(pts) + 8:
            raise DegenerateInput("gift wrapping failed to close the hull")
    return vertices


def _wrap(pts, a, u, normal, w_out, eps):
    """Rotate the supporting plane (through ``a``, containing direction ``u``)
    about that line, away from its current face, until it hits another point.

    Returns the new outward normal and the indices of points on the plane.
    """
    rel = pts - a
    s = rel @ w_out
    t = np.minimum(rel @ normal, 0.0)
    on_line = (np.abs(s) <= eps) & (np.abs(t) <= eps)
    t = np.where(t > -eps, 0.0, t)
    phi = np.arctan2(t, s)
    phi = np.where((t == 0.0) & (s < 0), -np.pi, phi)
    phi[on_line] = -np.inf
    best = int(np.argmax(phi))
    for _ in range(len(pts)):
        d = rel[best]
        nrm = np.cross(u, d)
        nrm /= np.linalg.norm(nrm)
        if (rel @ nrm).sum() > 0:  # the bulk of the points lies behind the face
            nrm = -nrm
        h = rel @ nrm
        worst = int(np.argmax(h))
        if h[worst] <= eps:
            break
        best = worst
    members = np.flatnonzero(np.abs(h) <= eps)
    return nrm, members


def _rank(p, eps):
    s = np.linalg.svd(p - p.mean(axis=0), compute_uv=False)
    return int(np.sum(s > eps))


def _face_polygon(pts, members, normal) -> list:
    """Strict vertices of the planar face, counter-clockwise about ``normal``."""
    e1 = pts[members[1]] - pts[members[0]]
    if len(members) > 2:
        far = np.argmax(np.linalg.norm(pts[members] - pts[members[0]], axis=1))
        e1 = pts[members[far]] - pts[members[0]]
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    q = np.stack([(pts[members] - pts[members[0]]) @ e1,
                  (pts[members] - pts[members[0]]) @ e2], axis=1)
    return [int(members[i]) for i in _jarvis_2d(q)]


# ---------------------------------------------------------------- endpoints


def lateral_axis(points) -> np.ndarray:
    """First principal axis, signed so its largest component is positive."""
    pts = _as_points(points)
    _, _, vt = np.linalg.svd(pts - pts.mean(axis=0), full_matrices=False)
    v = vt[0]
    return v if v[np.argmax(np.abs(v))] > 0 else -v


def label_key_points(key_points: PointCloud, cloud: PointCloud) -> np.ndarray:
    """Majority label of the cloud points each key point represents.

    Key points that are nobody's nearest take the label of their own
    nearest cloud point.
    """
    if cloud.labels is None:
        raise MissingRib("cloud carries no labels")
    _, owner = cKDTree(key_points.points).query(cloud.points, k=1)
    _, nearest = cKDTree(cloud.points).query(key_points.points, k=1)
    labels = cloud.labels[nearest].copy()
    for k in range(len(key_points)):
        mine = cloud.labels[owner == k]
        if len(mine):
            values, counts = np.unique(mine, return_counts=True)
            labels[k] = values[np.argmax(counts)]
    return labels


def endpoints_from_labels(key_points: PointCloud, key_labels: np.ndarray) -> EndpointPairs:
    """Template endpoints: the laterally outermost key points of each rib label."""
    axis = lateral_axis(key_points)
    proj = key_points.points @ axis
    pairs = {}
    for lv in RIB_LEVELS:
        idx = np.flatnonzero(key_labels == lv)
        if len(idx) < 2:
            raise MissingRib(f"rib {lv} has fewer than 2 key points")
        pairs[lv] = (int(idx[np.argmin(proj[idx])]), int(idx[np.argmax(proj[idx])]))
    return EndpointPairs.from_indices(key_points, pairs)


def endpoints_from_geometry(key_points: PointCloud, hull: list) -> EndpointPairs:
    """Endpoint labeling without a template.

    On each side of the lateral midline the four laterally outermost hull
    vertices are taken and ordered along the second principal axis; the
    longest rib (widest endpoint) is taken to be the lowest.
    """
    pts = key_points.points
    center = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - center, full_matrices=False)
    lat, vert = lateral_axis(pts), vt[1]
    hull = np.asarray(hull)
    lat_proj = (pts[hull] - center) @ lat
    sides = {}
    for name, sign in ((LEFT, -1.0), (RIGHT, 1.0)):
        on_side = hull[sign * lat_proj > 0]
        if len(on_side) < 4:
            raise AmbiguousPairing(f"fewer than 4 hull vertices on the {name} side")
        outer = on_side[np.argsort(-np.abs((pts[on_side] - center) @ lat), kind="stable")[:4]]
        sides[name] = outer
    widest = max(np.concatenate(list(sides.values())),
                 key=lambda i: abs((pts[i] - center) @ lat))
    if (pts[widest] - center) @ vert > 0:
        vert = -vert
    pairs = {}
    ordered = {name: idx[np.argsort(-((pts[idx] - center) @ vert), kind="stable")]
               for name, idx in sides.items()}
    for k, lv in enumerate(RIB_LEVELS):
        pairs[lv] = (int(ordered[LEFT][k]), int(ordered[RIGHT][k]))
    return EndpointPairs.from_indices(key_points, pairs)


def pair_endpoints(candidates, template: EndpointPairs, hull: Optional[list] = None,
                   initial: Optional[RigidTransform] = None,
                   max_iter: int = 50) -> EndpointPairs:
    """Transfer the template's endpoint labels onto candidate hull vertices.

    Rigid ICP aligns the 8 template endpoints to the candidate set, starting
    from ``initial`` or, by default, a centroid translation. Labels then go
    to the nearest distinct candidate, greedily by ascending distance.
    Returned indices refer to ``candidates``.
    """
    pts = _as_points(candidates)
    hull = np.arange(len(pts)) if hull is None else np.asarray(hull, dtype=int)
    cand = pts[hull]
    if len(cand) < 8:
        raise AmbiguousPairing(f"only {len(cand)} hull vertices; 8 endpoints needed")
    tmpl = template.stacked()
    if initial is None:
        initial = RigidTransform(np.eye(3), cand.mean(axis=0) - tmpl.mean(axis=0))
    xf = initial
    tree = cKDTree(cand)
    prev = np.inf
    for _ in range(max_iter):
        moved = xf.apply_points(tmpl)
        d, nn = tree.query(moved, k=1)
        err = float(np.mean(d * d))
        if prev - err <= 1e-12:
            break
        prev = err
        xf = kabsch_fit(tmpl, cand[nn])
    moved = xf.apply_points(tmpl)
    dist = np.sqrt(((moved[:, None, :] - cand[None, :, :]) ** 2).sum(axis=2))
    order = np.lexsort((np.tile(np.arange(len(cand)), 8),
                        np.repeat(np.arange(8), len(cand)), dist.ravel()))
    match = -np.ones(8, dtype=int)
    used = np.zeros(len(cand), dtype=bool)
    for flat in order:
        ti, ci = divmod(int(flat), len(cand))
        if match[ti] < 0 and not used[ci]:
            match[ti] = ci
            used[ci] = True
    tmpl_d = np.sqrt(((tmpl[:, None] - tmpl[None]) ** 2).sum(axis=2))
    limit = 0.5 * tmpl_d[~np.eye(8, dtype=bool)].min()
    worst = max(dist[i, match[i]] for i in range(8))
    if worst > limit:
        raise AmbiguousPairing(
            f"endpoint match distance {worst:.2f} mm exceeds {limit:.2f} mm"
        )
    # left/right must straddle the template's mid-sagittal plane
    lr = (moved[1::2] - moved[0::2]).mean(axis=0)
    lr /= np.linalg.norm(lr)
    mid = moved.mean(axis=0)
    side = (cand[match] - mid) @ lr
    if np.any(side[0::2] >= 0) or np.any(side[1::2] <= 0):
        raise AmbiguousPairing("a paired endpoint lies on the wrong side of the midline")
    pairs = {lv: (int(hull[match[2 * k]]), int(hull[match[2 * k + 1]]))
             for k, lv in enumerate(RIB_LEVELS)}
    return EndpointPairs.from_indices(pts, pairs)


# ---------------------------------------------------------------- rib paths


def turn_angle(a, b, c) -> float:
    """Angle in degrees between directions a->b and b->c."""
    v1 = np.asarray(b, float) - np.asarray(a, float)
    v2 = np.asarray(c, float) - np.asarray(b, float)
    n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
    if n1 == 0.0 or n2 == 0.0:
        return math.inf
    cos = np.clip(v1 @ v2 / (n1 * n2), -1.0, 1.0)
    return math.degrees(math.acos(cos))


def continuity_filter(path, t_theta: float = 60.0, return_index: bool = False):
    """Keep path points whose turn from the last kept segment is within ``t_theta``.

    The first two points are always kept; a zero-length step counts as a
    failed test.
    """
    pts = _as_points(path)
    if len(pts) < 2:
        raise TooFewPoints("continuity filter needs at least 2 points")
    keep = [0, 1]
    for j in range(2, len(pts)):
        if turn_angle(pts[keep[-2]], pts[keep[-1]], pts[j]) <= t_theta:
            keep.append(j)
    if return_index:
        return keep
    return pts[keep]


def extract_rib_paths(graph: SkeletonGraph, pairs: EndpointPairs, t_theta: float = 60.0) -> RibPathSet:
    """Tree path from each rib's left endpoint to its right endpoint, then filtered."""
    pts = graph.vertices.points
    paths = {}
    for lv in RIB_LEVELS:
        left, right = pairs.pairs[lv]
        raw = tree_path(graph, left, right)
        if len(raw) < 2:
            raise TooFewPoints(f"rib {lv} endpoints coincide")
        kept = continuity_filter(pts[raw], t_theta, return_index=True)
        filtered = [raw[k] for k in kept]
        if len(filtered) < 0.5 * len(raw):
            log.warning("rib %d: continuity filter kept %d of %d path vertices",
                        lv, len(filtered), len(raw))
        paths[lv] = RibPath(raw, filtered)
    return RibPathSet(graph.vertices, paths)
