"""End-to-end skeleton extraction and graph-based registration."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import PointCloud, RigidTransform, downsample
from .io import RunConfig
from .register import RegistrationReport, evaluate, icp_rigid, principal_axes_alignment, warp_nonrigid
from .resample import Correspondence, ResampledSkeleton, build_correspondence, resample_skeleton
from .skeleton import (
    EndpointPairs,
    RibPathSet,
    SkeletonGraph,
    build_mst,
    convex_hull_vertices,
    endpoints_from_geometry,
    endpoints_from_labels,
    extract_rib_paths,
    label_key_points,
    pair_endpoints,
)
from .som import SomGrid, SomParams, extract_key_points, init_grid, live_nodes, quantization_error, train

log = logging.getLogger(__name__)


class StageError(Exception):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")


@dataclass(eq=False)
class SomStages:
    """Both SOM stages. ``stage1_live``/``key_live`` index the nodes that won data."""

    stage1: PointCloud
    nodes: PointCloud
    grid1: SomGrid
    grid2: SomGrid
    initial_error: float
    final_error: float
    stage1_live: np.ndarray
    key_live: np.ndarray

    @property
    def key_points(self) -> PointCloud:
        """Stage-2 nodes that take part in the graph."""
        return self.nodes.subset(self.key_live)


@dataclass(eq=False)
class Skeleton:
    som: SomStages
    graph: SkeletonGraph
    hull: list
    endpoints: EndpointPairs
    paths: RibPathSet
    resampled: ResampledSkeleton

    @property
    def key_points(self) -> PointCloud:
        return self.som.key_points


def capped_grid(rows: int, cols: int, n_points: int) -> tuple:
    """Shrink a grid proportionally so it has no more nodes than input points."""
    if rows * cols <= n_points:
        return rows, cols
    f = math.sqrt(n_points / (rows * cols))
    new = max(1, int(rows * f)), max(1, int(cols * f))
    log.warning("%dx%d grid exceeds %d input points; capped to %dx%d",
                rows, cols, n_points, *new)
    return new


def _som_params(cfg: RunConfig, epochs: int, seed: int) -> SomParams:
    return SomParams(learning_rate=cfg.learning_rate, sigma0=cfg.sigma0, epochs=epochs,
                     seed=seed, learning_rate_final=cfg.learning_rate_final,
                     sigma_final=cfg.sigma_final)


def som_stages(cloud: PointCloud, cfg: RunConfig) -> SomStages:
    """Two successive SOMs: resample to a fixed size, then extract key points.

    With ``cfg.prune_dead`` the second map trains only on first-stage nodes
    that won at least one cloud point, and only second-stage nodes that won
    a first-stage node enter the graph.
    """
    data = cloud
    if 0 < cfg.downsample_count < len(cloud):
        data = downsample(cloud, cfg.downsample_count, cfg.seed)
    r1, c1 = capped_grid(cfg.som1_rows, cfg.som1_cols, len(data))
    grid1 = init_grid(data, r1, c1, cfg.seed)
    qe0 = quantization_error(grid1, data)
    grid1 = train(grid1, data, _som_params(cfg, cfg.epochs1, cfg.seed))
    stage1 = extract_key_points(grid1)
    live1 = _live(grid1, data, cfg)
    resampled = stage1.subset(live1)
    r2, c2 = capped_grid(cfg.som2_rows, cfg.som2_cols, len(resampled))
    grid2 = init_grid(resampled, r2, c2, cfg.seed + 1)
    grid2 = train(grid2, resampled, _som_params(cfg, cfg.epochs2, cfg.seed + 1))
    return SomStages(stage1, extract_key_points(grid2), grid1, grid2,
                     qe0, quantization_error(grid1, data), live1, _live(grid2, resampled, cfg))


def _live(grid: SomGrid, data: PointCloud, cfg: RunConfig) -> np.ndarray:
    if cfg.prune_dead:
        return live_nodes(grid, data)
    return np.arange(grid.size)


def build_skeleton(cloud: PointCloud, som: SomStages, cfg: RunConfig,
                   template: Optional[EndpointPairs] = None,
                   initial: Optional[RigidTransform] = None) -> Skeleton:
    """MST, hull, endpoint labeling, rib paths and resampling.

    Endpoints come from ``template`` when given, else from the cloud's rib
    labels, else from hull geometry alone.
    """
    keys = som.key_points
    stage = "mst"
    try:
        graph = build_mst(keys)
        stage = "hull"
        hull = convex_hull_vertices(keys)
        stage = "endpoints"
        if template is not None:
            endpoints = pair_endpoints(keys, template, hull, initial)
        elif cloud.labels is not None:
            endpoints = endpoints_from_labels(keys, label_key_points(keys, cloud))
        else:
            endpoints = endpoints_from_geometry(keys, hull)
        stage = "paths"
        paths = extract_rib_paths(graph, endpoints, cfg.t_theta)
        stage = "resample"
        resampled = resample_skeleton(
            {lv: paths.filtered_points(lv) for lv in paths.paths}, cfg.rib_samples)
    except Exception as exc:
        raise StageError(stage, exc) from exc
    return Skeleton(som, graph, hull, endpoints, paths, resampled)


def skeletonize(cloud: PointCloud, cfg: RunConfig, template: Optional[EndpointPairs] = None,
                initial: Optional[RigidTransform] = None) -> Skeleton:
    try:
        som = som_stages(cloud, cfg)
    except Exception as exc:
        raise StageError("som", exc) from exc
    return build_skeleton(cloud, som, cfg, template, initial)


@dataclass(eq=False)
class GraphRegistration:
    source: Skeleton
    target: Skeleton
    correspondence: Correspondence
    warped: PointCloud
    report: RegistrationReport


def register_graph(source: PointCloud, target: PointCloud, cfg: RunConfig) -> GraphRegistration:
    """Skeleton-graph non-rigid registration of ``source`` (template) onto ``target``."""
    start = time.perf_counter()
    src = skeletonize(source, cfg)
    try:
        tgt_som = som_stages(target, cfg)
    except Exception as exc:
        raise StageError("som", exc) from exc
    # coarse alignment of the two key-point sets seeds the endpoint matching
    shift = RigidTransform(np.eye(3), tgt_som.key_points.centroid - src.key_points.centroid)
    init, _ = icp_rigid(src.key_points, tgt_som.key_points, cfg.icp_max_iter, cfg.icp_tol, shift)
    tgt = build_skeleton(target, tgt_som, cfg, src.endpoints, init)
    try:
        corr = build_correspondence(src.resampled, tgt.resampled)
        warped = warp_nonrigid(source, corr, cfg.n_r)
    except Exception as exc:
        raise StageError("warp", exc) from exc
    report = evaluate(warped, target, "graph", time.perf_counter() - start)
    return GraphRegistration(src, tgt, corr, warped, report)


def register_icp(source: PointCloud, target: PointCloud, cfg: RunConfig,
                 initial: Optional[RigidTransform] = None):
    """Rigid ICP baseline with principal-axes pre-alignment by default."""
    initial = initial or principal_axes_alignment(source, target)
    xf, report = icp_rigid(source, target, cfg.icp_max_iter, cfg.icp_tol, initial)
    return xf, source.with_points(xf.apply_points(source.points)), report
