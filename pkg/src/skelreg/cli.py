"""Command-line driver: ``skelreg <verb> [options]``.

Every verb writes its artifacts into ``--out`` together with a
``manifest.json`` of SHA-256 checksums. Exit status is 0 on success, 2 on
usage, input or configuration errors and 3 when a pipeline stage fails.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio
from . import plotting
from .errors import (
    EmptyFile,
    InvalidSpec,
    IoError,
    ParseError,
    SchemaError,
    SkelRegError,
)
from .geometry import RIB_LEVELS, PointCloud, RigidTransform, downsample
from .pipeline import StageError, register_graph, register_icp, skeletonize
from .register import Waypoint, evaluate, plan_waypoints, transfer_waypoints
from .resample import Correspondence
from .skeleton import EndpointPairs
from .synth import CageSpec, DeformationSpec, Deformation, deform, generate_cage, random_deformation

log = logging.getLogger("skelreg")

EXIT_OK, EXIT_USAGE, EXIT_PIPELINE = 0, 2, 3


class UsageError(Exception):
    """Bad arguments or unreadable inputs (exit 2)."""


class PipelineFailure(Exception):
    """A processing step failed (exit 3)."""


class Run:
    """Collects the artifacts of one command and writes the manifest."""

    def __init__(self, args, cfg: sio.RunConfig):
        self.out = Path(args.out)
        self.command = args.command
        self.cfg = cfg
        self.inputs = []
        self.artifacts = []
        if self.out.exists() and not self.out.is_dir():
            raise UsageError(f"--out {self.out} is not a directory")
        self.out.mkdir(parents=True, exist_ok=True)

    def input(self, path) -> Path:
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"cannot read {path}")
        self.inputs.append({"name": path.name, "sha256": _sha256(path.read_bytes())})
        return path

    def _record(self, name: str, data: bytes):
        sio.write_bytes(self.out / name, data)
        self.artifacts.append({"path": name, "bytes": len(data), "sha256": _sha256(data)})

    def cloud(self, name: str, cloud: PointCloud):
        fmt = sio.infer_format(name)
        self._record(name, sio.format_point_cloud(cloud, fmt).encode())

    def rows(self, name: str, header, rows):
        self._record(name, sio.format_rows(header, rows).encode())

    def json(self, name: str, payload):
        self._record(name, sio.format_json(payload).encode())

    def png(self, name: str, data: bytes):
        self._record(name, data)

    def finish(self):
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": self.cfg.to_dict(),
            "inputs": self.inputs,
            "artifacts": self.artifacts,
        }
        sio.write_json(self.out / "manifest.json", manifest)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------- helpers


def _load_cloud(run: Run, path) -> PointCloud:
    return sio.read_point_cloud(run.input(path))


def _xyz(p):
    return [float(p[0]), float(p[1]), float(p[2])]


def _report_payload(reports) -> dict:
    return {"reports": [r.summary() for r in reports]}


def _write_report(run: Run, reports, plot_csv: bool):
    """Shared report schema of ``register`` and ``evaluate``."""
    run.json("report.json", _report_payload(reports))
    if len(reports) == 1:
        run.rows("distances.csv", ["index", "distance"],
                 [(i, d) for i, d in enumerate(reports[0].distances)])
    else:
        for r in reports:
            run.rows(f"distances_{r.method}.csv", ["index", "distance"],
                     [(i, d) for i, d in enumerate(r.distances)])
    if plot_csv:
        run.rows("distances_long.csv", ["method", "distance"],
                 [(r.method, d) for r in reports for d in r.distances])
    run.png("distances.png", plotting.distance_violin({r.method: r.distances for r in reports}))


def _waypoint_rows(wps):
    return [(w.gap, w.side, *_xyz(w.point)) for w in wps]


def _read_waypoints(path) -> list:
    rows = sio.read_rows(path)
    try:
        return [Waypoint([float(r["x"]), float(r["y"]), float(r["z"])], r["gap"], r["side"])
                for r in rows]
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"{path}: malformed waypoint table ({exc})") from exc


def _read_correspondence(path) -> Correspondence:
    rows = sio.read_rows(path)
    try:
        src = [[float(r["sx"]), float(r["sy"]), float(r["sz"])] for r in rows]
        dst = [[float(r["tx"]), float(r["ty"]), float(r["tz"])] for r in rows]
        tags = [[int(r["level"]), int(r["index"])] for r in rows]
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"{path}: malformed correspondence table ({exc})") from exc
    if not rows:
        raise UsageError(f"{path}: empty correspondence table")
    return Correspondence(np.array(src), np.array(dst), np.array(tags))


def _read_endpoints(path) -> EndpointPairs:
    rows = sio.read_rows(path)
    coords = {}
    try:
        for r in rows:
            lv = int(r["level"])
            slot = {"left": 0, "right": 1}[r["side"]]
            coords.setdefault(lv, np.full((2, 3), np.nan))[slot] = [
                float(r["x"]), float(r["y"]), float(r["z"])]
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"{path}: malformed endpoint table ({exc})") from exc
    if sorted(coords) != list(RIB_LEVELS) or any(np.isnan(c).any() for c in coords.values()):
        raise UsageError(f"{path}: need left and right endpoints for ribs 2 to 5")
    return EndpointPairs({lv: (-1, -1) for lv in RIB_LEVELS}, coords)


def _endpoint_rows(endpoints: EndpointPairs):
    return [(lv, side, *_xyz(endpoints.coords[lv][k]))
            for lv in RIB_LEVELS for k, side in enumerate(("left", "right"))]


def _read_transform(path) -> RigidTransform:
    data = sio.read_json(path)
    try:
        return RigidTransform.from_matrix(np.asarray(data["matrix"], dtype=float))
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"{path}: expected a 4x4 'matrix' ({exc})") from exc


def _skeleton_artifacts(run: Run, prefix: str, cloud: PointCloud, skel):
    """Persist every stage of one skeleton under ``prefix``."""
    run.cloud(f"{prefix}stage1.ply", skel.som.stage1)
    run.cloud(f"{prefix}key_points.ply", skel.som.nodes)
    # graph vertices: the stage-2 nodes that won data; mst_edges.csv indexes these
    run.cloud(f"{prefix}graph_nodes.ply", skel.key_points)
    run.rows(f"{prefix}mst_edges.csv", ["i", "j", "weight"], skel.graph.edges)
    rows = []
    for lv in RIB_LEVELS:
        path = skel.paths.paths[lv]
        kept = set(path.filtered)
        pts = skel.graph.vertices.points
        for order, v in enumerate(path.raw):
            rows.append((lv, order, v, int(v in kept), *_xyz(pts[v])))
    run.rows(f"{prefix}rib_paths.csv", ["level", "order", "vertex", "kept", "x", "y", "z"], rows)
    run.rows(f"{prefix}endpoints.csv", ["level", "side", "x", "y", "z"], _endpoint_rows(skel.endpoints))
    pts, tags = skel.resampled.stacked()
    run.cloud(f"{prefix}resampled.ply", PointCloud(pts, tags[:, 0]))
    run.png(f"{prefix}skeleton.png", plotting.skeleton_figure(
        cloud, skel.graph.vertices.points, skel.graph.edges,
        {lv: skel.paths.filtered_points(lv) for lv in RIB_LEVELS}, skel.resampled.ribs))


# ---------------------------------------------------------------- verbs


def cmd_synth(args, cfg, run: Run) -> None:
    try:
        cage = CageSpec(noise=args.noise, points_per_rib=args.points_per_rib,
                        tube_radius=args.tube_radius, seed=cfg.seed)
        cage.validate()
        base = random_deformation(cfg.seed) if args.deformation == "random" else DeformationSpec(seed=cfg.seed)
        scale = list(base.scale)
        for k, v in enumerate((args.scale_x, args.scale_y, args.scale_z)):
            if v is not None:
                scale[k] = v
        spec = DeformationSpec(
            scale=tuple(scale),
            amplitude=base.amplitude if args.amplitude is None else args.amplitude,
            wavelength=base.wavelength if args.wavelength is None else args.wavelength,
            rotation_deg=base.rotation_deg if args.rotation is None else tuple(args.rotation),
            translation=base.translation if args.translation is None else tuple(args.translation),
            seed=cfg.seed,
        )
        spec.validate()
    except InvalidSpec as exc:
        raise UsageError(str(exc)) from exc
    cloud, truth = generate_cage(cage)
    moved = deform(cloud, truth.centerlines, spec)
    run.cloud("source.ply", cloud)
    run.cloud("target.ply", moved.cloud)
    run.json("deformation.json", moved.field.to_dict())
    run.rows("ground_truth.csv", ["index", "x", "y", "z", "xp", "yp", "zp"],
             [(i, *_xyz(a), *_xyz(b)) for i, (a, b) in enumerate(zip(cloud.points, moved.cloud.points))])
    run.rows("endpoints_truth.csv", ["level", "side", "x", "y", "z"],
             [(lv, side, *_xyz(truth.endpoints[lv][k]))
              for lv in RIB_LEVELS for k, side in enumerate(("left", "right"))])


def cmd_downsample(args, cfg, run: Run) -> None:
    cloud = _load_cloud(run, args.input)
    count = args.count if args.count is not None else cfg.downsample_count
    if count < 1:
        raise UsageError("a positive --count (or downsample_count in the config) is required")
    try:
        out = downsample(cloud, count, cfg.seed)
    except SkelRegError as exc:
        raise PipelineFailure(f"downsample: {exc}") from exc
    run.cloud(f"downsampled{Path(args.input).suffix or '.csv'}", out)


def cmd_skeleton(args, cfg, run: Run) -> None:
    cloud = _load_cloud(run, args.input)
    template = _read_endpoints(run.input(args.template_endpoints)) if args.template_endpoints else None
    skel = skeletonize(cloud, cfg, template)
    _skeleton_artifacts(run, "", cloud, skel)


def cmd_register(args, cfg, run: Run) -> None:
    source = _load_cloud(run, args.source)
    target = _load_cloud(run, args.target)
    start = time.perf_counter()
    if args.method == "graph":
        res = register_graph(source, target, cfg)
        report, warped = res.report, res.warped
        _skeleton_artifacts(run, "source_", source, res.source)
        _skeleton_artifacts(run, "target_", target, res.target)
        c = res.correspondence
        run.rows("correspondence.csv", ["level", "index", "sx", "sy", "sz", "tx", "ty", "tz"],
                 [(int(t[0]), int(t[1]), *_xyz(a), *_xyz(b))
                  for t, a, b in zip(c.tags, c.source, c.target)])
        try:
            planned = plan_waypoints(res.source.resampled)
            moved = transfer_waypoints(planned, c, cfg.n_r)
        except SkelRegError as exc:
            raise StageError("waypoints", exc) from exc
        header = ["gap", "side", "x", "y", "z"]
        run.rows("waypoints_planned.csv", header, _waypoint_rows(planned))
        run.rows("waypoints_transferred.csv", header, _waypoint_rows(moved))
        details = {"method": "graph", "n_r": cfg.n_r, "pairs": len(c),
                   "rib_samples": {str(k): v for k, v in cfg.rib_samples.items()}}
    else:
        initial = _read_transform(run.input(args.initial)) if args.initial else None
        try:
            xf, warped, report = register_icp(source, target, cfg, initial)
        except SkelRegError as exc:
            raise StageError("icp", exc) from exc
        details = {"method": "icp", "iterations": len(report.history) - 1,
                   "history": [round(h, 6) for h in report.history],
                   "matrix": np.round(xf.as_matrix(), 12).tolist()}
    log.info("%s registration finished in %.2f s", args.method, time.perf_counter() - start)
    run.cloud("warped.ply", warped)
    run.json("registration.json", details)
    _write_report(run, [report], args.plot_csv)
    run.png("registration.png", plotting.registration_figure(warped, target, args.method))


def cmd_evaluate(args, cfg, run: Run) -> None:
    target = _load_cloud(run, args.target)
    names = args.name or []
    if names and len(names) != len(args.moved):
        raise UsageError("--name must be given once per moved cloud")
    reports = []
    for k, path in enumerate(args.moved):
        moved = _load_cloud(run, path)
        name = names[k] if names else Path(path).stem
        try:
            reports.append(evaluate(moved, target, name))
        except SkelRegError as exc:
            raise PipelineFailure(f"evaluate: {exc}") from exc
    if len({r.method for r in reports}) != len(reports):
        raise UsageError("moved clouds need distinct names (use --name)")
    _write_report(run, reports, args.plot_csv)


def cmd_transfer(args, cfg, run: Run) -> None:
    planned = _read_waypoints(run.input(args.waypoints))
    corr_path = Path(args.correspondence)
    if not corr_path.is_file():
        raise PipelineFailure(f"transfer: correspondence file {corr_path} not found")
    corr = _read_correspondence(run.input(corr_path))
    try:
        moved = transfer_waypoints(planned, corr, min(cfg.n_r, len(corr)))
    except SkelRegError as exc:
        raise PipelineFailure(f"transfer: {exc}") from exc
    run.rows("waypoints_transferred.csv", ["gap", "side", "x", "y", "z"], _waypoint_rows(moved))
    truth = None
    if args.deformation:
        field = Deformation.from_dict(sio.read_json(run.input(args.deformation)))
        truth = field.apply(np.stack([w.point for w in planned]))
    elif args.ground_truth:
        given = _read_waypoints(run.input(args.ground_truth))
        if len(given) != len(planned):
            raise UsageError("ground-truth waypoint count differs from the planned waypoints")
        truth = np.stack([w.point for w in given])
    if truth is not None:
        got = np.stack([w.point for w in moved])
        err = np.linalg.norm(got - truth, axis=1)
        run.rows("waypoint_errors.csv", ["gap", "side", "error"],
                 [(w.gap, w.side, e) for w, e in zip(planned, err)])
        run.json("transfer_report.json", {
            "count": len(err), "mean": round(float(err.mean()), 6),
            "std": round(float(err.std()), 6), "max": round(float(err.max()), 6)})
    run.png("waypoints.png", plotting.waypoint_figure(
        [w.point for w in planned], [w.point for w in moved], truth))


COMMANDS = {
    "synth": cmd_synth,
    "downsample": cmd_downsample,
    "skeleton": cmd_skeleton,
    "register": cmd_register,
    "evaluate": cmd_evaluate,
    "transfer": cmd_transfer,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; missing keys take defaults")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="skelreg", description="Skeleton-graph registration of rib-cartilage point clouds.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cage and a deformed copy")
    p.add_argument("--deformation", choices=("random", "none"), default="random",
                   help="base deformation drawn from the seed, or the identity")
    p.add_argument("--scale-x", type=float)
    p.add_argument("--scale-y", type=float)
    p.add_argument("--scale-z", type=float)
    p.add_argument("--amplitude", type=float, help="bend amplitude (mm)")
    p.add_argument("--wavelength", type=float, help="bend wavelength (mm)")
    p.add_argument("--rotation", type=float, nargs=3, metavar=("RX", "RY", "RZ"), help="degrees")
    p.add_argument("--translation", type=float, nargs=3, metavar=("TX", "TY", "TZ"), help="mm")
    p.add_argument("--noise", type=float, default=CageSpec.noise, help="point noise sigma (mm)")
    p.add_argument("--points-per-rib", type=int, default=CageSpec.points_per_rib)
    p.add_argument("--tube-radius", type=float, default=CageSpec.tube_radius)

    p = sub.add_parser("downsample", parents=[common], help="uniformly thin a point cloud")
    p.add_argument("input")
    p.add_argument("--count", type=int, help="target point count")

    p = sub.add_parser("skeleton", parents=[common], help="extract the rib skeleton of one cloud")
    p.add_argument("input")
    p.add_argument("--template-endpoints", help="CSV level,side,x,y,z of labeled rib endpoints")

    p = sub.add_parser("register", parents=[common], help="register source onto target")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--method", choices=("graph", "icp"), default="graph")
    p.add_argument("--initial", help="JSON with a 4x4 'matrix' to start ICP from")
    p.add_argument("--plot-csv", action="store_true", help="also write long-format method,distance CSV")

    p = sub.add_parser("evaluate", parents=[common], help="distance metrics of moved clouds")
    p.add_argument("target")
    p.add_argument("moved", nargs="+")
    p.add_argument("--name", action="append", help="method name per moved cloud, in order")
    p.add_argument("--plot-csv", action="store_true", help="also write long-format method,distance CSV")

    p = sub.add_parser("transfer", parents=[common], help="map planned waypoints through a correspondence")
    p.add_argument("--waypoints", required=True)
    p.add_argument("--correspondence", required=True)
    truth = p.add_mutually_exclusive_group()
    truth.add_argument("--deformation", help="deformation.json from synth, for errors")
    truth.add_argument("--ground-truth", help="CSV gap,side,x,y,z of true waypoint positions")
    return parser


def _config(args) -> sio.RunConfig:
    cfg = sio.read_config(args.config) if args.config else sio.RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
        sio.validate_config(cfg)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _config(args)
        run = Run(args, cfg)
        COMMANDS[args.command](args, cfg, run)
        run.finish()
    except (UsageError, SchemaError, ParseError, EmptyFile, IoError, InvalidSpec) as exc:
        print(f"skelreg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"skelreg {args.command}: stage '{exc.stage}' failed: {exc.cause}", file=sys.stderr)
        return EXIT_PIPELINE
    except (PipelineFailure, SkelRegError) as exc:
        print(f"skelreg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
