import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from skelreg import io as sio
from skelreg.cli import main
from skelreg.geometry import STERNUM


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--seed", "3", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def graph_dir(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("graph")
    code = main(["register", str(synth_dir / "source.ply"), str(synth_dir / "target.ply"),
                 "--method", "graph", "--out", str(out)])
    assert code == 0
    return out


def checksums(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir()) if p.is_file()}


def test_synth_outputs(synth_dir):
    src = sio.read_point_cloud(synth_dir / "source.ply")
    assert sorted(set(src.labels.tolist())) == [STERNUM, 2, 3, 4, 5]
    manifest = json.loads((synth_dir / "manifest.json").read_text())
    listed = {a["path"] for a in manifest["artifacts"]}
    assert {"source.ply", "target.ply", "deformation.json", "ground_truth.csv"} <= listed


def test_synth_deterministic(synth_dir, tmp_path):
    assert main(["synth", "--seed", "3", "--out", str(tmp_path)]) == 0
    assert checksums(tmp_path) == checksums(synth_dir)


def test_synth_rejects_out_of_range_scale(tmp_path, capsys):
    assert main(["synth", "--scale-x", "2.0", "--out", str(tmp_path)]) == 2
    assert "scale" in capsys.readouterr().err


def test_unknown_method_is_usage_error(synth_dir, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["register", str(synth_dir / "source.ply"), str(synth_dir / "target.ply"),
              "--method", "cpd", "--out", str(tmp_path)])
    assert info.value.code == 2


def test_unreadable_input(tmp_path):
    assert main(["skeleton", str(tmp_path / "nope.ply"), "--out", str(tmp_path / "o")]) == 2


def test_bad_config(tmp_path, synth_dir):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"n_r": 2}')
    assert main(["skeleton", str(synth_dir / "source.ply"), "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == 2


def test_skeleton_artifacts(synth_dir, tmp_path):
    assert main(["skeleton", str(synth_dir / "source.ply"), "--out", str(tmp_path)]) == 0
    assert len(sio.read_point_cloud(tmp_path / "stage1.ply")) == 400
    assert len(sio.read_point_cloud(tmp_path / "key_points.ply")) == 40
    nodes = sio.read_point_cloud(tmp_path / "graph_nodes.ply")
    edges = sio.read_rows(tmp_path / "mst_edges.csv")
    assert len(edges) == len(nodes) - 1
    listed = {a["path"] for a in json.loads((tmp_path / "manifest.json").read_text())["artifacts"]}
    assert {p.name for p in tmp_path.iterdir()} == listed | {"manifest.json"}


def test_skeleton_failure_exit_3(tmp_path, capsys):
    rng = np.random.default_rng(0)
    blob = tmp_path / "blob.csv"
    sio.write_point_cloud(sio.PointCloud(rng.normal(size=(300, 3))), blob)
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"epochs1": 5, "epochs2": 5}')
    assert main(["skeleton", str(blob), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "stage" in capsys.readouterr().err


def test_small_input_warns(tmp_path, caplog):
    rng = np.random.default_rng(1)
    small = tmp_path / "small.csv"
    sio.write_point_cloud(sio.PointCloud(rng.normal(size=(20, 3)) * [30, 10, 2]), small)
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"epochs1": 5, "epochs2": 5}')
    with caplog.at_level(logging.WARNING, logger="skelreg"):
        main(["skeleton", str(small), "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert "capped to" in caplog.text


def test_register_graph_artifacts(graph_dir):
    report = json.loads((graph_dir / "report.json").read_text())["reports"][0]
    assert report["method"] == "graph"
    assert 0 <= report["ed_mean"] <= report["hausdorff"]
    assert len(sio.read_rows(graph_dir / "correspondence.csv")) == 30
    assert len(sio.read_rows(graph_dir / "waypoints_planned.csv")) == 10


def test_register_graph_deterministic(synth_dir, graph_dir, tmp_path):
    assert main(["register", str(synth_dir / "source.ply"), str(synth_dir / "target.ply"),
                 "--method", "graph", "--out", str(tmp_path)]) == 0
    assert checksums(tmp_path) == checksums(graph_dir)


def test_register_same_cloud(synth_dir, tmp_path):
    src = str(synth_dir / "source.ply")
    assert main(["register", src, src, "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "report.json").read_text())["reports"][0]["ed_mean"] < 1e-6


def test_register_icp_and_evaluate(synth_dir, graph_dir, tmp_path):
    icp = tmp_path / "icp"
    assert main(["register", str(synth_dir / "source.ply"), str(synth_dir / "target.ply"),
                 "--method", "icp", "--plot-csv", "--out", str(icp)]) == 0
    ev = tmp_path / "ev"
    assert main(["evaluate", str(synth_dir / "target.ply"), str(graph_dir / "warped.ply"),
                 str(icp / "warped.ply"), "--name", "graph", "--name", "icp", "--plot-csv",
                 "--out", str(ev)]) == 0
    reports = {r["method"]: r for r in json.loads((ev / "report.json").read_text())["reports"]}
    assert set(reports) == {"graph", "icp"}
    # evaluate shares the schema of register's report
    reg = json.loads((icp / "report.json").read_text())["reports"][0]
    assert set(reg) == set(reports["icp"])
    assert reports["icp"]["ed_mean"] == pytest.approx(reg["ed_mean"], abs=1e-5)
    long = sio.read_rows(ev / "distances_long.csv")
    assert {r["method"] for r in long} == {"graph", "icp"}


def test_transfer_with_ground_truth(synth_dir, graph_dir, tmp_path):
    assert main(["transfer", "--waypoints", str(graph_dir / "waypoints_planned.csv"),
                 "--correspondence", str(graph_dir / "correspondence.csv"),
                 "--deformation", str(synth_dir / "deformation.json"), "--out", str(tmp_path)]) == 0
    assert len(sio.read_rows(tmp_path / "waypoint_errors.csv")) == 10
    # same rule as inside register; inputs were rounded to 6 decimals on disk
    moved = sio.read_rows(tmp_path / "waypoints_transferred.csv")
    expect = sio.read_rows(graph_dir / "waypoints_transferred.csv")
    assert [(r["gap"], r["side"]) for r in moved] == [(r["gap"], r["side"]) for r in expect]
    for a, b in zip(moved, expect):
        assert np.allclose([float(a[k]) for k in "xyz"], [float(b[k]) for k in "xyz"], atol=1e-4)


def test_transfer_identity(graph_dir, tmp_path):
    rows = sio.read_rows(graph_dir / "correspondence.csv")
    ident = tmp_path / "ident.csv"
    sio.write_rows(ident, list(rows[0]), [
        [r["level"], r["index"], r["sx"], r["sy"], r["sz"], r["sx"], r["sy"], r["sz"]] for r in rows])
    out = tmp_path / "o"
    assert main(["transfer", "--waypoints", str(graph_dir / "waypoints_planned.csv"),
                 "--correspondence", str(ident), "--out", str(out)]) == 0
    before = sio.read_rows(graph_dir / "waypoints_planned.csv")
    after = sio.read_rows(out / "waypoints_transferred.csv")
    for a, b in zip(before, after):
        assert np.allclose([float(a[k]) for k in "xyz"], [float(b[k]) for k in "xyz"], atol=1e-6)


def test_transfer_missing_correspondence(graph_dir, tmp_path):
    assert main(["transfer", "--waypoints", str(graph_dir / "waypoints_planned.csv"),
                 "--correspondence", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")]) == 3


def test_downsample(synth_dir, tmp_path):
    assert main(["downsample", str(synth_dir / "source.ply"), "--count", "500", "--out", str(tmp_path)]) == 0
    assert len(sio.read_point_cloud(tmp_path / "downsampled.ply")) == 500


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "skelreg.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("skelreg")
