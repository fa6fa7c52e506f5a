"""File formats: point clouds (CSV, ascii PLY), run configuration, pipeline artifacts."""
from __future__ import annotations

import csv
import dataclasses
import io as _io
import json
import math
import os
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import EmptyFile, IoError, ParseError, SchemaError
from .geometry import PointCloud

FORMATS = ("xyz-csv", "ascii-ply")


# ---------------------------------------------------------------- run config


@dataclass
class RunConfig:
    som1_rows: int = 20
    som1_cols: int = 20
    som2_rows: int = 5
    som2_cols: int = 8
    learning_rate: float = 0.5
    learning_rate_final: float = 0.01
    sigma0: Optional[float] = None
    sigma_final: float = 0.1
    epochs1: int = 200
    epochs2: int = 500
    seed: int = 0
    t_theta: float = 60.0
    n2: int = 6
    n3: int = 6
    n4: int = 8
    n5: int = 10
    n_r: int = 10
    downsample_count: int = 0
    icp_max_iter: int = 100
    icp_tol: float = 1e-4
    prune_dead: bool = True

    def __post_init__(self):
        validate_config(self)

    @property
    def rib_samples(self) -> dict[int, int]:
        return {2: self.n2, 3: self.n3, 4: self.n4, 5: self.n5}

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_COUNT_FIELDS = (
    "som1_rows", "som1_cols", "som2_rows", "som2_cols", "epochs1", "epochs2",
    "n2", "n3", "n4", "n5", "icp_max_iter",
)


def validate_config(cfg: RunConfig) -> None:
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "sigma0" and value is None:
            continue
        if f.type == "bool":
            if not isinstance(value, bool):
                raise SchemaError(f.name, f"expected true or false, got {value!r}")
            continue
        if f.type == "int":
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise SchemaError(f.name, f"expected an integer, got {value!r}")
        else:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise SchemaError(f.name, f"expected a number, got {value!r}")
            if not math.isfinite(value):
                raise SchemaError(f.name, "must be finite")
    for name in _COUNT_FIELDS:
        if getattr(cfg, name) < 1:
            raise SchemaError(name, "must be >= 1")
    if not 0.0 < cfg.t_theta < 180.0:
        raise SchemaError("t_theta", "must lie in (0, 180) degrees")
    if cfg.n_r < 3:
        raise SchemaError("n_r", "must be >= 3")
    if not 0.0 < cfg.learning_rate <= 1.0:
        raise SchemaError("learning_rate", "must lie in (0, 1]")
    if not 0.0 < cfg.learning_rate_final <= cfg.learning_rate:
        raise SchemaError("learning_rate_final", "must lie in (0, learning_rate]")
    if cfg.sigma0 is not None and cfg.sigma0 <= 0:
        raise SchemaError("sigma0", "must be > 0")
    if cfg.sigma_final <= 0:
        raise SchemaError("sigma_final", "must be > 0")
    if cfg.downsample_count < 0:
        raise SchemaError("downsample_count", "must be >= 0 (0 disables)")
    if cfg.icp_tol <= 0:
        raise SchemaError("icp_tol", "must be > 0")


def config_from_dict(data: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in known:
            raise SchemaError(key, "unknown configuration key")
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise SchemaError("config", str(exc)) from exc


def read_config(path) -> RunConfig:
    """Read a flat JSON object; missing keys take the defaults."""
    text = _read_text(path)
    if not text.strip():
        return RunConfig()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from exc
    if not isinstance(data, dict):
        raise SchemaError("config", "top level must be an object")
    for key, value in data.items():
        if isinstance(value, (dict, list)):
            raise SchemaError(key, "nested values are not allowed")
    return config_from_dict(data)


def write_config(cfg: RunConfig, path) -> None:
    write_text(path, json.dumps(cfg.to_dict(), indent=2) + "\n")


# ---------------------------------------------------------------- low-level writes


def write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    write_bytes(path, text.encode("utf-8"))


def write_bytes(path, data: bytes) -> None:
    path = Path(path)
    if path.is_dir():
        raise IoError(f"cannot write {path}: is a directory")
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------- point clouds


def infer_format(path) -> str:
    return "ascii-ply" if str(path).lower().endswith(".ply") else "xyz-csv"


def read_point_cloud(path, fmt: Optional[str] = None) -> PointCloud:
    fmt = fmt or infer_format(path)
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    text = _read_text(path)
    if not text.strip():
        raise EmptyFile(f"{path} is empty")
    if fmt == "ascii-ply":
        return _parse_ply(text)
    return _parse_csv(text)


def _parse_csv(text: str) -> PointCloud:
    pts, labels = [], []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tokens = [t.strip() for t in line.split(",")]
        if len(tokens) not in (3, 4):
            raise ParseError(f"expected 3 or 4 fields, got {len(tokens)}", lineno)
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise ParseError("inconsistent column count", lineno)
        pts.append(_floats(tokens[:3], lineno))
        if width == 4:
            labels.append(_int(tokens[3], lineno))
    if not pts:
        raise EmptyFile("no point records")
    return PointCloud(np.array(pts), np.array(labels) if width == 4 else None)


def _floats(tokens, lineno):
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"non-numeric coordinate in {tokens!r}", lineno) from None
    if not all(math.isfinite(v) for v in values):
        raise ParseError("non-finite coordinate", lineno)
    return values


def _int(token, lineno):
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"non-integer label {token!r}", lineno) from None


def _parse_ply(text: str) -> PointCloud:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1)
    elements = []  # (name, count, [property names])
    body_start = None
    for lineno, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise ParseError("only ascii PLY is supported", lineno)
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise ParseError("malformed element line", lineno)
            elements.append((tokens[1], _int(tokens[2], lineno), []))
        elif tokens[0] == "property":
            if not elements:
                raise ParseError("property before element", lineno)
            if tokens[1] == "list":
                elements[-1][2].append(None)
            else:
                elements[-1][2].append(tokens[-1])
        elif tokens[0] == "end_header":
            body_start = lineno
            break
        else:
            raise ParseError(f"unexpected header keyword {tokens[0]!r}", lineno)
    if body_start is None:
        raise ParseError("missing end_header", len(lines))
    lineno = body_start
    pts, labels = [], []
    for name, count, props in elements:
        if name != "vertex":
            lineno += count
            continue
        try:
            ix, iy, iz = (props.index(k) for k in ("x", "y", "z"))
        except ValueError:
            raise ParseError("vertex element lacks x/y/z", body_start) from None
        il = props.index("label") if "label" in props else None
        for _ in range(count):
            lineno += 1
            if lineno > len(lines):
                raise ParseError("fewer vertex records than declared", lineno)
            tokens = lines[lineno - 1].split()
            if len(tokens) < len(props):
                raise ParseError("short vertex record", lineno)
            pts.append(_floats([tokens[ix], tokens[iy], tokens[iz]], lineno))
            if il is not None:
                labels.append(_int(tokens[il], lineno))
        break
    if not pts:
        raise EmptyFile("no vertex records")
    return PointCloud(np.array(pts), np.array(labels) if labels else None)


def format_point_cloud(cloud: PointCloud, fmt: str = "xyz-csv") -> str:
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    labeled = cloud.labels is not None
    rows = []
    for i, p in enumerate(cloud.points):
        row = f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}"
        if labeled:
            row += f" {int(cloud.labels[i])}"
        rows.append(row if fmt == "ascii-ply" else row.replace(" ", ","))
    if fmt == "xyz-csv":
        return "\n".join(rows) + "\n"
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if labeled:
        header.append("property uchar label")
    header.append("end_header")
    return "\n".join(header + rows) + "\n"


def write_point_cloud(cloud: PointCloud, path, fmt: Optional[str] = None) -> None:
    write_text(path, format_point_cloud(cloud, fmt or infer_format(path)))


# ---------------------------------------------------------------- tabular artifacts


def format_rows(header: list[str], rows) -> str:
    """CSV text with a header line; floats get 6 decimals."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_rows(path, header: list[str], rows) -> None:
    write_text(path, format_rows(header, rows))


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_rows(path) -> list[dict[str, str]]:
    text = _read_text(path)
    if not text.strip():
        raise EmptyFile(f"{path} is empty")
    return list(csv.DictReader(_io.StringIO(text)))


def format_json(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_json(path, payload) -> None:
    write_text(path, format_json(payload))


def read_json(path):
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from exc
