"""File formats: binary point-cloud frames, lane JSON documents, run
configuration, and BEV grid exports. All writes are atomic."""

from __future__ import annotations

import dataclasses
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .annotate import PipelineConfig
from .errors import BadMagic, SchemaViolation, TruncatedFile, VersionUnsupported
from .geometry import LanePolyline, PointCloud
from .scene import SceneConfig
from . import rasterize

CLOUD_MAGIC = b"LSVL"
CLOUD_VERSION = 1
# magic, format version, reserved flags, point count — 20 bytes total
_HEADER = struct.Struct("<4sIIQ")
_RECORD_SIZE = 16


def _atomic_write(path, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-laneforge-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_cloud(cloud: PointCloud, path):
    records = np.column_stack([cloud.xyz, cloud.intensity]).astype("<f4")
    header = _HEADER.pack(CLOUD_MAGIC, CLOUD_VERSION, 0, records.shape[0])
    _atomic_write(path, header + records.tobytes())


def read_cloud(path, frame_id="") -> PointCloud:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise TruncatedFile(f"{path}: shorter than the {_HEADER.size}-byte header")
    magic, version, _flags, count = _HEADER.unpack_from(data)
    if magic != CLOUD_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != CLOUD_VERSION:
        raise VersionUnsupported(f"{path}: version {version}")
    expected = _HEADER.size + _RECORD_SIZE * count
    if len(data) != expected:
        raise TruncatedFile(f"{path}: {len(data)} bytes, expected {expected}")
    records = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(count, 4)
    return PointCloud(records[:, :3].astype(np.float64),
                      records[:, 3].astype(np.float64), frame_id=frame_id)


# ---------------------------------------------------------------------------
# lane JSON

@dataclass
class LaneRecord:
    instance_id: int
    points: np.ndarray
    source: str = "manual"
    curve: dict = None  # optional {a, b, c, d}

    def to_polyline(self) -> LanePolyline:
        return LanePolyline(self.points, instance_id=self.instance_id)


@dataclass
class LaneFile:
    frame_id: str
    lanes: list = field(default_factory=list)


def _check(cond, message, path):
    if not cond:
        raise SchemaViolation(message, path)


def lane_file_from_polylines(frame_id, lanes, source="manual", curves=None) -> LaneFile:
    records = []
    for i, lane in enumerate(lanes):
        curve = None
        if curves is not None and curves[i] is not None:
            c = curves[i]
            curve = {"a": c.a, "b": c.b, "c": c.c, "d": c.d}
        records.append(LaneRecord(instance_id=lane.instance_id, points=lane.points,
                                  source=source, curve=curve))
    return LaneFile(frame_id=frame_id, lanes=records)


def write_lanes(lane_file: LaneFile, path):
    doc = {"frame_id": lane_file.frame_id, "lanes": []}
    for rec in lane_file.lanes:
        entry = {"instance_id": int(rec.instance_id),
                 "points": np.asarray(rec.points, dtype=float).tolist(),
                 "source": rec.source}
        if rec.curve is not None:
            entry["curve"] = rec.curve
        doc["lanes"].append(entry)
    _atomic_write(path, json.dumps(doc, indent=1).encode())


def read_lanes(path) -> LaneFile:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"not valid JSON: {exc}") from exc
    _check(isinstance(doc, dict), "document must be an object", "$")
    _check(set(doc) == {"frame_id", "lanes"}, "expected keys frame_id, lanes", "$")
    _check(isinstance(doc["frame_id"], str), "frame_id must be a string", "$.frame_id")
    _check(isinstance(doc["lanes"], list), "lanes must be an array", "$.lanes")
    seen_ids = set()
    records = []
    for li, entry in enumerate(doc["lanes"]):
        loc = f"$.lanes[{li}]"
        _check(isinstance(entry, dict), "lane must be an object", loc)
        _check(set(entry) <= {"instance_id", "points", "source", "curve"},
               f"unknown keys {sorted(set(entry) - {'instance_id', 'points', 'source', 'curve'})}",
               loc)
        _check({"instance_id", "points", "source"} <= set(entry),
               "instance_id, points and source are required", loc)
        iid = entry["instance_id"]
        _check(isinstance(iid, int) and iid >= 0, "instance_id must be a non-negative int",
               loc + ".instance_id")
        _check(iid not in seen_ids, f"duplicate instance_id {iid}", loc + ".instance_id")
        seen_ids.add(iid)
        _check(entry["source"] in ("manual", "auto"), "source must be manual or auto",
               loc + ".source")
        pts = entry["points"]
        _check(isinstance(pts, list) and len(pts) >= 1, "points must be a non-empty array",
               loc + ".points")
        for pi, p in enumerate(pts):
            _check(isinstance(p, list) and len(p) == 3
                   and all(isinstance(v, (int, float)) and math.isfinite(v) for v in p),
                   "each point must be 3 finite numbers", loc + f".points[{pi}]")
        curve = entry.get("curve")
        if curve is not None:
            _check(isinstance(curve, dict) and set(curve) == {"a", "b", "c", "d"}
                   and all(isinstance(curve[k], (int, float)) and math.isfinite(curve[k])
                           for k in "abcd"),
                   "curve must hold finite a, b, c, d", loc + ".curve")
        records.append(LaneRecord(instance_id=iid, points=np.array(pts, dtype=np.float64),
                                  source=entry["source"], curve=curve))
    return LaneFile(frame_id=doc["frame_id"], lanes=records)


# ---------------------------------------------------------------------------
# run configuration

@dataclass
class RasterConfig:
    roi: tuple = rasterize.DEFAULT_ROI
    resolution: float = rasterize.BEV_RESOLUTION
    label_resolution: float = rasterize.LABEL_RESOLUTION
    voxel_size: tuple = rasterize.VOXEL_SIZE
    max_points_per_voxel: int = rasterize.MAX_POINTS_PER_VOXEL
    max_voxels: int = rasterize.MAX_VOXELS
    cluster_eps: float = rasterize.CLUSTER_EPS
    cluster_min_pts: int = rasterize.CLUSTER_MIN_PTS


@dataclass
class MetricConfig:
    resample_spacing: float = 0.5
    match_threshold: float = 1.5
    cd_spacing: float = 0.5
    tau: float = 0.5


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    rasterize: RasterConfig = field(default_factory=RasterConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)

    def to_dict(self):
        return dataclasses.asdict(self)


_SECTIONS = {"scene": SceneConfig, "pipeline": PipelineConfig,
             "rasterize": RasterConfig, "metrics": MetricConfig}
_TUPLE_FIELDS = {"roi", "voxel_size"}


def _build_section(cls, values, loc):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - fields
    _check(not unknown, f"unknown keys {sorted(unknown)}", loc)
    kwargs = {k: tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v
              for k, v in values.items()}
    return cls(**kwargs)


def run_config_from_dict(doc) -> RunConfig:
    _check(isinstance(doc, dict), "config must be an object", "$")
    unknown = set(doc) - set(_SECTIONS)
    _check(not unknown, f"unknown sections {sorted(unknown)}", "$")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = doc.get(name, {})
        _check(isinstance(section, dict), "section must be an object", f"$.{name}")
        kwargs[name] = _build_section(cls, section, f"$.{name}")
    return RunConfig(**kwargs)


def read_run_config(path) -> RunConfig:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"not valid JSON: {exc}") from exc
    return run_config_from_dict(doc)


def write_json_report(obj, path):
    _atomic_write(path, json.dumps(obj, indent=1, allow_nan=False).encode())


# ---------------------------------------------------------------------------
# BEV exports

def write_bev_pgm(grid, path, max_count=None):
    """Portable-graymap (P2) dump of per-cell occupancy counts."""
    counts = grid.count
    cap = int(max_count if max_count is not None else max(1, counts.max()))
    scaled = np.minimum(counts, cap)
    lines = [f"P2\n{counts.shape[1]} {counts.shape[0]}\n{cap}\n"]
    for row in scaled:
        lines.append(" ".join(str(int(v)) for v in row) + "\n")
    _atomic_write(path, "".join(lines).encode())


def bev_stats_payload(grid):
    occupied = int((grid.count > 0).sum())
    finite_z = grid.max_z[np.isfinite(grid.max_z)]
    return {
        "shape": list(grid.shape),
        "resolution": grid.resolution,
        "roi": list(grid.roi),
        "total_points": int(grid.count.sum()),
        "dropped_points": int(grid.dropped),
        "occupied_cells": occupied,
        "occupancy_fraction": occupied / grid.count.size,
        "max_z_range": ([float(finite_z.min()), float(finite_z.max())]
                        if finite_z.size else None),
    }


def write_histogram_csv(hist, edges, path, value_name="count"):
    lines = [f"bin_left,bin_right,{value_name}\n"]
    for i, v in enumerate(hist):
        lines.append(f"{float(edges[i])!r},{float(edges[i + 1])!r},{int(v)}\n")
    _atomic_write(path, "".join(lines).encode())
