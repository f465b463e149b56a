"""Line-oriented text formats: corner observations, point clouds, stream index.

Every file starts with a version line ``# surroundcal <kind> v<N> key=value ...``
followed by a CSV header and one record per line.  Floats are written with
``repr`` so a write/read round trip is exact.
"""
from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .camera import CheckerboardSpec, ViewObservation
from .errors import IoFailure, NonMonotonicTimestamps, ParseError
from .sync import SENSOR_KINDS, StreamLog, ingest

FORMAT_VERSION = 1
CORNER_COLUMNS = ("capture_index", "camera_id", "corner_id", "u", "v")
CLOUD_COLUMNS = ("x", "y", "z", "layer")
STREAM_COLUMNS = ("stream_id", "timestamp_us", "payload")


def _fmt(x: float) -> str:
    return repr(float(x))


def _version_line(kind: str, meta: Dict[str, str]) -> str:
    extra = "".join(f" {k}={v}" for k, v in meta.items())
    return f"# surroundcal {kind} v{FORMAT_VERSION}{extra}\n"


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from None


def _write_text(path, text: str) -> None:
    try:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from None


def _parse_header(lines: List[str], kind: str, columns: Sequence[str], path, optional: Sequence[str] = ()) -> Tuple[Dict[str, str], List[str]]:
    if not lines:
        raise ParseError("empty file", path, 1)
    first = lines[0].split()
    if len(first) < 3 or first[0] != "#" or first[1] != "surroundcal" or first[2] != kind:
        raise ParseError(f"expected '# surroundcal {kind} v{FORMAT_VERSION}' version line", path, 1)
    if len(first) < 4 or first[3] != f"v{FORMAT_VERSION}":
        found = first[3] if len(first) > 3 else "none"
        raise ParseError(f"unsupported {kind} format version {found}", path, 1)
    meta = {}
    for tok in first[4:]:
        if "=" not in tok:
            raise ParseError(f"malformed metadata token {tok!r}", path, 1)
        k, v = tok.split("=", 1)
        meta[k] = v
    if len(lines) < 2:
        raise ParseError("missing column header", path, 2)
    header = [h.strip() for h in lines[1].split(",")]
    required = [c for c in columns if c not in optional]
    if header[: len(required)] != required or any(h not in columns for h in header) or len(set(header)) != len(header):
        raise ParseError(f"column header must be {','.join(columns)}", path, 2)
    return meta, header


def _rows(lines, header, path, start_line=3):
    for n, raw in enumerate(csv.reader(lines[2:]), start=start_line):
        if not raw or (len(raw) == 1 and not raw[0].strip()):
            continue
        if len(raw) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(raw)}", path, n)
        yield n, dict(zip(header, (f.strip() for f in raw)))


def _int(row, key, path, line):
    try:
        return int(row[key])
    except ValueError:
        raise ParseError(f"not an integer: {row[key]!r}", path, line, key) from None


def _float(row, key, path, line):
    try:
        v = float(row[key])
    except ValueError:
        raise ParseError(f"not a number: {row[key]!r}", path, line, key) from None
    if not np.isfinite(v):
        raise ParseError(f"non-finite value {row[key]!r}", path, line, key)
    return v


# ---------------------------------------------------------------------------
# corners


@dataclass
class CornerFile:
    spec: CheckerboardSpec
    image_size: Tuple[int, int]
    views: List[ViewObservation]

    def views_for(self, camera_id) -> List[ViewObservation]:
        return [v for v in self.views if v.camera_id == camera_id]

    @property
    def camera_ids(self) -> List[str]:
        return sorted({v.camera_id for v in self.views})


def format_corners(spec: CheckerboardSpec, image_size, views: Sequence[ViewObservation]) -> str:
    buf = _io.StringIO()
    buf.write(_version_line("corners", {"board": str(spec), "image": f"{image_size[0]}x{image_size[1]}"}))
    buf.write(",".join(CORNER_COLUMNS) + "\n")
    for v in sorted(views, key=lambda v: (v.capture_index, v.camera_id)):
        for cid, (u, w) in zip(v.corner_ids, v.pixels):
            buf.write(f"{v.capture_index},{v.camera_id},{int(cid)},{_fmt(u)},{_fmt(w)}\n")
    return buf.getvalue()


def write_corners(path, spec: CheckerboardSpec, image_size, views: Sequence[ViewObservation]) -> None:
    _write_text(path, format_corners(spec, image_size, views))


def parse_corners(text: str, path="<string>") -> CornerFile:
    lines = text.splitlines()
    meta, header = _parse_header(lines, "corners", CORNER_COLUMNS, path)
    for key in ("board", "image"):
        if key not in meta:
            raise ParseError(f"version line lacks {key}=", path, 1, key)
    try:
        spec = CheckerboardSpec.parse(meta["board"])
    except ValueError as exc:
        raise ParseError(f"bad board spec: {exc}", path, 1, "board") from None
    try:
        w, h = (int(x) for x in meta["image"].lower().split("x"))
        if w <= 0 or h <= 0:
            raise ValueError
    except ValueError:
        raise ParseError(f"bad image size {meta['image']!r}", path, 1, "image") from None
    groups: Dict[Tuple[int, str], List] = {}
    seen = {}
    for n, row in _rows(lines, header, path):
        cap = _int(row, "capture_index", path, n)
        if cap < 0:
            raise ParseError("negative capture index", path, n, "capture_index")
        cam = row["camera_id"]
        if not cam:
            raise ParseError("empty camera id", path, n, "camera_id")
        cid = _int(row, "corner_id", path, n)
        if not 0 <= cid < spec.n_corners:
            raise ParseError(f"corner id {cid} outside board with {spec.n_corners} corners", path, n, "corner_id")
        u = _float(row, "u", path, n)
        v = _float(row, "v", path, n)
        key = (cap, cam, cid)
        if key in seen:
            raise ParseError(f"duplicate corner (also line {seen[key]})", path, n, "corner_id")
        seen[key] = n
        groups.setdefault((cap, cam), []).append((cid, u, v))
    views = []
    for (cap, cam), items in groups.items():
        ids = np.array([i for i, _, _ in items])
        px = np.array([[u, v] for _, u, v in items])
        views.append(ViewObservation(cam, cap, ids, px))
    return CornerFile(spec, (w, h), views)


def read_corners(path) -> CornerFile:
    return parse_corners(_read_text(path), str(path))


# ---------------------------------------------------------------------------
# point clouds


@dataclass
class PointCloud:
    points: np.ndarray
    layers: Optional[np.ndarray]
    meta: Dict[str, str]


def format_cloud(points, layers=None, meta: Optional[Dict[str, str]] = None) -> str:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    buf = _io.StringIO()
    buf.write(_version_line("cloud", meta or {}))
    cols = CLOUD_COLUMNS if layers is not None else CLOUD_COLUMNS[:3]
    buf.write(",".join(cols) + "\n")
    for i, p in enumerate(pts):
        line = f"{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])}"
        if layers is not None:
            line += f",{int(layers[i])}"
        buf.write(line + "\n")
    return buf.getvalue()


def write_cloud(path, points, layers=None, meta=None) -> None:
    _write_text(path, format_cloud(points, layers, meta))


def parse_cloud(text: str, path="<string>") -> PointCloud:
    lines = text.splitlines()
    meta, header = _parse_header(lines, "cloud", CLOUD_COLUMNS, path, optional=("layer",))
    pts, layers = [], []
    for n, row in _rows(lines, header, path):
        pts.append([_float(row, k, path, n) for k in ("x", "y", "z")])
        if "layer" in row:
            layers.append(_int(row, "layer", path, n))
    P = np.array(pts, dtype=float).reshape(-1, 3)
    return PointCloud(P, np.array(layers, dtype=int) if "layer" in header else None, meta)


def read_cloud(path) -> PointCloud:
    return parse_cloud(_read_text(path), str(path))


# ---------------------------------------------------------------------------
# stream index


def format_streams(logs: Sequence[StreamLog]) -> str:
    kinds = ",".join(f"{log.stream_id}:{log.sensor_kind}" for log in logs)
    buf = _io.StringIO()
    buf.write(_version_line("streams", {"kinds": kinds}))
    buf.write(",".join(STREAM_COLUMNS) + "\n")
    for log in logs:
        for t, p in zip(log.timestamps, log.payloads):
            buf.write(f"{log.stream_id},{int(t)},{p}\n")
    return buf.getvalue()


def write_streams(path, logs: Sequence[StreamLog]) -> None:
    _write_text(path, format_streams(logs))


def parse_streams(text: str, path="<string>") -> List[StreamLog]:
    lines = text.splitlines()
    meta, header = _parse_header(lines, "streams", STREAM_COLUMNS, path)
    if "kinds" not in meta:
        raise ParseError("version line lacks kinds=", path, 1, "kinds")
    kinds = {}
    for item in filter(None, meta["kinds"].split(",")):
        sid, _, kind = item.partition(":")
        if kind not in SENSOR_KINDS:
            raise ParseError(f"unknown sensor kind {kind!r} for stream {sid!r}", path, 1, "kinds")
        kinds[sid] = kind
    records: Dict[str, List] = {sid: [] for sid in kinds}
    lines_of: Dict[str, List[int]] = {sid: [] for sid in kinds}
    for n, row in _rows(lines, header, path):
        sid = row["stream_id"]
        if sid not in kinds:
            raise ParseError(f"stream {sid!r} not declared in kinds=", path, n, "stream_id")
        t = _int(row, "timestamp_us", path, n)
        if t < 0:
            raise ParseError("negative timestamp", path, n, "timestamp_us")
        records[sid].append((t, row["payload"]))
        lines_of[sid].append(n)
    logs = []
    for sid, kind in kinds.items():
        try:
            logs.append(ingest(sid, kind, records[sid]))
        except NonMonotonicTimestamps as exc:
            raise ParseError(str(exc), path, lines_of[sid][exc.index], "timestamp_us") from None
    return logs


def read_streams(path) -> List[StreamLog]:
    return parse_streams(_read_text(path), str(path))
