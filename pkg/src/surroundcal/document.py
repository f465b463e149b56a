"""The calibration document: a versioned JSON file every CLI stage extends.

Unknown top-level and per-camera keys are kept and written back unchanged.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .camera import INTRINSIC_NAMES, CameraIntrinsics
from .errors import IoFailure, ParseError
from .geometry import Pose, Rotation

DOCUMENT_FORMAT = "surroundcal-calibration"
DOCUMENT_VERSION = 1
STAGES = ("intrinsics", "extrinsics", "lidar")

_CAMERA_KEYS = ("intrinsics", "pose_in_reference")
_TOP_KEYS = ("format", "version", "reference_camera", "board", "cameras", "lidar_camera", "metrics", "provenance")


def pose_to_json(p: Pose) -> Dict[str, List[float]]:
    return {"quaternion_wxyz": [float(x) for x in p.rotation.quat], "translation_m": [float(x) for x in p.t]}


def pose_from_json(obj, where: str, path=None) -> Pose:
    if not isinstance(obj, dict):
        raise ParseError("pose must be an object", path, field=where)
    q = _numbers(obj.get("quaternion_wxyz"), 4, f"{where}.quaternion_wxyz", path)
    t = _numbers(obj.get("translation_m"), 3, f"{where}.translation_m", path)
    try:
        return Pose(Rotation(np.array(q)), np.array(t))
    except ValueError as exc:
        raise ParseError(str(exc), path, field=where) from None


def intrinsics_to_json(iv: CameraIntrinsics) -> Dict[str, Any]:
    out = {k: float(v) for k, v in zip(INTRINSIC_NAMES, iv.to_vector())}
    out["width"] = int(iv.width)
    out["height"] = int(iv.height)
    return out


def intrinsics_from_json(obj, where: str, path=None) -> CameraIntrinsics:
    if not isinstance(obj, dict):
        raise ParseError("intrinsics must be an object", path, field=where)
    vals = {}
    for k in INTRINSIC_NAMES:
        vals[k] = _number(obj.get(k), f"{where}.{k}", path)
    for k in ("width", "height"):
        v = obj.get(k)
        if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
            raise ParseError("must be a positive integer", path, field=f"{where}.{k}")
        vals[k] = v
    try:
        return CameraIntrinsics(**vals)
    except ValueError as exc:
        raise ParseError(str(exc), path, field=where) from None


def _number(v, where, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise ParseError("missing or non-numeric value", path, field=where)
    return float(v)


def _numbers(v, n, where, path):
    if not isinstance(v, list) or len(v) != n:
        raise ParseError(f"expected a list of {n} numbers", path, field=where)
    return [_number(x, f"{where}[{i}]", path) for i, x in enumerate(v)]


@dataclass
class CameraEntry:
    intrinsics: Optional[CameraIntrinsics] = None
    pose_in_reference: Optional[Pose] = None
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class LidarCameraEntry:
    pose_reference_to_vehicle: Pose
    rms_m: Dict[int, float] = field(default_factory=dict)


@dataclass
class CalibrationDocument:
    reference_camera: str
    board: Optional[str] = None
    cameras: Dict[str, CameraEntry] = field(default_factory=dict)
    lidar_camera: Optional[LidarCameraEntry] = None
    metrics: Dict[str, Any] = field(default_factory=dict)
    provenance: Dict[str, Any] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)
    version: int = DOCUMENT_VERSION

    def camera(self, cid: str) -> CameraEntry:
        return self.cameras.setdefault(cid, CameraEntry())

    def intrinsics(self) -> Dict[str, CameraIntrinsics]:
        return {c: e.intrinsics for c, e in sorted(self.cameras.items()) if e.intrinsics is not None}

    def rig_poses(self) -> Dict[str, Pose]:
        return {c: e.pose_in_reference for c, e in sorted(self.cameras.items()) if e.pose_in_reference is not None}

    def record_stage(self, stage: str, inputs: Dict[str, str], config: Dict[str, Any]) -> None:
        prov = self.provenance
        prov.setdefault("stages", [])
        prov["stages"] = [s for s in prov["stages"] if s.get("stage") != stage] + [
            {"stage": stage, "inputs": dict(sorted(inputs.items())), "config": dict(sorted(config.items()))}
        ]
        prov.setdefault("timestamp", None)

    def to_json_obj(self) -> Dict[str, Any]:
        cams = {}
        for cid in sorted(self.cameras):
            e = self.cameras[cid]
            cams[cid] = {
                "intrinsics": intrinsics_to_json(e.intrinsics) if e.intrinsics is not None else None,
                "pose_in_reference": pose_to_json(e.pose_in_reference) if e.pose_in_reference is not None else None,
                **e.extra,
            }
        lc = None
        if self.lidar_camera is not None:
            lc = {
                "pose_reference_to_vehicle": pose_to_json(self.lidar_camera.pose_reference_to_vehicle),
                "rms_m": {str(k): float(v) for k, v in sorted(self.lidar_camera.rms_m.items())},
            }
        obj = {
            "format": DOCUMENT_FORMAT,
            "version": self.version,
            "reference_camera": self.reference_camera,
            "board": self.board,
            "cameras": cams,
            "lidar_camera": lc,
            "metrics": self.metrics,
            "provenance": self.provenance,
        }
        obj.update(self.extra)
        return obj

    def dumps(self) -> str:
        return json.dumps(self.to_json_obj(), indent=2, allow_nan=False) + "\n"

    def save(self, path) -> None:
        try:
            p = Path(path)
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(self.dumps(), encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from None

    @classmethod
    def loads(cls, text: str, path=None) -> "CalibrationDocument":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, path, exc.lineno) from None
        if not isinstance(obj, dict):
            raise ParseError("document must be a JSON object", path, 1)
        return cls.from_json_obj(obj, path)

    @classmethod
    def load(cls, path) -> "CalibrationDocument":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from None
        return cls.loads(text, str(path))

    @classmethod
    def from_json_obj(cls, obj: Dict[str, Any], path=None) -> "CalibrationDocument":
        for key in ("format", "version", "reference_camera", "cameras", "provenance"):
            if key not in obj:
                raise ParseError("required field missing", path, field=key)
        if obj["format"] != DOCUMENT_FORMAT:
            raise ParseError(f"unexpected format {obj['format']!r}", path, field="format")
        if obj["version"] != DOCUMENT_VERSION or isinstance(obj["version"], bool):
            raise ParseError(f"unsupported version {obj['version']!r}", path, field="version")
        if not isinstance(obj["reference_camera"], str):
            raise ParseError("must be a string", path, field="reference_camera")
        board = obj.get("board")
        if board is not None and not isinstance(board, str):
            raise ParseError("must be a string or null", path, field="board")
        if not isinstance(obj["cameras"], dict):
            raise ParseError("must be an object", path, field="cameras")
        cams = {}
        for cid, e in obj["cameras"].items():
            where = f"cameras.{cid}"
            if not isinstance(e, dict):
                raise ParseError("must be an object", path, field=where)
            intr = e.get("intrinsics")
            pose = e.get("pose_in_reference")
            cams[cid] = CameraEntry(
                intrinsics_from_json(intr, f"{where}.intrinsics", path) if intr is not None else None,
                pose_from_json(pose, f"{where}.pose_in_reference", path) if pose is not None else None,
                {k: v for k, v in e.items() if k not in _CAMERA_KEYS},
            )
        lc = obj.get("lidar_camera")
        lidar = None
        if lc is not None:
            if not isinstance(lc, dict) or "pose_reference_to_vehicle" not in lc:
                raise ParseError("required field missing", path, field="lidar_camera.pose_reference_to_vehicle")
            rms = lc.get("rms_m", {})
            if not isinstance(rms, dict):
                raise ParseError("must be an object", path, field="lidar_camera.rms_m")
            try:
                rms_m = {int(k): _number(v, f"lidar_camera.rms_m.{k}", path) for k, v in rms.items()}
            except ValueError:
                raise ParseError("keys must be capture indices", path, field="lidar_camera.rms_m") from None
            lidar = LidarCameraEntry(pose_from_json(lc["pose_reference_to_vehicle"], "lidar_camera.pose_reference_to_vehicle", path), rms_m)
        for key in ("metrics", "provenance"):
            if key in obj and not isinstance(obj[key], dict):
                raise ParseError("must be an object", path, field=key)
        return cls(
            obj["reference_camera"],
            board,
            cams,
            lidar,
            obj.get("metrics", {}),
            obj["provenance"],
            {k: v for k, v in obj.items() if k not in _TOP_KEYS},
            obj["version"],
        )

    def missing_fields(self) -> List[str]:
        """Fields a fully calibrated document carries but this one lacks."""
        missing = []
        if not self.cameras:
            missing.append("cameras")
        for cid, e in sorted(self.cameras.items()):
            if e.intrinsics is None:
                missing.append(f"cameras.{cid}.intrinsics")
            if e.pose_in_reference is None:
                missing.append(f"cameras.{cid}.pose_in_reference")
        if self.reference_camera not in self.cameras:
            missing.append(f"cameras.{self.reference_camera}")
        if self.board is None:
            missing.append("board")
        if self.lidar_camera is None:
            missing.append("lidar_camera")
        for stage in STAGES:
            if stage not in self.metrics:
                missing.append(f"metrics.{stage}")
        done = {s.get("stage") for s in self.provenance.get("stages", [])}
        for stage in STAGES:
            if stage not in done:
                missing.append(f"provenance.stages.{stage}")
        if "timestamp" not in self.provenance:
            missing.append("provenance.timestamp")
        return missing


def file_digest(path) -> str:
    """SHA-256 of a file, or of every file below a directory in sorted order."""
    p = Path(path)
    h = hashlib.sha256()
    try:
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file()):
                h.update(f.relative_to(p).as_posix().encode())
                h.update(b"\0")
                h.update(f.read_bytes())
        else:
            h.update(p.read_bytes())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from None
    return "sha256:" + h.hexdigest()
