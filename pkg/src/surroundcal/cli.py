"""``surroundcal`` command line.

Exit codes: 0 success, 1 usage, 2 input validation, 3 solver failure.
Errors go to stderr as ``error[<category>]: <message>``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence


from . import errors, io, pipeline, report, sim
from .camera import CheckerboardSpec
from .document import CalibrationDocument
from .lidar import LidarCameraExtrinsics, project_cloud
from .sync import align

EXIT_USAGE, EXIT_INPUT, EXIT_SOLVER = 1, 2, 3
DOCUMENT_NAME = "calibration.json"

_INPUT_ERRORS = (errors.ParseError, errors.IoFailure, errors.FrameMismatch, errors.EmptyStream, errors.NonMonotonicTimestamps)
_SOLVER_ERRORS = (
    errors.DisconnectedGraph,
    errors.NoConvergence,
    errors.DegenerateGeometry,
    errors.NumericalFailure,
    errors.InsufficientViews,
    errors.NoConsensus,
    errors.BehindCamera,
)

# simulate defaults: desk-scale noise on both sensors
SIM_DEFAULTS = {"seed": 0, "pixel_sigma": 0.5, "lidar_sigma": 0.01, "dropout_rate": 0.0, "clutter_fraction": 0.2}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="surroundcal", description="Surround-view camera and LIDAR calibration.")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON file of option defaults; flags take precedence")
        sp.add_argument("--out", required=False, help="output directory" + ("" if out_required else " (optional)"))
        return sp

    s = common(sub.add_parser("simulate", help="write a synthetic scenario with ground truth"))
    s.add_argument("--seed", type=int)
    s.add_argument("--pixel-sigma", type=float)
    s.add_argument("--lidar-sigma", type=float)
    s.add_argument("--dropout-rate", type=float)
    s.add_argument("--clutter-fraction", type=float)

    s = common(sub.add_parser("calib-intrinsics", help="per-camera intrinsic calibration"))
    s.add_argument("--corners")
    s.add_argument("--reference-camera")
    s.add_argument("--calibration", help="existing document to extend (default: start a new one)")

    s = common(sub.add_parser("calib-extrinsics", help="pose-graph initialization and bundle adjustment"))
    s.add_argument("--corners")
    s.add_argument("--calibration", help=f"input document (default: <out>/{DOCUMENT_NAME})")
    s.add_argument("--refine-intrinsics", action="store_true", default=None)
    s.add_argument("--robust", action="store_true", default=None, help="Huber loss, 1 px scale")

    s = common(sub.add_parser("calib-lidar", help="camera reference to LIDAR/vehicle transform"))
    s.add_argument("--corners")
    s.add_argument("--streams")
    s.add_argument("--clouds", help="directory holding the cloud files (default: paths relative to the stream index)")
    s.add_argument("--calibration")
    s.add_argument("--tolerance-us", type=int)
    s.add_argument("--presegmented", action="store_true", default=None, help="clouds hold board returns only; skip RANSAC")
    s.add_argument("--seed", type=int)

    s = common(sub.add_parser("project", help="project a vehicle-frame cloud into every camera"))
    s.add_argument("--cloud")
    s.add_argument("--calibration")

    s = common(sub.add_parser("sync-check", help="align every stream against a reference stream"), out_required=False)
    s.add_argument("--streams")
    s.add_argument("--tolerance-us", type=int)
    s.add_argument("--reference", help="reference stream id (default: first camera stream)")

    s = common(sub.add_parser("report", help="text report and plot-ready tables"), out_required=False)
    s.add_argument("--calibration")
    s.add_argument("--truth", help="ground-truth document for error checks")
    return p


def _load_config(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise errors.IoFailure(f"cannot read config {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise errors.ParseError(exc.msg, path, exc.lineno) from None
    if not isinstance(obj, dict):
        raise errors.ParseError("config must be a JSON object", path, 1)
    return {k.replace("-", "_"): v for k, v in obj.items()}


class _Options:
    """Flag value if given, else config value, else default."""

    def __init__(self, args: argparse.Namespace, config: Dict[str, Any]):
        self._args = vars(args)
        self._config = config

    def get(self, key: str, default=None, required: bool = False):
        v = self._args.get(key)
        if v is None:
            v = self._config.get(key, default)
        if v is None and required:
            raise UsageError(f"--{key.replace('_', '-')} is required (flag or config)")
        return v


def _out_dir(opt: _Options) -> Path:
    out = Path(opt.get("out", required=True))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise errors.IoFailure(f"cannot create {out}: {exc.strerror or exc}") from None
    return out


def _document(opt: _Options, out: Optional[Path]) -> tuple:
    path = opt.get("calibration")
    if path is None:
        if out is None:
            raise UsageError("--calibration is required")
        path = out / DOCUMENT_NAME
    return CalibrationDocument.load(path), path


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise errors.IoFailure(f"cannot write {path}: {exc.strerror or exc}") from None


def cmd_simulate(opt: _Options) -> int:
    out = _out_dir(opt)
    vals = {k: opt.get(k, d) for k, d in SIM_DEFAULTS.items()}
    try:
        noise = sim.NoiseModel(vals["pixel_sigma"], vals["lidar_sigma"], vals["dropout_rate"], int(vals["seed"]))
    except ValueError as exc:
        raise errors.ParseError(str(exc), field="noise") from None
    rig = sim.default_rig()
    spec = CheckerboardSpec()
    plan = sim.default_capture_plan(spec, rig)
    paths = sim.export_scenario(rig, plan, spec, noise, out, clutter_fraction=vals["clutter_fraction"])
    for k in ("corners", "streams", "clouds", "truth"):
        print(f"{k}: {paths[k]}")
    return 0


def cmd_calib_intrinsics(opt: _Options) -> int:
    out = _out_dir(opt)
    corners_path = opt.get("corners", required=True)
    corners = io.read_corners(corners_path)
    if opt.get("calibration"):
        doc, _ = _document(opt, out)
    else:
        ref = opt.get("reference_camera", "cam0")
        if ref not in corners.camera_ids:
            raise errors.ParseError(f"reference camera {ref!r} has no corner observations", corners_path)
        doc = pipeline.new_document(corners, ref)
    pipeline.run_intrinsics(doc, corners, corners_path)
    doc.save(out / DOCUMENT_NAME)
    for cid, m in doc.metrics["intrinsics"]["cameras"].items():
        print(f"{cid}: rms {m['rms_px']:.4f} px over {m['views']} views")
    return 0


def cmd_calib_extrinsics(opt: _Options) -> int:
    out = _out_dir(opt)
    corners_path = opt.get("corners", required=True)
    corners = io.read_corners(corners_path)
    doc, _ = _document(opt, out)
    try:
        pipeline.run_extrinsics(doc, corners, corners_path, bool(opt.get("refine_intrinsics", False)), bool(opt.get("robust", False)))
    except errors.DisconnectedGraph as exc:
        iso = exc.isolated_cameras
        raise errors.DisconnectedGraph(f"{exc}; isolated cameras: {', '.join(iso) if iso else 'none'}", exc.components) from None
    doc.save(out / DOCUMENT_NAME)
    m = doc.metrics["extrinsics"]
    print(f"bundle adjustment: rms {m['rms_px']:.4f} px, {m['iterations']} iterations ({m['stop_reason']})")
    return 0


def cmd_calib_lidar(opt: _Options) -> int:
    out = _out_dir(opt)
    corners_path = opt.get("corners", required=True)
    streams_path = opt.get("streams", required=True)
    corners = io.read_corners(corners_path)
    doc, _ = _document(opt, out)
    tol = int(opt.get("tolerance_us", pipeline.DEFAULT_TOLERANCE_US))
    if tol < 0:
        raise errors.ParseError("tolerance must be non-negative", field="tolerance_us")
    pairs, _ = pipeline.run_lidar(
        doc, corners, corners_path, streams_path, opt.get("clouds"), tol,
        bool(opt.get("presegmented", False)), int(opt.get("seed", 0)),
    )
    doc.save(out / DOCUMENT_NAME)
    print(f"lidar-camera: {len(pairs)} plane pairs, point-plane rms {doc.metrics['lidar']['rms_m'] * 1000:.2f} mm")
    return 0


def cmd_project(opt: _Options) -> int:
    out = _out_dir(opt)
    doc, _ = _document(opt, out)
    if doc.lidar_camera is None or not doc.rig_poses():
        raise errors.ParseError("document lacks camera poses or the lidar-camera transform", field="lidar_camera")
    cloud = io.read_cloud(opt.get("cloud", required=True))
    intr = doc.intrinsics()
    extr = LidarCameraExtrinsics(doc.lidar_camera.pose_reference_to_vehicle, {}, 0)
    proj = project_cloud(extr, doc.rig_poses(), intr, cloud.points, cameras=sorted(set(intr) & set(doc.rig_poses())))
    lines = ["camera_id,point_index,u,v,depth_m"]
    counts = {}
    for cid, (uv, depth, idx) in proj.items():
        iv = intr[cid]
        inside = (uv[:, 0] >= 0) & (uv[:, 0] < iv.width) & (uv[:, 1] >= 0) & (uv[:, 1] < iv.height)
        counts[cid] = int(inside.sum())
        for (u, v), d, i in zip(uv[inside], depth[inside], idx[inside]):
            lines.append(f"{cid},{int(i)},{float(u)!r},{float(v)!r},{float(d)!r}")
    _write(out / "projection.csv", "\n".join(lines) + "\n")
    for cid, n in counts.items():
        print(f"{cid}: {n} points in image")
    return 0


def cmd_sync_check(opt: _Options) -> int:
    streams = io.read_streams(opt.get("streams", required=True))
    if not streams:
        raise errors.ParseError("stream index declares no streams", field="kinds")
    tol = int(opt.get("tolerance_us", pipeline.DEFAULT_TOLERANCE_US))
    if tol < 0:
        raise errors.ParseError("tolerance must be non-negative", field="tolerance_us")
    ids = [s.stream_id for s in streams]
    ref_id = opt.get("reference")
    if ref_id is None:
        cams = [s.stream_id for s in streams if s.sensor_kind == "camera"]
        ref_id = cams[0] if cams else ids[0]
    if ref_id not in ids:
        raise errors.ParseError(f"unknown reference stream {ref_id!r}", field="reference")
    ref = streams[ids.index(ref_id)]
    others = [s for s in streams if s.stream_id != ref_id]
    worst = {s.stream_id: 0 for s in others}
    absent = {s.stream_id: 0 for s in others}
    for t in ref.timestamps:
        b = align(others, int(t), tol)
        for sid, m in b.matches.items():
            if m is None:
                absent[sid] += 1
            else:
                worst[sid] = max(worst[sid], abs(m.offset_us))
    lines = ["stream_id,sensor_kind,records,max_abs_offset_us,absent"]
    print(f"reference {ref_id}: {len(ref)} records, tolerance {tol} us")
    for s in others:
        sid = s.stream_id
        lines.append(f"{sid},{s.sensor_kind},{len(s)},{worst[sid]},{absent[sid]}")
        print(f"  {sid:<8} {s.sensor_kind:<7} max |offset| {worst[sid]:6d} us  absent {absent[sid]}")
    if opt.get("out") is not None:
        _write(_out_dir(opt) / "sync_check.csv", "\n".join(lines) + "\n")
    return 0


def cmd_report(opt: _Options) -> int:
    out = Path(opt.get("out")) if opt.get("out") is not None else None
    doc, _ = _document(opt, out)
    truth_path = opt.get("truth")
    truth = CalibrationDocument.load(truth_path) if truth_path else None
    text, tables = report.render(doc, truth)
    sys.stdout.write(text)
    if out is not None:
        out = _out_dir(opt)
        _write(out / "report.txt", text)
        for name, body in tables.items():
            _write(out / name, body)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "calib-intrinsics": cmd_calib_intrinsics,
    "calib-extrinsics": cmd_calib_extrinsics,
    "calib-lidar": cmd_calib_lidar,
    "project": cmd_project,
    "sync-check": cmd_sync_check,
    "report": cmd_report,
}


def _fail(code: int, exc: BaseException) -> int:
    print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        opt = _Options(args, _load_config(args.config))
        return COMMANDS[args.command](opt)
    except UsageError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _SOLVER_ERRORS as exc:
        return _fail(EXIT_SOLVER, exc)
    except _INPUT_ERRORS as exc:
        return _fail(EXIT_INPUT, exc)
    except ValueError as exc:
        # data-level precondition failures (board mismatch, missing stages)
        return _fail(EXIT_INPUT, exc)


if __name__ == "__main__":
    sys.exit(main())
