"""Calibration stages operating on files and a :class:`CalibrationDocument`."""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from . import io
from .camera import board_points, calibrate_intrinsics, project
from .document import CalibrationDocument, LidarCameraEntry, file_digest
from .errors import InsufficientViews, NoConsensus
from .extrinsic import BundleConfig, build_pose_graph, bundle_adjust, locate_board, spanning_tree_init
from .geometry import apply, inverse
from .lidar import calibrate_lidar_camera, plane_pair, ransac_board_points
from .sync import align

log = logging.getLogger(__name__)

PIXEL_BINS = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0, 5.0)
METRE_BINS = (0.0, 0.0025, 0.005, 0.01, 0.015, 0.02, 0.03, 0.05, 0.1)
DEFAULT_TOLERANCE_US = 40000  # half the LIDAR scan period
MIN_BOARD_POINTS = 30
MIN_LAYER_SHARE = 0.1  # a board needs two scan layers with at least this share of its returns


def _weak_support(n_points, layers) -> Optional[str]:
    """Reason to distrust a board's LIDAR returns, or None."""
    if n_points < MIN_BOARD_POINTS:
        return f"{n_points} LIDAR board points (< {MIN_BOARD_POINTS})"
    if layers is not None:
        counts = np.bincount(layers)
        strong = int(np.sum(counts >= MIN_LAYER_SHARE * n_points))
        if strong < 2:
            return "board returns lie on a single scan layer"
    return None


def histogram(values, edges) -> Dict[str, list]:
    """Counts over ``edges`` with a final open-ended bin."""
    v = np.abs(np.asarray(values, dtype=float).ravel())
    bounds = list(edges) + [math.inf]
    counts = np.histogram(v, bins=bounds)[0]
    return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


def _rms(values) -> float:
    v = np.asarray(values, dtype=float).ravel()
    return float(np.sqrt(np.mean(v * v))) if v.size else 0.0


def new_document(corners: io.CornerFile, reference_camera: str) -> CalibrationDocument:
    return CalibrationDocument(reference_camera, str(corners.spec))


def _check_board(doc: CalibrationDocument, corners: io.CornerFile):
    if doc.board is not None and doc.board != str(corners.spec):
        raise ValueError(f"corner file board {corners.spec} differs from document board {doc.board}")
    doc.board = str(corners.spec)


def run_intrinsics(doc: CalibrationDocument, corners: io.CornerFile, corners_path, cameras: Optional[Sequence[str]] = None) -> CalibrationDocument:
    _check_board(doc, corners)
    ids = list(cameras) if cameras else corners.camera_ids
    per_camera = {}
    lengths = []
    for cid in ids:
        views = corners.views_for(cid)
        if not views:
            raise InsufficientViews(f"no views for camera {cid}")
        res = calibrate_intrinsics(views, corners.spec, corners.image_size)
        doc.camera(cid).intrinsics = res.intrinsics
        obj = board_points(corners.spec)
        for v in views:
            if v.capture_index in res.poses:
                pts = apply(res.poses[v.capture_index], obj[v.corner_ids])
                lengths.append(np.linalg.norm(project(res.intrinsics, pts) - v.pixels, axis=1))
        per_camera[cid] = {"rms_px": res.rms, "initial_rms_px": res.initial_rms, "views": len(res.poses), "iterations": res.iterations}
        log.info("intrinsics %s: rms %.4f px over %d views", cid, res.rms, len(res.poses))
    doc.metrics["intrinsics"] = {
        "cameras": per_camera,
        "residual_histogram_px": histogram(np.concatenate(lengths) if lengths else [], PIXEL_BINS),
    }
    doc.record_stage("intrinsics", {"corners": file_digest(corners_path)}, {"cameras": ids})
    return doc


def run_extrinsics(
    doc: CalibrationDocument,
    corners: io.CornerFile,
    corners_path,
    refine_intrinsics: bool = False,
    robust: bool = False,
):
    _check_board(doc, corners)
    intr = doc.intrinsics()
    if not intr:
        raise ValueError("document has no intrinsics; run calib-intrinsics first")
    views = [v for v in corners.views if v.camera_id in intr]
    graph = build_pose_graph(views, intr, corners.spec)
    init = spanning_tree_init(graph, intr, corners.spec, doc.reference_camera)
    final = bundle_adjust(init, graph, corners.spec, BundleConfig(refine_intrinsics=refine_intrinsics, robust=robust))
    for cid, pose in final.rig.poses.items():
        doc.camera(cid).pose_in_reference = pose
        if refine_intrinsics:
            doc.camera(cid).intrinsics = final.intrinsics[cid]
    res = final.edge_residuals(graph, corners.spec)
    lengths = np.concatenate([np.linalg.norm(r, axis=1) for r in res.values()])
    doc.metrics["extrinsics"] = {
        "rms_px": _rms(np.concatenate(list(res.values()))),
        "initial_rms_px": init.rms(graph, corners.spec),
        "total_squared_error_px2": final.total_error,
        "iterations": final.iterations,
        "stop_reason": final.reason,
        "edges": len(graph.edges),
        "boards": len(graph.board_nodes),
        "warnings": list(graph.warnings),
        "residual_histogram_px": histogram(lengths, PIXEL_BINS),
    }
    doc.record_stage(
        "extrinsics",
        {"corners": file_digest(corners_path)},
        {"refine_intrinsics": refine_intrinsics, "robust": robust},
    )
    return graph, init, final


def capture_times(streams, capture_ids) -> Dict[int, int]:
    """Timestamp of the camera frame that carries each capture index."""
    wanted = {str(k) for k in capture_ids}
    out = {}
    for s in streams:
        if s.sensor_kind != "camera":
            continue
        for t, p in zip(s.timestamps, s.payloads):
            if p in wanted:
                out.setdefault(int(p), int(t))
    return out


def lidar_pairs(
    doc: CalibrationDocument,
    corners: io.CornerFile,
    streams,
    resolve,
    tolerance_us: int = DEFAULT_TOLERANCE_US,
    presegmented: bool = False,
    seed: int = 0,
):
    """Build plane pairs for every capture with both calibrated-camera views and LIDAR returns.

    ``resolve`` maps a LIDAR record payload to a cloud file path.  Returns
    ``(pairs, skipped)`` where ``skipped`` maps capture index to reason.
    """
    rig = doc.rig_poses()
    intr = doc.intrinsics()
    if not rig:
        raise ValueError("document has no camera poses; run calib-extrinsics first")
    views_by_capture = defaultdict(list)
    for v in corners.views:
        if v.camera_id in rig:
            views_by_capture[v.capture_index].append(v)
    lidars = [s for s in streams if s.sensor_kind == "lidar"]
    times = capture_times(streams, views_by_capture)
    pairs, skipped = [], {}
    for k in sorted(views_by_capture):
        if k not in times:
            continue
        bundle = align(lidars, times[k], tolerance_us)
        files = [m.record.payload for m in bundle.matches.values() if m is not None and m.record.payload != "-"]
        if not files:
            continue
        clouds = [io.read_cloud(resolve(f)) for f in files]
        pts = np.vstack([c.points for c in clouds])
        layers = None
        if all(c.layers is not None for c in clouds):
            layers = np.concatenate([c.layers for c in clouds])
        if len(pts) < 3:
            skipped[k] = "fewer than 3 LIDAR points"
            continue
        if not presegmented:
            try:
                keep = ransac_board_points(pts, seed=seed + k).inliers
            except NoConsensus as exc:
                skipped[k] = f"no plane consensus: {exc}"
                continue
            pts = pts[keep]
            layers = layers[keep] if layers is not None else None
        weak = _weak_support(len(pts), layers)
        if weak:
            skipped[k] = weak
            continue
        board = locate_board(views_by_capture[k], rig, intr, corners.spec)
        try:
            pairs.append(plane_pair(k, board, pts, corners.spec))
        except ValueError as exc:
            skipped[k] = str(exc)
    return pairs, skipped


def run_lidar(
    doc: CalibrationDocument,
    corners: io.CornerFile,
    corners_path,
    streams_path,
    clouds_dir,
    tolerance_us: int = DEFAULT_TOLERANCE_US,
    presegmented: bool = False,
    seed: int = 0,
):
    _check_board(doc, corners)
    streams = io.read_streams(streams_path)
    if clouds_dir is None:
        # payloads are paths relative to the stream index
        def resolve(payload):
            return Path(streams_path).parent / payload

    else:

        def resolve(payload):
            return Path(clouds_dir) / Path(payload).name

    pairs, skipped = lidar_pairs(doc, corners, streams, resolve, tolerance_us, presegmented, seed)
    if len(pairs) < 3:
        raise InsufficientViews(f"only {len(pairs)} captures pair a calibrated board with LIDAR returns; need 3")
    extr = calibrate_lidar_camera(pairs)
    doc.lidar_camera = LidarCameraEntry(extr.pose, dict(extr.rms))
    dists = []
    for p in pairs:
        dists.append(p.lidar_plane().signed_distance(apply(extr.pose, p.camera_corners)))
        dists.append(p.camera_plane.signed_distance(apply(inverse(extr.pose), p.lidar_points)))
    d = np.concatenate(dists)
    doc.metrics["lidar"] = {
        "rms_m": _rms(d),
        "captures": [p.capture_index for p in pairs],
        "skipped": {str(k): v for k, v in sorted(skipped.items())},
        "iterations": extr.iterations,
        "residual_histogram_m": histogram(d, METRE_BINS),
    }
    inputs = {"corners": file_digest(corners_path), "streams": file_digest(streams_path)}
    if clouds_dir is not None:
        inputs["clouds"] = file_digest(clouds_dir)
    doc.record_stage("lidar", inputs, {"tolerance_us": tolerance_us, "presegmented": presegmented, "seed": seed})
    return pairs, extr
