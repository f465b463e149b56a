"""Plain-text calibration report and plot-ready tables, derived from a document alone."""
from __future__ import annotations

import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from .camera import INTRINSIC_NAMES
from .document import CalibrationDocument
from .geometry import Pose

# ground-truth comparison thresholds
CENTER_TOL_M = 0.005
ROTATION_TOL_DEG = 0.1
BASELINE_TOL_M = 0.01
LIDAR_TRANSLATION_TOL_M = 0.02
LIDAR_ROTATION_TOL_DEG = 0.5

_BAR = 40


def baselines(poses: Dict[str, Pose]) -> Tuple[List[str], np.ndarray]:
    """Symmetric matrix of camera-centre distances (m)."""
    ids = sorted(poses)
    C = np.array([poses[c].t for c in ids]) if ids else np.zeros((0, 3))
    D = np.linalg.norm(C[:, None, :] - C[None, :, :], axis=2)
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return ids, D


def _hist_lines(h: Dict[str, list], unit: str, scale: float = 1.0) -> List[str]:
    edges = h["edges"]
    counts = h["counts"]
    peak = max(counts) if counts and max(counts) > 0 else 1
    out = []
    for i, c in enumerate(counts):
        lo = edges[i] * scale
        hi = f"{edges[i + 1] * scale:7.3f}" if i + 1 < len(edges) else "    inf"
        bar = "#" * int(round(_BAR * c / peak))
        out.append(f"  [{lo:7.3f}, {hi}) {unit}  {c:7d}  {bar}")
    return out


def _hist_table(h: Dict[str, list]) -> str:
    lines = ["bin_lo,bin_hi,count"]
    e = h["edges"]
    for i, c in enumerate(h["counts"]):
        hi = repr(e[i + 1]) if i + 1 < len(e) else "inf"
        lines.append(f"{e[i]!r},{hi},{c}")
    return "\n".join(lines) + "\n"


def compare_to_truth(doc: CalibrationDocument, truth: CalibrationDocument) -> Dict[str, object]:
    """Per-camera centre/rotation errors, baseline errors and LIDAR-camera errors."""
    out: Dict[str, object] = {"cameras": {}}
    est, ref = doc.rig_poses(), truth.rig_poses()
    for cid in sorted(set(est) & set(ref)):
        out["cameras"][cid] = {
            "center_error_m": float(np.linalg.norm(est[cid].t - ref[cid].t)),
            "rotation_error_deg": math.degrees(est[cid].rotation.angle_to(ref[cid].rotation)),
        }
    common = {c: est[c] for c in out["cameras"]}
    if len(common) > 1:
        _, De = baselines(common)
        _, Dt = baselines({c: ref[c] for c in common})
        out["max_baseline_error_m"] = float(np.max(np.abs(De - Dt)))
    if doc.lidar_camera is not None and truth.lidar_camera is not None:
        a, b = doc.lidar_camera.pose_reference_to_vehicle, truth.lidar_camera.pose_reference_to_vehicle
        out["lidar_translation_error_m"] = float(np.linalg.norm(a.t - b.t))
        out["lidar_rotation_error_deg"] = math.degrees(a.rotation.angle_to(b.rotation))
    return out


def truth_checks(cmp: Dict[str, object]) -> List[Tuple[str, bool, str]]:
    """(name, passed, detail) for every threshold that applies."""
    checks = []
    cams = cmp["cameras"]
    if cams:
        worst_c = max(v["center_error_m"] for v in cams.values())
        worst_r = max(v["rotation_error_deg"] for v in cams.values())
        checks.append(("camera centers", worst_c < CENTER_TOL_M, f"max {worst_c * 1000:.3f} mm (< {CENTER_TOL_M * 1000:g} mm)"))
        checks.append(("camera rotations", worst_r < ROTATION_TOL_DEG, f"max {worst_r:.4f} deg (< {ROTATION_TOL_DEG:g} deg)"))
    if "max_baseline_error_m" in cmp:
        b = cmp["max_baseline_error_m"]
        checks.append(("baselines", b < BASELINE_TOL_M, f"max {b * 1000:.3f} mm (< {BASELINE_TOL_M * 1000:g} mm)"))
    if "lidar_translation_error_m" in cmp:
        t, r = cmp["lidar_translation_error_m"], cmp["lidar_rotation_error_deg"]
        checks.append(("lidar translation", t < LIDAR_TRANSLATION_TOL_M, f"{t * 100:.3f} cm (< {LIDAR_TRANSLATION_TOL_M * 100:g} cm)"))
        checks.append(("lidar rotation", r < LIDAR_ROTATION_TOL_DEG, f"{r:.4f} deg (< {LIDAR_ROTATION_TOL_DEG:g} deg)"))
    return checks


def render(doc: CalibrationDocument, truth: Optional[CalibrationDocument] = None) -> Tuple[str, Dict[str, str]]:
    """Report text plus ``{file name: csv text}`` tables."""
    L: List[str] = []
    tables: Dict[str, str] = {}
    L.append("surroundcal calibration report")
    L.append(f"reference camera: {doc.reference_camera}")
    L.append(f"board: {doc.board}")
    stages = [s.get("stage") for s in doc.provenance.get("stages", [])]
    L.append(f"stages: {', '.join(stages) if stages else 'none'}")

    intr = doc.intrinsics()
    if intr:
        L.append("")
        L.append("intrinsics")
        L.append("  camera " + "".join(f"{n:>13}" for n in INTRINSIC_NAMES))
        rows = ["camera_id," + ",".join(INTRINSIC_NAMES) + ",width,height"]
        for cid, iv in intr.items():
            v = iv.to_vector()
            L.append(f"  {cid:<6} " + "".join(f"{x:13.6g}" for x in v))
            rows.append(f"{cid}," + ",".join(repr(float(x)) for x in v) + f",{iv.width},{iv.height}")
        tables["intrinsics.csv"] = "\n".join(rows) + "\n"
        per = doc.metrics.get("intrinsics", {}).get("cameras", {})
        if per:
            L.append("  rms (px): " + ", ".join(f"{c} {per[c]['rms_px']:.4f}" for c in sorted(per)))

    poses = doc.rig_poses()
    if poses:
        L.append("")
        L.append(f"camera poses in {doc.reference_camera} frame (translation m, rotation vector deg)")
        rows = ["camera_id,tx,ty,tz,qw,qx,qy,qz"]
        for cid, p in poses.items():
            rv = np.degrees(p.rotation.as_rotvec())
            L.append(f"  {cid:<6} t = [{p.t[0]:9.5f} {p.t[1]:9.5f} {p.t[2]:9.5f}]  r = [{rv[0]:9.4f} {rv[1]:9.4f} {rv[2]:9.4f}]")
            rows.append(f"{cid}," + ",".join(repr(float(x)) for x in (*p.t, *p.rotation.quat)))
        tables["poses.csv"] = "\n".join(rows) + "\n"
        ids, D = baselines(poses)
        L.append("")
        L.append("baselines (m)")
        L.append("        " + "".join(f"{c:>9}" for c in ids))
        rows = ["camera_id," + ",".join(ids)]
        for i, c in enumerate(ids):
            L.append(f"  {c:<6}" + "".join(f"{D[i, j]:9.4f}" for j in range(len(ids))))
            rows.append(f"{c}," + ",".join(repr(float(x)) for x in D[i]))
        tables["baselines.csv"] = "\n".join(rows) + "\n"
        m = doc.metrics.get("extrinsics")
        if m:
            L.append("")
            L.append(f"bundle adjustment: rms {m['rms_px']:.4f} px (initial {m['initial_rms_px']:.4f} px), {m['iterations']} iterations, stop: {m['stop_reason']}")

    if doc.lidar_camera is not None:
        p = doc.lidar_camera.pose_reference_to_vehicle
        rv = np.degrees(p.rotation.as_rotvec())
        L.append("")
        L.append(f"lidar-camera: {doc.reference_camera} -> vehicle")
        L.append(f"  t = [{p.t[0]:9.5f} {p.t[1]:9.5f} {p.t[2]:9.5f}] m  r = [{rv[0]:9.4f} {rv[1]:9.4f} {rv[2]:9.4f}] deg")
        rms = doc.lidar_camera.rms_m
        if rms:
            L.append("  point-plane rms (mm): " + ", ".join(f"{k} {v * 1000:.2f}" for k, v in sorted(rms.items())))
        skipped = doc.metrics.get("lidar", {}).get("skipped", {})
        for k, why in sorted(skipped.items(), key=lambda kv: int(kv[0])):
            L.append(f"  skipped capture {k}: {why}")

    for stage, key, unit, scale in (
        ("intrinsics", "residual_histogram_px", "px", 1.0),
        ("extrinsics", "residual_histogram_px", "px", 1.0),
        ("lidar", "residual_histogram_m", "mm", 1000.0),
    ):
        h = doc.metrics.get(stage, {}).get(key)
        if h:
            L.append("")
            L.append(f"{stage} residuals")
            L.extend(_hist_lines(h, unit, scale))
            tables[f"residuals_{stage}.csv"] = _hist_table(h)

    if truth is not None:
        cmp = compare_to_truth(doc, truth)
        L.append("")
        L.append("ground-truth comparison")
        for cid, v in cmp["cameras"].items():
            L.append(f"  {cid:<6} center {v['center_error_m'] * 1000:8.3f} mm  rotation {v['rotation_error_deg']:8.4f} deg")
        rows = ["check,passed,detail"]
        for name, ok, detail in truth_checks(cmp):
            L.append(f"  {'PASS' if ok else 'FAIL'} {name}: {detail}")
            rows.append(f"{name},{int(ok)},{detail}")
        tables["truth_checks.csv"] = "\n".join(rows) + "\n"
    return "\n".join(L) + "\n", tables
