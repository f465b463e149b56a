"""Synthetic ground truth for the eight-camera / six-LIDAR surround rig.

Vehicle frame: x forward, y left, z up, origin between the rear wheels.
Camera frame: z along the optical axis, x right, y down.

Every number here is a plausible synthetic value, not a measurement of any
physical vehicle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .camera import (
    CameraIntrinsics,
    CheckerboardSpec,
    ViewObservation,
    board_points,
    project,
    unproject,
)
from .errors import BehindCamera, IoFailure
from .geometry import Pose, Rotation, apply, compose, inverse

REFERENCE_CAMERA = "cam0"

# ibeo LUX-like scanner
LIDAR_LAYERS_DEG = (-1.2, -0.4, 0.4, 1.2)
LIDAR_HFOV_DEG = 110.0
LIDAR_RANGE_M = 200.0
LIDAR_STEP_DEG = 0.25

CAMERA_RATE_HZ = 30.0
LIDAR_RATE_HZ = 12.5

# valid corners must sit inside the image by this margin and within this
# angle of the optical axis
IMAGE_MARGIN_PX = 5.0
MAX_RAY_ANGLE_DEG = 80.0


def camera_mount(position, yaw_deg, pitch_deg=0.0, roll_deg=0.0) -> Pose:
    """Camera->vehicle pose for a camera looking along ``yaw`` / ``pitch``."""
    y, p = math.radians(yaw_deg), math.radians(pitch_deg)
    z_c = np.array([math.cos(p) * math.cos(y), math.cos(p) * math.sin(y), math.sin(p)])
    x_c = np.array([math.sin(y), -math.cos(y), 0.0])
    y_c = np.cross(z_c, x_c)
    R = np.column_stack([x_c, y_c, z_c])
    if roll_deg:
        R = R @ Rotation.about_axis([0, 0, 1], math.radians(roll_deg)).matrix
    return Pose.from_matrix(R, position)


def lidar_mount(position, yaw_deg) -> Pose:
    return Pose(Rotation.about_axis([0, 0, 1], math.radians(yaw_deg)), position)


@dataclass(frozen=True)
class RigGroundTruth:
    """Sensor intrinsics and sensor->vehicle poses."""

    intrinsics: Dict[str, CameraIntrinsics]
    camera_poses: Dict[str, Pose]
    lidar_poses: Dict[str, Pose]
    reference_camera: str = REFERENCE_CAMERA

    @property
    def camera_ids(self) -> List[str]:
        return sorted(self.camera_poses)

    def camera_in_reference(self, cam_id) -> Pose:
        """Camera->reference-camera pose."""
        return compose(inverse(self.camera_poses[self.reference_camera]), self.camera_poses[cam_id])

    def reference_to_vehicle(self) -> Pose:
        return self.camera_poses[self.reference_camera]

    def rig_in_reference(self) -> Dict[str, Pose]:
        return {c: self.camera_in_reference(c) for c in self.camera_ids}


def default_rig() -> RigGroundTruth:
    """Eight cameras at 45 degree yaw spacing, six bumper LIDARs."""
    narrow = dict(xi=0.5, fx=1530.0, fy=1530.0, k1=-0.05, k2=0.01, p1=2e-4, p2=-1e-4)
    wide = dict(xi=0.9, fx=1510.0, fy=1510.0, k1=-0.08, k2=0.02, p1=-1e-4, p2=1e-4)
    layout = [
        # id, position, yaw, pitch, lens
        ("cam0", (1.90, 0.00, 1.35), 0.0, -5.0, narrow),
        ("cam1", (1.70, 0.70, 1.30), 45.0, -5.0, narrow),
        ("cam2", (1.00, 0.92, 1.20), 90.0, -10.0, wide),
        ("cam3", (-0.30, 0.70, 1.30), 135.0, -5.0, narrow),
        ("cam4", (-0.60, 0.00, 1.35), 180.0, -5.0, narrow),
        ("cam5", (-0.30, -0.70, 1.30), -135.0, -5.0, narrow),
        ("cam6", (1.00, -0.92, 1.20), -90.0, -10.0, wide),
        ("cam7", (1.70, -0.70, 1.30), -45.0, -5.0, narrow),
    ]
    intr, poses = {}, {}
    for k, (cid, pos, yaw, pitch, lens) in enumerate(layout):
        # small deterministic principal-point offsets so cameras differ
        cx = 800.0 + 3.0 * math.sin(1.3 * k + 0.2)
        cy = 600.0 + 2.5 * math.cos(0.7 * k + 0.5)
        intr[cid] = CameraIntrinsics(cx=cx, cy=cy, **lens)
        poses[cid] = camera_mount(np.array(pos), yaw, pitch, roll_deg=0.5 * math.sin(k))
    lidars = {
        "lidar0": lidar_mount((3.75, 0.00, 0.50), 0.0),
        "lidar1": lidar_mount((3.55, 0.75, 0.50), 45.0),
        "lidar2": lidar_mount((3.55, -0.75, 0.50), -45.0),
        "lidar3": lidar_mount((-1.15, 0.00, 0.50), 180.0),
        "lidar4": lidar_mount((-1.00, 0.75, 0.50), 135.0),
        "lidar5": lidar_mount((-1.00, -0.75, 0.50), -135.0),
    }
    return RigGroundTruth(intr, poses, lidars)


@dataclass(frozen=True)
class NoiseModel:
    pixel_sigma: float = 0.0
    lidar_sigma: float = 0.0
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.pixel_sigma < 0 or self.lidar_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")


def board_pose_facing(center, outward, spec: CheckerboardSpec, yaw_tilt=0.0, pitch_tilt=0.0, roll=0.0) -> Pose:
    """Board->vehicle pose with the board centre at ``center``.

    The board normal points along ``outward`` (away from the vehicle) before
    tilting; board x stays horizontal and board y points down.
    """
    z_b = np.asarray(outward, dtype=float)
    z_b = z_b / np.linalg.norm(z_b)
    x_b = np.cross([0.0, 0.0, -1.0], z_b)
    if np.linalg.norm(x_b) < 1e-9:
        x_b = np.array([0.0, -1.0, 0.0])
    x_b /= np.linalg.norm(x_b)
    y_b = np.cross(z_b, x_b)
    R = np.column_stack([x_b, y_b, z_b])
    tilt = (
        Rotation.about_axis([0, 1, 0], yaw_tilt).matrix
        @ Rotation.about_axis([1, 0, 0], pitch_tilt).matrix
        @ Rotation.about_axis([0, 0, 1], roll).matrix
    )
    R = R @ tilt
    w, h = spec.extent
    t = np.asarray(center, dtype=float) - R @ np.array([w / 2, h / 2, 0.0])
    return Pose.from_matrix(R, t)


@dataclass(frozen=True)
class CapturePlan:
    """Ordered board->vehicle poses."""

    board_poses: Tuple[Pose, ...]

    def __len__(self):
        return len(self.board_poses)


def sweep_plan(
    spec: CheckerboardSpec = CheckerboardSpec(),
    step_deg: float = 2.0,
    laps=((2.0, 1.15), (2.8, 1.45), (3.6, 1.3)),
) -> List[Pose]:
    """Board carried around the vehicle on elliptical laps.

    ``laps`` holds ``(clearance_m, height_m)`` per lap.  Tilts vary along the
    lap so every camera sees several board orientations.
    """
    poses = []
    center = np.array([0.65, 0.0])
    for lap, (clear, height) in enumerate(laps):
        a, b = 2.6 + clear, 1.0 + clear
        n = int(round(360.0 / step_deg))
        for k in range(n):
            phi = math.radians(k * step_deg + lap * step_deg / 2)
            p = center + np.array([a * math.cos(phi), b * math.sin(phi)])
            outward = np.array([math.cos(phi) / a, math.sin(phi) / b, 0.0])
            yaw_tilt = math.radians(28.0) * math.sin(3.0 * phi + lap)
            pitch_tilt = math.radians(22.0) * math.cos(5.0 * phi + 0.5 * lap)
            roll = math.radians(10.0) * math.sin(7.0 * phi)
            z = height + 0.25 * math.sin(4.0 * phi + lap)
            poses.append(board_pose_facing([p[0], p[1], z], outward, spec, yaw_tilt, pitch_tilt, roll))
    return poses


def lidar_target_plan(spec: CheckerboardSpec = CheckerboardSpec(), height: float = 0.5) -> List[Pose]:
    """Ten board poses 0.3-1.9 m ahead of the front bumper at LIDAR height.

    Tilts are steep (up to 60 degrees) so the board normals spread well
    apart, which is what conditions the rotation and hence the translation.
    """
    entries = [
        # x, y, yaw tilt, pitch tilt (deg)
        (4.1, 0.0, 0.0, 42.0),
        (4.3, 0.7, 51.0, -34.0),
        (4.3, -0.7, -51.0, 34.0),
        (4.9, 0.3, -42.0, -42.0),
        (4.9, -0.3, 42.0, 48.0),
        (4.2, 0.4, 60.0, 25.0),
        (4.2, -0.4, -60.0, -25.0),
        (5.6, 0.0, 25.0, 51.0),
        (4.6, 1.0, -34.0, 37.0),
        (4.6, -1.0, 34.0, -37.0),
    ]
    return [
        board_pose_facing([x, y, height], [1.0, 0.0, 0.0], spec, math.radians(yt), math.radians(pt))
        for x, y, yt, pt in entries
    ]


def intrinsic_plan(
    rig: RigGroundTruth,
    spec: CheckerboardSpec = CheckerboardSpec(),
    distance: float = 0.9,
    fractions=(0.3, 0.5, 0.7),
    tilt_deg: float = 35.0,
) -> List[Pose]:
    """Close-range boards held in front of each camera in turn.

    The board centre is placed on the rays through a 3x3 grid of image
    positions and tilted alternately about its horizontal and vertical axes,
    which is what pins down focal length and principal point per camera.
    """
    poses = []
    w, h = spec.extent
    for cid in rig.camera_ids:
        intr = rig.intrinsics[cid]
        mount = rig.camera_poses[cid]
        k = 0
        for fy in fractions:
            for fx in fractions:
                ray = unproject(intr, np.array([[fx * intr.width, fy * intr.height]]))[0]
                z_b = ray / np.linalg.norm(ray)
                x_b = np.cross([0.0, 1.0, 0.0], z_b)
                x_b /= np.linalg.norm(x_b)
                y_b = np.cross(z_b, x_b)
                axis = [0, 1, 0] if k % 2 else [1, 0, 0]
                sign = 1.0 if (k // 2) % 2 else -1.0
                R = np.column_stack([x_b, y_b, z_b]) @ Rotation.about_axis(axis, sign * math.radians(tilt_deg)).matrix
                t = distance * z_b - R @ np.array([w / 2, h / 2, 0.0])
                poses.append(compose(mount, Pose.from_matrix(R, t)))
                k += 1
    return poses


def default_capture_plan(spec: CheckerboardSpec = CheckerboardSpec(), rig: Optional[RigGroundTruth] = None) -> CapturePlan:
    """Vehicle sweep, LIDAR target poses, then a close-range pass per camera.

    Sweep poses that no camera sees completely are dropped.
    """
    rig = rig or default_rig()
    obj = board_points(spec)
    cam_from_vehicle = {c: inverse(rig.camera_poses[c]) for c in rig.camera_ids}

    def seen(bp):
        pts = apply(bp, obj)
        return any(visible_projection(rig.intrinsics[c], apply(T, pts)) is not None for c, T in cam_from_vehicle.items())

    sweep = [bp for bp in sweep_plan(spec) if seen(bp)]
    return CapturePlan(tuple(sweep + lidar_target_plan(spec) + intrinsic_plan(rig, spec)))


def visible_projection(intr: CameraIntrinsics, pts_cam: np.ndarray) -> Optional[np.ndarray]:
    """Pixels of all points when every one lies comfortably inside the image, else None."""
    n = np.linalg.norm(pts_cam, axis=1)
    if np.any(pts_cam[:, 2] <= math.cos(math.radians(MAX_RAY_ANGLE_DEG)) * n):
        return None
    try:
        uv = project(intr, pts_cam)
    except BehindCamera:
        return None
    m = IMAGE_MARGIN_PX
    ok = (uv[:, 0] >= m) & (uv[:, 0] <= intr.width - 1 - m) & (uv[:, 1] >= m) & (uv[:, 1] <= intr.height - 1 - m)
    return uv if np.all(ok) else None


@dataclass
class SimulatedCaptures:
    views: List[ViewObservation]
    board_poses: Dict[int, Pose]  # board -> vehicle

    def views_for(self, camera_id) -> List[ViewObservation]:
        return [v for v in self.views if v.camera_id == camera_id]


def simulate_captures(
    rig: RigGroundTruth,
    plan: CapturePlan,
    spec: CheckerboardSpec,
    noise: NoiseModel = NoiseModel(),
) -> SimulatedCaptures:
    """Project every board of ``plan`` into every camera that fully sees it."""
    rng = np.random.default_rng(noise.seed)
    obj = board_points(spec)
    views = []
    truth = {}
    cam_from_vehicle = {c: inverse(rig.camera_poses[c]) for c in rig.camera_ids}
    for idx, bp in enumerate(plan.board_poses):
        truth[idx] = bp
        pts_v = obj @ bp.R.T + bp.t
        for cid in rig.camera_ids:
            T = cam_from_vehicle[cid]
            uv = visible_projection(rig.intrinsics[cid], pts_v @ T.R.T + T.t)
            if uv is None:
                continue
            # draw noise and dropout for every corner so streams stay aligned across settings
            noisy = uv + rng.normal(scale=1.0, size=uv.shape) * noise.pixel_sigma
            keep = rng.random(len(uv)) >= noise.dropout_rate
            ids = np.flatnonzero(keep)
            if len(ids) < 4:
                continue
            views.append(ViewObservation(cid, idx, ids, noisy[ids]))
    return SimulatedCaptures(views, truth)


@dataclass
class LidarScan:
    points: np.ndarray  # (N, 3) vehicle frame
    layers: np.ndarray  # (N,) layer index 0..3


def board_rectangle(spec: CheckerboardSpec) -> Tuple[float, float, float, float]:
    """Physical board outline in board coordinates: inner grid padded by one square."""
    w, h = spec.extent
    s = spec.square_size
    return -s, w + s, -s, h + s


def simulate_lidar_board(
    rig: RigGroundTruth,
    board_pose: Pose,
    noise: NoiseModel = NoiseModel(),
    spec: CheckerboardSpec = CheckerboardSpec(),
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, LidarScan]:
    """Ray-cast the four scan layers of every LIDAR against the board rectangle."""
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    x0, x1, y0, y1 = board_rectangle(spec)
    n = board_pose.R[:, 2]
    d = -float(n @ board_pose.t)
    half = LIDAR_HFOV_DEG / 2
    az = np.radians(np.arange(-half, half + 1e-9, LIDAR_STEP_DEG))
    out = {}
    for lid in sorted(rig.lidar_poses):
        L = rig.lidar_poses[lid]
        pts, layers = [], []
        for li, el_deg in enumerate(LIDAR_LAYERS_DEG):
            el = math.radians(el_deg)
            dirs = np.stack([math.cos(el) * np.cos(az), math.cos(el) * np.sin(az), np.full_like(az, math.sin(el))], axis=1)
            dv = dirs @ L.R.T
            denom = dv @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                s = -(n @ L.t + d) / denom
            ok = np.isfinite(s) & (s > 0) & (s <= LIDAR_RANGE_M)
            hit = L.t + s[:, None] * dv
            local = (hit - board_pose.t) @ board_pose.R
            ok &= (local[:, 0] >= x0) & (local[:, 0] <= x1) & (local[:, 1] >= y0) & (local[:, 1] <= y1)
            idx = np.flatnonzero(ok)
            if idx.size:
                rng_noise = rng.normal(scale=1.0, size=idx.size) * noise.lidar_sigma
                pts.append(L.t + (s[idx] + rng_noise)[:, None] * dv[idx])
                layers.append(np.full(idx.size, li))
        if pts:
            out[lid] = LidarScan(np.concatenate(pts), np.concatenate(layers))
        else:
            out[lid] = LidarScan(np.zeros((0, 3)), np.zeros(0, dtype=int))
    return out


def merged_scan(scans: Dict[str, LidarScan]) -> LidarScan:
    pts = [scans[k].points for k in sorted(scans)]
    lay = [scans[k].layers for k in sorted(scans)]
    return LidarScan(np.concatenate(pts) if pts else np.zeros((0, 3)), np.concatenate(lay) if lay else np.zeros(0, dtype=int))


# ---------------------------------------------------------------------------
# scenario export

HOLD_FRAMES = 12  # camera frames a LIDAR target is held still (~0.4 s, 5 scans)
TRANSIT_FRAMES = 6  # board carried in/out around a hold: no detections, no LIDAR board hits
CAMERA_PHASE_US = 110  # per-camera trigger offset
LIDAR_PHASE_US = 370  # per-LIDAR scan phase offset


@dataclass(frozen=True)
class ScenarioTimeline:
    """Camera frame span ``[first, last]`` of every capture."""

    spans: Tuple[Tuple[int, int], ...]
    n_frames: int

    def capture_frame(self, k: int) -> int:
        a, b = self.spans[k]
        return (a + b) // 2

    def capture_at(self, t_us: int) -> Optional[int]:
        """Capture whose board is in place at ``t_us`` (None while in transit)."""
        for k, (a, b) in enumerate(self.spans):
            if frame_time_us(a) <= t_us < frame_time_us(b + 1):
                return k
        return None


def scenario_timeline(
    rig: RigGroundTruth,
    plan: CapturePlan,
    spec: CheckerboardSpec,
    hold_frames: int = HOLD_FRAMES,
    transit_frames: int = TRANSIT_FRAMES,
) -> ScenarioTimeline:
    """One frame per capture, except boards the LIDARs hit.

    Those are held for ``hold_frames`` with ``transit_frames`` of empty video
    on either side, so no LIDAR scan of a held board lies within half a scan
    period of a neighbouring capture.
    """
    spans, f = [], 0
    quiet = NoiseModel()
    for bp in plan.board_poses:
        hit = any(len(s.points) for s in simulate_lidar_board(rig, bp, quiet, spec).values())
        if hit:
            f += transit_frames
            spans.append((f, f + hold_frames - 1))
            f += hold_frames + transit_frames
        else:
            spans.append((f, f))
            f += 1
    return ScenarioTimeline(tuple(spans), f)


def frame_time_us(frame: int, phase_us: int = 0) -> int:
    return int(round(frame * 1e6 / CAMERA_RATE_HZ)) + phase_us


def scan_time_us(scan: int, phase_us: int = 0) -> int:
    return int(round(scan * 1e6 / LIDAR_RATE_HZ)) + phase_us


def _clutter(rng, board_pose: Pose, n: int) -> np.ndarray:
    """Scattered returns 1-3 m behind the board (vegetation, poles)."""
    c = board_pose.t + board_pose.R @ np.array([0.4, 0.3, 0.0])
    away = c / np.linalg.norm(c)
    side = np.cross([0.0, 0.0, 1.0], away)
    side /= np.linalg.norm(side)
    return (
        c
        + away * rng.uniform(1.0, 3.0, size=(n, 1))
        + side * rng.uniform(-1.5, 1.5, size=(n, 1))
        + np.array([0.0, 0.0, 1.0]) * rng.uniform(-0.3, 0.3, size=(n, 1))
    )


def truth_document(rig: RigGroundTruth, spec: CheckerboardSpec, board_poses: Dict[int, Pose], noise: NoiseModel):
    """Ground truth in the calibration document layout, plus simulation-only extras."""
    from .document import CalibrationDocument, CameraEntry, LidarCameraEntry, pose_to_json

    doc = CalibrationDocument(rig.reference_camera, str(spec))
    for cid in rig.camera_ids:
        doc.cameras[cid] = CameraEntry(rig.intrinsics[cid], rig.camera_in_reference(cid))
    doc.lidar_camera = LidarCameraEntry(rig.reference_to_vehicle())
    doc.provenance = {"generator": "surroundcal.sim", "seed": noise.seed, "timestamp": None}
    doc.extra = {
        "simulation_only": True,
        "noise": {"pixel_sigma": noise.pixel_sigma, "lidar_sigma": noise.lidar_sigma, "dropout_rate": noise.dropout_rate, "seed": noise.seed},
        "camera_poses_vehicle": {c: pose_to_json(rig.camera_poses[c]) for c in rig.camera_ids},
        "lidar_poses_vehicle": {l: pose_to_json(rig.lidar_poses[l]) for l in sorted(rig.lidar_poses)},
        "board_poses_vehicle": {str(k): pose_to_json(p) for k, p in sorted(board_poses.items())},
    }
    return doc


def export_scenario(
    rig: RigGroundTruth,
    plan: CapturePlan,
    spec: CheckerboardSpec,
    noise: NoiseModel,
    out,
    clutter_fraction: float = 0.2,
    hold_frames: int = HOLD_FRAMES,
    transit_frames: int = TRANSIT_FRAMES,
) -> Dict[str, str]:
    """Write ``corners.csv``, ``streams.csv``, ``clouds/*.csv`` and ``truth.json`` under ``out``.

    Camera streams run at 30 Hz and carry the capture index on the frame a
    capture was taken ("-" otherwise); LIDAR streams run at 12.5 Hz and
    point to a cloud file whenever a scan hit the board ("-" otherwise).
    """
    from pathlib import Path

    from . import io
    from .sync import ingest

    out = Path(out)
    try:
        (out / "clouds").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc.strerror or exc}") from None
    caps = simulate_captures(rig, plan, spec, noise)
    timeline = scenario_timeline(rig, plan, spec, hold_frames, transit_frames)
    io.write_corners(out / "corners.csv", spec, (rig.intrinsics[rig.reference_camera].width, rig.intrinsics[rig.reference_camera].height), caps.views)

    by_frame = {timeline.capture_frame(k): k for k in range(len(plan))}
    logs = []
    for i, cid in enumerate(rig.camera_ids):
        recs = [(frame_time_us(f, i * CAMERA_PHASE_US), str(by_frame[f]) if f in by_frame else "-") for f in range(timeline.n_frames)]
        logs.append(ingest(cid, "camera", recs))

    # LIDAR randomness is drawn from its own stream so camera data never shifts
    rng = np.random.default_rng([noise.seed, 1])
    # scans run until one lands past the last camera frame, so every frame has a scan within half a period
    end_us = frame_time_us(timeline.n_frames)
    n_scans = int(np.ceil(end_us * LIDAR_RATE_HZ / 1e6)) + 1
    lidar_recs = {lid: [] for lid in sorted(rig.lidar_poses)}
    for s in range(n_scans):
        for j, lid in enumerate(sorted(rig.lidar_poses)):
            t = scan_time_us(s, j * LIDAR_PHASE_US)
            k = timeline.capture_at(t)
            scan = simulate_lidar_board(rig, plan.board_poses[k], noise, spec, rng)[lid] if k is not None else None
            payload = "-"
            if scan is not None and len(scan.points):
                pts, layers = scan.points, scan.layers
                n_clutter = int(round(clutter_fraction * len(pts)))
                if n_clutter:
                    pts = np.vstack([pts, _clutter(rng, plan.board_poses[k], n_clutter)])
                    layers = np.concatenate([layers, rng.integers(0, len(LIDAR_LAYERS_DEG), n_clutter)])
                payload = f"clouds/{lid}_{s:06d}.csv"
                io.write_cloud(out / payload, pts, layers, {"lidar": lid, "scan": str(s)})
            lidar_recs[lid].append((t, payload))
    for lid, recs in lidar_recs.items():
        logs.append(ingest(lid, "lidar", recs))
    io.write_streams(out / "streams.csv", logs)

    truth = truth_document(rig, spec, caps.board_poses, noise)
    truth.extra["capture_frames"] = {str(k): list(span) for k, span in enumerate(timeline.spans)}
    truth.save(out / "truth.json")
    return {
        "corners": str(out / "corners.csv"),
        "streams": str(out / "streams.csv"),
        "clouds": str(out / "clouds"),
        "truth": str(out / "truth.json"),
    }
