"""Synthetic single-camera and LIDAR instances shared by several test modules."""
import contextlib
import io
import math

import numpy as np

from surroundcal.camera import CameraIntrinsics, CheckerboardSpec, ViewObservation, board_points, unproject
from surroundcal.cli import main
from surroundcal.geometry import Pose, Rotation, apply
from surroundcal.sim import visible_projection

WIDE = CameraIntrinsics(0.8, 1400.0, 1395.0, 803.0, 598.0, -0.06, 0.015, 3e-4, -2e-4)
PINHOLE = CameraIntrinsics(0.0, 950.0, 948.0, 801.0, 602.0, -0.2, 0.05, 1e-4, 2e-4)


def board_views(intr, spec, n, rng, sigma=0.0, distance=(1.2, 2.2), tilt_deg=40.0, camera_id="cam"):
    """``n`` fully visible views of the board, each returning (view, board->camera pose)."""
    obj = board_points(spec)
    w, h = spec.extent
    out = []
    while len(out) < n:
        px = np.array([rng.uniform(0.25, 0.75) * intr.width, rng.uniform(0.25, 0.75) * intr.height])
        ray = unproject(intr, px)
        z = ray / np.linalg.norm(ray)
        x = np.cross([0.0, 1.0, 0.0], z)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        tilt = Rotation.from_rotvec(np.radians(tilt_deg) * rng.uniform(-1, 1, size=3) * [1, 1, 0.3])
        R = np.column_stack([x, y, z]) @ tilt.matrix
        t = rng.uniform(*distance) * z - R @ np.array([w / 2, h / 2, 0.0])
        pose = Pose.from_matrix(R, t)
        uv = visible_projection(intr, apply(pose, obj))
        if uv is None:
            continue
        uv = uv + rng.normal(scale=sigma, size=uv.shape) if sigma else uv
        out.append((ViewObservation(camera_id, len(out), np.arange(len(obj)), uv), pose))
    return out


def lidar_scene(rng, n_boards=10, spec=CheckerboardSpec(), lidar_sigma=0.0, points_per_board=60):
    """Board poses in the camera reference frame plus noisy board samples in the vehicle frame.

    Returns ``(truth camera->vehicle pose, [(board->camera pose, vehicle points)])``.
    """
    truth = Pose(Rotation.from_rotvec(rng.normal(scale=0.6, size=3)), rng.normal(scale=0.5, size=3))
    w, h = spec.extent
    boards = []
    while len(boards) < n_boards:
        normal_tilt = Rotation.from_rotvec(np.radians(35.0) * rng.uniform(-1, 1, size=3))
        center = np.array([rng.uniform(-1.5, 1.5), rng.uniform(-0.5, 0.5), rng.uniform(3.0, 6.0)])
        R = normal_tilt.matrix @ Rotation.about_axis([1, 0, 0], math.pi).matrix
        t = center - R @ np.array([w / 2, h / 2, 0.0])
        bp = Pose.from_matrix(R, t)
        # both frame origins must sit on the same side of the board, well clear of it
        if abs(R[:, 2] @ t) < 1.0 + np.linalg.norm(truth.t):
            continue
        uv = rng.uniform([0, 0], [w, h], size=(points_per_board, 2))
        local = np.column_stack([uv, np.zeros(len(uv))])
        pts_cam = apply(bp, local)
        pts_veh = apply(truth, pts_cam)
        if lidar_sigma:
            pts_veh = pts_veh + rng.normal(scale=lidar_sigma, size=pts_veh.shape)
        boards.append((bp, pts_veh))
    return truth, boards


def run_cli(*argv):
    """Run the CLI in-process; returns (exit code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


ACCEPTANCE = []


def verdict(number, ok, detail):
    """Record and print one acceptance line."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok
