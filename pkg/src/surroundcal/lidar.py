"""LIDAR-to-camera extrinsics from checkerboard plane correspondences.

Every observation pairs one board pose as seen by the camera rig (corners
and plane in the camera reference frame) with the LIDAR returns from that
board (vehicle frame).  Rotation comes from aligning plane normals, then
translation from making every camera corner lie on its LIDAR plane, then a
joint point-to-plane refinement.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import lm
from .camera import CameraIntrinsics, CheckerboardSpec, board_points, project
from .errors import (
    BehindCamera,
    DegenerateGeometry,
    NoConsensus,
    RankDeficientNormals,
)
from .geometry import (
    Plane,
    Pose,
    Rotation,
    apply,
    fit_plane,
    inverse,
    retract,
    rotation_from_direction_pairs,
)

RANSAC_THRESHOLD_M = 0.02
RANSAC_ITERATIONS = 200
RANSAC_MIN_INLIER_FRACTION = 0.5
COPLANARITY_TOL_M = 0.005
NORMAL_RANK_RATIO = 1e-3


@dataclass(frozen=True, eq=False)
class PlanePairObservation:
    """One board seen by the cameras and by the LIDARs.

    ``camera_plane`` and ``camera_corners`` live in the camera reference
    frame, ``lidar_points`` in the vehicle frame.
    """

    capture_index: int
    camera_plane: Plane
    camera_corners: np.ndarray
    lidar_points: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.camera_corners, dtype=float).reshape(-1, 3)
        l = np.asarray(self.lidar_points, dtype=float).reshape(-1, 3)
        if len(l) < 3:
            raise ValueError(f"capture {self.capture_index}: need at least 3 LIDAR points, got {len(l)}")
        if len(c) < 3:
            raise ValueError(f"capture {self.capture_index}: need at least 3 camera corners")
        off = np.max(np.abs(self.camera_plane.signed_distance(c)))
        if off > COPLANARITY_TOL_M:
            raise ValueError(f"capture {self.capture_index}: camera corners are {off:.4f} m off the camera plane")
        object.__setattr__(self, "camera_corners", c)
        object.__setattr__(self, "lidar_points", l)

    def lidar_plane(self) -> Plane:
        return fit_plane(self.lidar_points)[0]


@dataclass(frozen=True, eq=False)
class LidarCameraExtrinsics:
    """Camera-reference -> vehicle pose plus per-capture point-plane rms (m)."""

    pose: Pose
    rms: Dict[int, float] = field(default_factory=dict)
    iterations: int = 0


def camera_plane_from_board(board_pose: Pose, spec: CheckerboardSpec = CheckerboardSpec()) -> Plane:
    """Plane of the board (z = 0 in board coordinates) in the target frame of ``board_pose``."""
    return Plane(np.array([0.0, 0.0, 1.0]), 0.0).transformed(board_pose)


def plane_pair(capture_index: int, board_pose: Pose, lidar_points, spec: CheckerboardSpec = CheckerboardSpec()) -> PlanePairObservation:
    """Pair built from a board->camera-reference pose and the board's LIDAR returns."""
    corners = apply(board_pose, board_points(spec))
    return PlanePairObservation(capture_index, camera_plane_from_board(board_pose, spec), corners, lidar_points)


@dataclass(frozen=True)
class RansacResult:
    inliers: np.ndarray  # indices into the input scan
    plane: Plane


def ransac_board_points(
    points,
    seed: int = 0,
    threshold: float = RANSAC_THRESHOLD_M,
    iterations: int = RANSAC_ITERATIONS,
    min_inlier_fraction: float = RANSAC_MIN_INLIER_FRACTION,
) -> RansacResult:
    """Planar subset of a raw scan.

    Hypotheses are scored with a truncated quadratic loss (MSAC) rather than a
    plain inlier count, so a plane through the board beats a slightly tilted
    one that also grazes a stray point. The first best hypothesis wins ties.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(P) < 3:
        raise ValueError(f"need at least 3 points, got {len(P)}")
    rng = np.random.default_rng(seed)
    best, best_score = None, np.inf
    for _ in range(iterations):
        a, b, c = P[rng.choice(len(P), size=3, replace=False)]
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            continue
        n = n / norm
        r2 = np.minimum(((P - a) @ n) ** 2, threshold**2)
        score = r2.sum()
        if best is None or score < best_score:
            best, best_score = r2 < threshold**2, score
    if best is None or best.sum() < 3:
        raise NoConsensus("no non-degenerate plane hypothesis")
    if best.sum() < min_inlier_fraction * len(P):
        raise NoConsensus(f"best plane explains {best.sum()} of {len(P)} points (< {min_inlier_fraction:.0%})")
    # a hypothesis through a stray point can sit slightly tilted and pick up
    # neighbours of the board; re-threshold against the least-squares plane
    for _ in range(5):
        idx = np.flatnonzero(best)
        try:
            plane, _ = fit_plane(P[idx])
        except DegenerateGeometry as exc:
            raise NoConsensus(f"inliers are degenerate: {exc}") from None
        mask = np.abs(plane.signed_distance(P)) <= threshold
        if np.array_equal(mask, best) or mask.sum() < min_inlier_fraction * len(P):
            break
        best = mask
    return RansacResult(np.flatnonzero(best), plane)


def _normals(pairs: Sequence[PlanePairObservation]) -> Tuple[np.ndarray, np.ndarray]:
    """Camera and vehicle normals, each pointing toward its own frame origin."""
    cam = np.array([p.camera_plane.oriented_toward_origin()[0] for p in pairs])
    veh = np.array([p.lidar_plane().oriented_toward_origin()[0] for p in pairs])
    return cam, veh


def solve_rotation(pairs: Sequence[PlanePairObservation]) -> Rotation:
    """Rotation taking camera-frame normals onto vehicle-frame normals."""
    if len(pairs) < 2:
        raise ValueError("need at least 2 plane pairs")
    cam, veh = _normals(pairs)
    return rotation_from_direction_pairs(cam, veh)


def _require_rank3(normals):
    s = np.linalg.svd(np.asarray(normals), compute_uv=False)
    if len(s) < 3 or s[2] <= NORMAL_RANK_RATIO * s[0]:
        ratio = s[2] / s[0] if len(s) >= 3 else 0.0
        raise RankDeficientNormals(f"board normals do not span 3D (sigma3/sigma1 = {ratio:.2e}); translation is unobservable")


def solve_translation(pairs: Sequence[PlanePairObservation], rotation: Rotation) -> np.ndarray:
    """Least-squares ``t`` with ``n_i . (R c + t) + d_i = 0`` for every camera corner."""
    if len(pairs) < 3:
        raise RankDeficientNormals(f"need at least 3 plane pairs, got {len(pairs)}")
    planes = [p.lidar_plane() for p in pairs]
    _require_rank3([pl.normal for pl in planes])
    R = rotation.matrix
    A, b = [], []
    for p, pl in zip(pairs, planes):
        A.append(np.tile(pl.normal, (len(p.camera_corners), 1)))
        b.append(-pl.offset - (p.camera_corners @ R.T) @ pl.normal)
    t, *_ = np.linalg.lstsq(np.concatenate(A), np.concatenate(b), rcond=None)
    return t


class _PlaneProblem:
    """Symmetric point-to-plane objective over a camera-reference -> vehicle pose."""

    def __init__(self, pairs: Sequence[PlanePairObservation]):
        self.pairs = list(pairs)
        self.lidar_planes = [p.lidar_plane() for p in pairs]

    def residuals(self, x, with_jac=False):
        R, t = x
        res, jac = [], []
        for p, vp in zip(self.pairs, self.lidar_planes):
            q = p.camera_corners @ R.T + t
            res.append(q @ vp.normal + vp.offset)
            cp = p.camera_plane
            l_cam = (p.lidar_points - t) @ R
            res.append(l_cam @ cp.normal + cp.offset)
            if with_jac:
                # left perturbation: d(Rc+t) = [-[q]x, I], d(R^T(l-t)) = R^T [[l]x, -I]
                jac.append(np.concatenate([np.cross(q, vp.normal), np.tile(vp.normal, (len(q), 1))], axis=1))
                m = R @ cp.normal
                jac.append(np.concatenate([np.cross(m, p.lidar_points), -np.tile(m, (len(p.lidar_points), 1))], axis=1))
        r = np.concatenate(res)
        if with_jac:
            return r, np.concatenate(jac)
        return r

    def cost(self, x):
        r = self.residuals(x)
        return float(r @ r)

    def linearize(self, x):
        r, J = self.residuals(x, True)
        return float(r @ r), lm.DenseSystem(J, r)

    @staticmethod
    def update(x, step):
        return retract(x[0], x[1], step)

    def per_capture_rms(self, x) -> Dict[int, float]:
        r = self.residuals(x)
        out, k = {}, 0
        for p in self.pairs:
            n = len(p.camera_corners) + len(p.lidar_points)
            out[p.capture_index] = float(np.sqrt(np.mean(r[k : k + n] ** 2)))
            k += n
        return out


def point_plane_rms(pairs: Sequence[PlanePairObservation], pose: Pose) -> Dict[int, float]:
    """Per-capture rms of the symmetric point-to-plane residuals under ``pose``."""
    return _PlaneProblem(pairs).per_capture_rms((pose.R, pose.t))


def refine(pairs: Sequence[PlanePairObservation], init: LidarCameraExtrinsics, max_iterations: int = 100) -> LidarCameraExtrinsics:
    """LM on the symmetric point-to-plane objective, starting from ``init``."""
    problem = _PlaneProblem(pairs)
    x0 = (init.pose.R, init.pose.t)
    res = lm.levenberg_marquardt(x0, problem.linearize, problem.cost, problem.update, max_iterations=max_iterations)
    R, t = res.x
    return LidarCameraExtrinsics(Pose.from_matrix(R, t), problem.per_capture_rms(res.x), res.iterations)


def calibrate_lidar_camera(pairs: Sequence[PlanePairObservation], max_iterations: int = 100) -> LidarCameraExtrinsics:
    """Closed-form rotation and translation, then refinement."""
    rot = solve_rotation(pairs)
    t = solve_translation(pairs, rot)
    init = Pose(rot, t)
    return refine(pairs, LidarCameraExtrinsics(init, point_plane_rms(pairs, init)), max_iterations)


def project_cloud(
    extr: LidarCameraExtrinsics,
    rig_poses: Mapping[str, Pose],
    intrinsics: Mapping[str, CameraIntrinsics],
    cloud,
    cameras: Optional[Sequence[str]] = None,
) -> Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Project vehicle-frame points into each camera.

    ``rig_poses`` maps camera -> reference-camera poses.  Returns, per
    camera, ``(pixels (K, 2), depth (K,), index (K,))`` where ``index``
    points back into ``cloud``; points with non-positive camera-frame z are
    left out.
    """
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    in_ref = apply(inverse(extr.pose), pts)
    out = {}
    for cid in cameras if cameras is not None else sorted(rig_poses):
        pc = apply(inverse(rig_poses[cid]), in_ref)
        idx = np.flatnonzero(pc[:, 2] > 0)
        if idx.size:
            try:
                uv = project(intrinsics[cid], pc[idx])
            except BehindCamera:
                keep = pc[idx, 2] + intrinsics[cid].xi * np.linalg.norm(pc[idx], axis=1) > 0
                idx = idx[keep]
                uv = project(intrinsics[cid], pc[idx])
        else:
            uv = np.zeros((0, 2))
        out[cid] = (uv, pc[idx, 2], idx)
    return out
