"""Unified (sphere) catadioptric camera model and checkerboard calibration.

Projection chain for a camera-frame point ``P = (x, y, z)``::

    m   = (x, y) / (z + xi * |P|)                    # sphere, shifted by xi
    m_d = m * (1 + k1 r^2 + k2 r^4) + tangential(m)   # r^2 = |m|^2
    uv  = (fx * m_d.x + cx, fy * m_d.y + cy)

With ``xi = 0`` this is exactly the pinhole + radial-tangential model.
Intrinsic vectors are always ordered ``(xi, fx, fy, cx, cy, k1, k2, p1, p2)``.
Reprojection rms is taken over residual components (u and v counted separately).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from . import lm
from .errors import BehindCamera, DegenerateGeometry, InsufficientViews, NoConvergence
from .geometry import Pose, Rotation, retract, retract_batch, skew

INTRINSIC_NAMES = ("xi", "fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2")
IMAGE_SIZE = (1600, 1200)


@dataclass(frozen=True)
class CameraIntrinsics:
    xi: float
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    width: int = IMAGE_SIZE[0]
    height: int = IMAGE_SIZE[1]

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.xi < 0:
            raise ValueError("xi must be non-negative")

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in INTRINSIC_NAMES], dtype=float)

    @classmethod
    def from_vector(cls, v, width=IMAGE_SIZE[0], height=IMAGE_SIZE[1]) -> "CameraIntrinsics":
        v = [float(a) for a in v]
        return cls(*v, width=width, height=height)

    def with_vector(self, v) -> "CameraIntrinsics":
        return CameraIntrinsics.from_vector(v, self.width, self.height)

    def in_image(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return (uv[..., 0] >= 0) & (uv[..., 0] < self.width) & (uv[..., 1] >= 0) & (uv[..., 1] < self.height)


@dataclass(frozen=True)
class CheckerboardSpec:
    inner_rows: int = 6
    inner_cols: int = 9
    square_size: float = 0.08

    def __post_init__(self):
        if self.inner_rows < 2 or self.inner_cols < 2:
            raise ValueError("checkerboard needs at least 2x2 inner corners")
        if self.inner_rows == self.inner_cols:
            raise ValueError("inner_rows and inner_cols must differ so the board orientation is unambiguous")
        if not self.square_size > 0:
            raise ValueError("square_size must be positive")

    @property
    def n_corners(self) -> int:
        return self.inner_rows * self.inner_cols

    @property
    def extent(self) -> Tuple[float, float]:
        return (self.inner_cols - 1) * self.square_size, (self.inner_rows - 1) * self.square_size

    def __str__(self):
        return f"{self.inner_rows}x{self.inner_cols}x{self.square_size!r}"

    @classmethod
    def parse(cls, text: str) -> "CheckerboardSpec":
        rows, cols, size = text.split("x")
        return cls(int(rows), int(cols), float(size))


@dataclass(frozen=True)
class CornerObservation:
    corner_id: int
    pixel: Tuple[float, float]


@dataclass(frozen=True, eq=False)
class ViewObservation:
    """Corners of one board capture seen by one camera.

    Stored column-wise: ``corner_ids`` (N,) and ``pixels`` (N, 2).
    """

    camera_id: str
    capture_index: int
    corner_ids: np.ndarray
    pixels: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.corner_ids, dtype=np.int64).reshape(-1)
        px = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        if len(ids) != len(px):
            raise ValueError("corner_ids and pixels differ in length")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("corner ids must be unique within a view")
        ids.setflags(write=False)
        px.setflags(write=False)
        object.__setattr__(self, "camera_id", str(self.camera_id))
        object.__setattr__(self, "capture_index", int(self.capture_index))
        object.__setattr__(self, "corner_ids", ids)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_corners(cls, camera_id, capture_index, corners: Sequence[CornerObservation]):
        return cls(camera_id, capture_index, [c.corner_id for c in corners], [c.pixel for c in corners])

    @property
    def corners(self) -> List[CornerObservation]:
        return [CornerObservation(int(i), (float(u), float(v))) for i, (u, v) in zip(self.corner_ids, self.pixels)]

    def __len__(self):
        return len(self.corner_ids)

    def __eq__(self, other):
        if not isinstance(other, ViewObservation):
            return NotImplemented
        return (
            self.camera_id == other.camera_id
            and self.capture_index == other.capture_index
            and np.array_equal(self.corner_ids, other.corner_ids)
            and np.array_equal(self.pixels, other.pixels)
        )


def board_points(spec: CheckerboardSpec) -> np.ndarray:
    """Row-major inner-corner grid in the board frame, columns along x."""
    r, c = np.meshgrid(np.arange(spec.inner_rows), np.arange(spec.inner_cols), indexing="ij")
    pts = np.zeros((spec.n_corners, 3))
    pts[:, 0] = c.ravel() * spec.square_size
    pts[:, 1] = r.ravel() * spec.square_size
    return pts


# ---------------------------------------------------------------------------
# Projection


def _as_vec(intr):
    return intr.to_vector() if isinstance(intr, CameraIntrinsics) else np.asarray(intr, dtype=float)


def _check_front(P, xi, n=None):
    if n is None:
        n = np.linalg.norm(P, axis=-1)
    den = P[..., 2] + xi * n
    bad = ~(den > 0) if xi > 0 else ~(P[..., 2] > 0)
    if np.any(bad):
        raise BehindCamera(f"{int(np.count_nonzero(bad))} point(s) outside the model's valid half-space")
    return n, den


def _distort(m, k1, k2, p1, p2):
    mx, my = m[..., 0], m[..., 1]
    r2 = mx * mx + my * my
    rad = 1.0 + k1 * r2 + k2 * r2 * r2
    dx = mx * rad + 2.0 * p1 * mx * my + p2 * (r2 + 2.0 * mx * mx)
    dy = my * rad + p1 * (r2 + 2.0 * my * my) + 2.0 * p2 * mx * my
    return np.stack([dx, dy], axis=-1)


def project(intr, pts) -> np.ndarray:
    """Pixel coordinates of camera-frame point(s); (3,) -> (2,), (N,3) -> (N,2)."""
    xi, fx, fy, cx, cy, k1, k2, p1, p2 = _as_vec(intr)
    P = np.asarray(pts, dtype=float)
    n, den = _check_front(P, xi)
    m = P[..., :2] / den[..., None]
    md = _distort(m, k1, k2, p1, p2)
    return np.stack([fx * md[..., 0] + cx, fy * md[..., 1] + cy], axis=-1)


def project_jacobians(intr, pts):
    """Projection with analytic derivatives.

    Returns ``(uv, J_point, J_intrinsics, J_pose)`` with shapes
    ``(N,2)``, ``(N,2,3)``, ``(N,2,9)``, ``(N,2,6)``.  ``J_pose`` is taken
    with respect to a left perturbation ``exp(delta)`` of the point's frame,
    tangent ordered ``(omega, rho)``.  A single (3,) point gives
    un-batched shapes.
    """
    P = np.asarray(pts, dtype=float)
    single = P.ndim == 1
    P = P.reshape(-1, 3)
    xi, fx, fy, cx, cy, k1, k2, p1, p2 = _as_vec(intr)
    n, den = _check_front(P, xi)
    N = len(P)

    m = P[:, :2] / den[:, None]
    mx, my = m[:, 0], m[:, 1]
    r2 = mx * mx + my * my
    rad = 1.0 + k1 * r2 + k2 * r2 * r2
    md = _distort(m, k1, k2, p1, p2)
    uv = np.stack([fx * md[:, 0] + cx, fy * md[:, 1] + cy], axis=-1)

    # d m / d P
    dden = np.zeros((N, 3))
    dden[:, 2] = 1.0
    safe_n = np.where(n > 0, n, 1.0)
    dden += xi * P / safe_n[:, None]
    dm_dP = np.zeros((N, 2, 3))
    dm_dP[:, 0, 0] = 1.0 / den
    dm_dP[:, 1, 1] = 1.0 / den
    dm_dP -= (m / den[:, None])[:, :, None] * dden[:, None, :]

    # d md / d m
    drad = (k1 + 2.0 * k2 * r2)[:, None] * 2.0 * m
    dmd_dm = np.empty((N, 2, 2))
    dmd_dm[:, 0, 0] = rad + mx * drad[:, 0] + 2.0 * p1 * my + 6.0 * p2 * mx
    dmd_dm[:, 0, 1] = mx * drad[:, 1] + 2.0 * p1 * mx + 2.0 * p2 * my
    dmd_dm[:, 1, 0] = my * drad[:, 0] + 2.0 * p1 * mx + 2.0 * p2 * my
    dmd_dm[:, 1, 1] = rad + my * drad[:, 1] + 6.0 * p1 * my + 2.0 * p2 * mx

    F = np.array([fx, fy])
    duv_dm = F[None, :, None] * dmd_dm
    J_pt = duv_dm @ dm_dP

    J_in = np.zeros((N, 2, 9))
    dm_dxi = -m * (n / den)[:, None]
    J_in[:, :, 0] = np.einsum("nij,nj->ni", duv_dm, dm_dxi)
    J_in[:, 0, 1] = md[:, 0]
    J_in[:, 1, 2] = md[:, 1]
    J_in[:, 0, 3] = 1.0
    J_in[:, 1, 4] = 1.0
    J_in[:, :, 5] = F * (m * r2[:, None])
    J_in[:, :, 6] = F * (m * (r2 * r2)[:, None])
    J_in[:, 0, 7] = fx * 2.0 * mx * my
    J_in[:, 1, 7] = fy * (r2 + 2.0 * my * my)
    J_in[:, 0, 8] = fx * (r2 + 2.0 * mx * mx)
    J_in[:, 1, 8] = fy * 2.0 * mx * my

    dP_dxi = np.concatenate([-skew(P), np.broadcast_to(np.eye(3), (N, 3, 3))], axis=2)
    J_pose = J_pt @ dP_dxi

    if single:
        return uv[0], J_pt[0], J_in[0], J_pose[0]
    return uv, J_pt, J_in, J_pose


def _lift(intr_vec, m):
    """Normalised undistorted coordinates -> unit rays on the sphere."""
    xi = intr_vec[0]
    r2 = np.sum(m * m, axis=-1)
    disc = 1.0 + (1.0 - xi * xi) * r2
    if np.any(disc < 0):
        raise BehindCamera("pixel lies outside the model's field of view")
    fac = (xi + np.sqrt(disc)) / (r2 + 1.0)
    ray = np.concatenate([fac[..., None] * m, (fac - xi)[..., None]], axis=-1)
    return ray / np.linalg.norm(ray, axis=-1, keepdims=True)


def undistort_normalized(intr, md, max_iter: int = 50, tol: float = 1e-12) -> np.ndarray:
    """Invert the distortion map by fixed-point iteration."""
    xi, fx, fy, cx, cy, k1, k2, p1, p2 = _as_vec(intr)
    md = np.asarray(md, dtype=float)
    m = md.copy()
    for _ in range(max_iter):
        mx, my = m[..., 0], m[..., 1]
        r2 = mx * mx + my * my
        rad = 1.0 + k1 * r2 + k2 * r2 * r2
        tx = 2.0 * p1 * mx * my + p2 * (r2 + 2.0 * mx * mx)
        ty = p1 * (r2 + 2.0 * my * my) + 2.0 * p2 * mx * my
        m_new = np.stack([(md[..., 0] - tx) / rad, (md[..., 1] - ty) / rad], axis=-1)
        delta = np.max(np.abs(m_new - m)) if m.size else 0.0
        m = m_new
        if delta < tol:
            return m
    raise NoConvergence("distortion inversion did not converge")


def unproject(intr, pixels) -> np.ndarray:
    """Unit viewing ray(s) for pixel(s); (2,) -> (3,), (N,2) -> (N,3)."""
    v = _as_vec(intr)
    px = np.asarray(pixels, dtype=float)
    md = np.stack([(px[..., 0] - v[3]) / v[1], (px[..., 1] - v[4]) / v[2]], axis=-1)
    return _lift(v, undistort_normalized(v, md))


# ---------------------------------------------------------------------------
# Single-view pose


def _normalize_2d(pts):
    c = pts.mean(axis=0)
    s = math.sqrt(2.0) / max(np.mean(np.linalg.norm(pts - c, axis=1)), 1e-300)
    T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])
    return T


def homography_dlt(src, dst) -> np.ndarray:
    """Normalised DLT homography mapping 2D ``src`` onto ``dst``."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if len(src) < 4:
        raise DegenerateGeometry("homography needs at least four correspondences")
    Ts, Td = _normalize_2d(src), _normalize_2d(dst)
    s = (np.c_[src, np.ones(len(src))] @ Ts.T)[:, :2]
    d = (np.c_[dst, np.ones(len(dst))] @ Td.T)[:, :2]
    n = len(src)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:2] = s
    A[0::2, 2] = 1
    A[0::2, 6:8] = -d[:, :1] * s
    A[0::2, 8] = -d[:, 0]
    A[1::2, 3:5] = s
    A[1::2, 5] = 1
    A[1::2, 6:8] = -d[:, 1:2] * s
    A[1::2, 8] = -d[:, 1]
    _, sv, Vt = np.linalg.svd(A)
    H = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ H @ Ts
    return H / H[2, 2] if abs(H[2, 2]) > 1e-300 else H


def _check_noncollinear(xy, what="board points"):
    c = xy - xy.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    if len(s) < 2 or s[0] == 0 or s[1] < 1e-9 * s[0]:
        raise DegenerateGeometry(f"{what} are collinear")


def pose_from_homography(H) -> Pose:
    """Board->camera pose from a homography onto normalised pinhole coordinates."""
    h1, h2, h3 = H[:, 0], H[:, 1], H[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    if lam * h3[2] < 0:
        lam = -lam
    r1, r2, t = lam * h1, lam * h2, lam * h3
    R = np.column_stack([r1, r2, np.cross(r1, r2)])
    return Pose.from_matrix(R, t)


def reprojection_residuals(intr, pose: Pose, obj_pts, pixels) -> np.ndarray:
    return project(intr, obj_pts @ pose.R.T + pose.t) - pixels


@dataclass
class BoardPoseEstimate:
    pose: Pose
    rms: float
    iterations: int


def estimate_board_pose(
    intr: CameraIntrinsics, view: ViewObservation, spec: CheckerboardSpec, require_convergence: bool = True
) -> BoardPoseEstimate:
    """Board->camera pose of one view: homography initialisation + reprojection refinement.

    With ``require_convergence=False`` the refinement's best iterate is
    returned even if it ran out of iterations (useful for seeding).
    """
    if len(view) < 4:
        raise DegenerateGeometry(f"view {view.camera_id}@{view.capture_index} has fewer than 4 corners")
    obj = board_points(spec)[view.corner_ids]
    _check_noncollinear(obj[:, :2])
    rays = unproject(intr, view.pixels)
    if np.any(rays[:, 2] <= 1e-6):
        raise DegenerateGeometry("corner rays at or beyond 90 degrees cannot seed a homography")
    norm_xy = rays[:, :2] / rays[:, 2:3]
    H = homography_dlt(obj[:, :2], norm_xy)
    if not np.all(np.isfinite(H)):
        raise DegenerateGeometry("homography estimation failed")
    init = pose_from_homography(H)

    iv = intr.to_vector()
    px = view.pixels

    def cost_of(x):
        R, t = x
        try:
            r = project(iv, obj @ R.T + t) - px
        except BehindCamera:
            return np.inf
        return float(np.sum(r * r))

    def linearize(x):
        R, t = x
        Pc = obj @ R.T + t
        uv, _, _, Jp = project_jacobians(iv, Pc)
        r = (uv - px).ravel()
        return float(r @ r), lm.DenseSystem(Jp.reshape(-1, 6), r)

    def update(x, step):
        return retract(x[0], x[1], step)

    x0 = (init.R, init.t)
    if not np.isfinite(cost_of(x0)):
        raise DegenerateGeometry("homography pose places the board behind the camera")
    res = lm.levenberg_marquardt(x0, linearize, cost_of, update, max_iterations=100, raise_on_failure=require_convergence)
    R, t = res.x
    return BoardPoseEstimate(Pose.from_matrix(R, t), math.sqrt(res.cost / px.size), res.iterations)


# ---------------------------------------------------------------------------
# Intrinsic calibration


def _zhang_intrinsics(homographies) -> Tuple[float, float, float, float]:
    """Closed-form (fx, fy, cx, cy) from board->pixel homographies, zero skew."""

    def v(H, i, j):
        return np.array(
            [
                H[0, i] * H[0, j],
                H[0, i] * H[2, j] + H[2, i] * H[0, j],
                H[1, i] * H[1, j],
                H[1, i] * H[2, j] + H[2, i] * H[1, j],
                H[2, i] * H[2, j],
            ]
        )

    rows = []
    for H in homographies:
        H = H / np.linalg.norm(H)
        rows.append(v(H, 0, 1))
        rows.append(v(H, 0, 0) - v(H, 1, 1))
    V = np.array(rows)
    _, s, Vt = np.linalg.svd(V)
    if s[-2] < 1e-12 * s[0]:
        raise DegenerateGeometry("board orientations do not constrain the focal lengths (parallel boards?)")
    B11, B13, B22, B23, B33 = Vt[-1]
    if B11 < 0:
        B11, B13, B22, B23, B33 = -B11, -B13, -B22, -B23, -B33
    if B11 <= 0 or B22 <= 0:
        raise DegenerateGeometry("closed-form intrinsic estimate is not positive definite")
    cx = -B13 / B11
    cy = -B23 / B22
    lam = B33 - B13 * B13 / B11 - B23 * B23 / B22
    if lam <= 0:
        raise DegenerateGeometry("closed-form intrinsic estimate is not positive definite")
    return math.sqrt(lam / B11), math.sqrt(lam / B22), cx, cy


@dataclass
class IntrinsicCalibration:
    intrinsics: CameraIntrinsics
    poses: Dict[int, Pose]
    rms: float
    initial_rms: float
    iterations: int
    per_view_rms: Dict[int, float] = field(default_factory=dict)


def _check_orientations(poses: Sequence[Pose], tol_rad: float = 1e-3):
    normals = np.array([p.R[:, 2] for p in poses])
    sines = np.linalg.norm(np.cross(normals[0], normals), axis=1)
    if np.max(sines) < math.sin(tol_rad):
        raise DegenerateGeometry("all board views are parallel; intrinsics are unobservable")


def _to_internal(iv):
    """Swap focal lengths for the generalised focal ``f / (1 + xi)``.

    Near the optical axis the image only depends on the generalised focal,
    so optimising it instead of ``f`` decorrelates xi from the focal lengths.
    """
    v = np.array(iv, dtype=float)
    v[1:3] = v[1:3] / (1.0 + v[0])
    return v


def _from_internal(w):
    v = np.array(w, dtype=float)
    v[1:3] = v[1:3] * (1.0 + v[0])
    return v


def _internal_chain(w):
    """d(model vector) / d(internal vector)."""
    M = np.eye(9)
    M[1, 1] = M[2, 2] = 1.0 + w[0]
    M[1, 0] = w[1]
    M[2, 0] = w[2]
    return M


class _IntrinsicProblem:
    """State ``(internal intrinsics, [(R, t) per view])``; all corners batched."""

    def __init__(self, views, spec, fix_xi=False, xi_max=2.0):
        obj = board_points(spec)
        self.xi_max = xi_max
        self.fix_xi = fix_xi
        self.n_views = len(views)
        self.pts = np.concatenate([obj[v.corner_ids] for v in views])
        self.pixels = np.concatenate([v.pixels for v in views])
        counts = np.array([len(v) for v in views])
        self.view_of = np.repeat(np.arange(len(views)), counts)
        self.starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.n_corners = len(self.pts)
        self.gidx = np.tile(np.arange(9), (len(views), 1))

    def _camera_points(self, poses):
        Rs = np.array([R for R, _ in poses])
        ts = np.array([t for _, t in poses])
        return np.einsum("nij,nj->ni", Rs[self.view_of], self.pts) + ts[self.view_of]

    def cost(self, x):
        w, poses = x
        try:
            r = project(_from_internal(w), self._camera_points(poses)) - self.pixels
        except BehindCamera:
            return np.inf
        return float(np.sum(r * r))

    def linearize(self, x):
        w, poses = x
        iv = _from_internal(w)
        M = _internal_chain(w)
        if self.fix_xi:
            M[:, 0] = 0.0
        uv, _, Ji, Jp = project_jacobians(iv, self._camera_points(poses))
        r = uv - self.pixels
        sys = lm.SchurSystem(9, self.n_views)
        sys.add_batched(self.starts, np.arange(self.n_views), self.gidx, Ji @ M, Jp, r)
        sys.finalize()
        if not self.fix_xi and _xi_blocked(w[0], sys.g_g[0], self.xi_max):
            # xi sits on a bound and descent points outward: freeze it this iteration
            sys.H_gg[0, :] = 0.0
            sys.H_gg[:, 0] = 0.0
            sys.H_gl[:, 0, :] = 0.0
            sys.g_g[0] = 0.0
            sys.finalize()
        return float(np.sum(r * r)), sys

    def update(self, x, step):
        w, poses = x
        w = w + step[:9]
        if self.fix_xi:
            w[0] = x[0][0]
        w[0] = min(max(w[0], 0.0), self.xi_max)
        w[1] = max(w[1], 1e-6)
        w[2] = max(w[2], 1e-6)
        Rs, ts = retract_batch(np.array([R for R, _ in poses]), np.array([t for _, t in poses]), step[9:])
        return w, list(zip(Rs, ts))


def _xi_blocked(xi, grad, xi_max):
    return (xi <= 0.0 and grad > 0) or (xi >= xi_max and grad < 0)


def _reseed_poor_views(problem, x, views, spec):
    """Re-estimate poses of badly fitting views from the current intrinsics.

    A pose seeded under a poor lens model can sit in the mirrored basin of
    the planar-target ambiguity, where joint refinement cannot move it.
    Returns the new state and whether any pose changed.
    """
    w, poses = x
    iv = _from_internal(w)
    r = project(iv, problem._camera_points(poses)) - problem.pixels
    per_view = np.bincount(problem.view_of, weights=np.sum(r * r, axis=1), minlength=problem.n_views)
    mean_sq = per_view / np.bincount(problem.view_of, minlength=problem.n_views)
    bad = np.flatnonzero(mean_sq > 4.0 * np.median(mean_sq))
    if not bad.size:
        return x, False
    intr = CameraIntrinsics(*iv)
    poses = list(poses)
    changed = False
    for i in bad:
        try:
            est = estimate_board_pose(intr, views[i], spec, require_convergence=False)
        except (DegenerateGeometry, BehindCamera):
            continue
        if est.rms**2 * 2 * len(views[i]) < per_view[i]:
            poses[i] = (est.pose.R, est.pose.t)
            changed = True
    return (w, poses), changed


def _refit_fixed(problem, x, xi, max_iterations):
    w = x[0].copy()
    w[0] = xi
    return lm.levenberg_marquardt((w, x[1]), problem.linearize, problem.cost, problem.update, max_iterations=max_iterations, raise_on_failure=False).x


XI_MAX = 2.0
XI_PROFILE = tuple(np.round(np.arange(0.0, XI_MAX + 0.01, 0.25), 2))


def calibrate_intrinsics(
    views: Sequence[ViewObservation],
    spec: CheckerboardSpec,
    image_size: Tuple[int, int] = IMAGE_SIZE,
    xi_grid: Sequence[float] = XI_PROFILE,
    xi_max: float = XI_MAX,
    max_iterations: int = 100,
) -> IntrinsicCalibration:
    """Calibrate one camera from several board views.

    1. closed-form pinhole estimate (``xi = 0``, no distortion) from the
       board homographies, per-view poses by :func:`estimate_board_pose`;
    2. a coarse profile over ``xi_grid``: every other parameter refined with
       ``xi`` held fixed, warm-started along the grid;
    3. joint refinement of all nine intrinsics and all view poses from the
       best profile point (parabolic interpolation between grid points).

    Step 2 exists because ``xi`` trades off against the focal length and the
    radial terms; refining it jointly from a distant start crawls along that
    valley.
    """
    views = [v for v in views if len(v) >= 4]
    if len(views) < 3:
        raise InsufficientViews(f"need at least 3 usable views, got {len(views)}")
    cams = {v.camera_id for v in views}
    if len(cams) != 1:
        raise ValueError(f"views from several cameras: {sorted(cams)}")
    views = sorted(views, key=lambda v: v.capture_index)
    obj_all = board_points(spec)
    for v in views:
        _check_noncollinear(obj_all[v.corner_ids][:, :2])

    Hs = [homography_dlt(obj_all[v.corner_ids][:, :2], v.pixels) for v in views]
    fx, fy, cx, cy = _zhang_intrinsics(Hs)
    width, height = image_size
    pin = CameraIntrinsics(0.0, fx, fy, cx, cy, width=width, height=height)
    # the pinhole model misfits wide lenses, so these poses are seeds only
    poses = [estimate_board_pose(pin, v, spec, require_convergence=False).pose for v in views]
    _check_orientations(poses)

    fixed = _IntrinsicProblem(views, spec, fix_xi=True, xi_max=xi_max)
    free = _IntrinsicProblem(views, spec, xi_max=xi_max)
    x = (_to_internal(pin.to_vector()), [(p.R, p.t) for p in poses])
    initial_cost = free.cost(x)

    profile = []
    for xi in sorted(x for x in xi_grid if 0 <= x <= xi_max):
        w = x[0].copy()
        w[0] = xi
        res = lm.levenberg_marquardt((w, x[1]), fixed.linearize, fixed.cost, fixed.update, max_iterations=max_iterations, raise_on_failure=False)
        if np.isfinite(res.cost):
            reseeded, changed = _reseed_poor_views(fixed, res.x, views, spec)
            if changed:
                again = lm.levenberg_marquardt(reseeded, fixed.linearize, fixed.cost, fixed.update, max_iterations=max_iterations, raise_on_failure=False)
                if again.cost < res.cost:
                    res = again
            profile.append((res.cost, xi, res.x))
            x = res.x
    if not profile:
        raise NoConvergence("intrinsic profile failed at every xi")
    k = int(np.argmin([c for c, _, _ in profile]))
    start = profile[k][2]
    lo = profile[max(k - 1, 0)][1]
    hi = profile[min(k + 1, len(profile) - 1)][1]
    if hi > lo:
        warm = {"x": start}

        def profile_cost(xi):
            w = warm["x"][0].copy()
            w[0] = xi
            r = lm.levenberg_marquardt((w, warm["x"][1]), fixed.linearize, fixed.cost, fixed.update, max_iterations=max_iterations, raise_on_failure=False)
            if np.isfinite(r.cost):
                warm["x"] = r.x
            return r.cost

        opt = minimize_scalar(profile_cost, bounds=(lo, hi), method="bounded", options={"xatol": 1e-3})
        if opt.fun <= profile[k][0]:
            start = warm["x"] if warm["x"][0][0] == opt.x else _refit_fixed(fixed, warm["x"], opt.x, max_iterations)

    try:
        best = lm.levenberg_marquardt(start, free.linearize, free.cost, free.update, max_iterations=max_iterations)
    except NoConvergence as exc:
        raise NoConvergence(str(exc), exc.result) from None

    w, poses = best.x
    iv = _from_internal(w)
    intr = pin.with_vector(iv)
    per_view = {}
    out_poses = {}
    for v, (R, t) in zip(views, poses):
        r = project(iv, obj_all[v.corner_ids] @ R.T + t) - v.pixels
        per_view[v.capture_index] = float(np.sqrt(np.mean(r * r)))
        out_poses[v.capture_index] = Pose.from_matrix(R, t)
    return IntrinsicCalibration(
        intr,
        out_poses,
        math.sqrt(best.cost / (2 * free.n_corners)),
        math.sqrt(initial_cost / (2 * free.n_corners)),
        best.iterations,
        per_view,
    )
