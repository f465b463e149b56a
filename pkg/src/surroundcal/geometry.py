"""Rigid transforms, rotation fitting and plane geometry.

Conventions
-----------
* A :class:`Pose` maps points from a source frame into a target frame,
  ``p_target = R @ p_source + t``.
* Rotations are stored as unit quaternions ``(w, x, y, z)`` with ``w >= 0``.
* Tangent vectors are ordered ``(omega, rho)``: rotation part first, then
  translation part.  Perturbations are applied on the left,
  ``T <- exp(delta) @ T``.
* A :class:`Plane` is ``{p : n . p + d = 0}`` with ``|n| = 1`` and ``d <= 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateDirections, DegenerateGeometry, FrameMismatch

_SMALL_ANGLE = 1e-4


# ---------------------------------------------------------------------------
# Frame tags


@dataclass(frozen=True)
class Frame:
    """Identity of a coordinate frame: ``board``, ``camera`` (with id) or ``vehicle``."""

    kind: str
    id: Optional[str] = None

    def __str__(self):
        return self.kind if self.id is None else f"{self.kind}({self.id})"


BOARD = Frame("board")
VEHICLE = Frame("vehicle")


def camera_frame(camera_id) -> Frame:
    return Frame("camera", str(camera_id))


# ---------------------------------------------------------------------------
# Small matrix helpers (vectorised over a leading axis where it matters)


def skew(v):
    """Cross-product matrix; accepts (3,) or (N, 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    """Shepperd's method, picking the numerically largest pivot."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    pivots = [tr, R[0, 0], R[1, 1], R[2, 2]]
    k = int(np.argmax(pivots))
    if k == 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return _canonical_quat(np.array(q))


def _canonical_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError("quaternion must be finite and non-zero")
    if abs(n - 1.0) > 4e-16:
        # leave unit input untouched so serialised rotations round-trip bit-exactly
        q = q / n
    if q[0] < 0:
        q = -q
    elif q[0] == 0.0:
        nz = np.flatnonzero(q[1:])
        if nz.size and q[1 + nz[0]] < 0:
            q = -q
    return q


def so3_exp(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * W + b * (W @ W)


def _left_jacobian_coeffs(theta):
    """Coefficients (b, c) of V = I + b W + c W^2."""
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        return 0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    t2 = theta * theta
    return (1.0 - math.cos(theta)) / t2, (theta - math.sin(theta)) / (t2 * theta)


# ---------------------------------------------------------------------------
# Rotation / Pose


@dataclass(frozen=True, eq=False)
class Rotation:
    """Proper rotation held as a canonical unit quaternion ``(w, x, y, z)``."""

    quat: np.ndarray
    _matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        q = _canonical_quat(self.quat)
        q.setflags(write=False)
        object.__setattr__(self, "quat", q)
        m = quat_to_matrix(q)
        m.setflags(write=False)
        object.__setattr__(self, "_matrix", m)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, R) -> "Rotation":
        R = np.asarray(R, dtype=float)
        # re-orthonormalise so tiny drift never produces a non-unit quaternion
        U, _, Vt = np.linalg.svd(R)
        D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
        return cls(matrix_to_quat(U @ D @ Vt))

    @classmethod
    def from_rotvec(cls, omega) -> "Rotation":
        omega = np.asarray(omega, dtype=float)
        theta = float(np.linalg.norm(omega))
        if theta < _SMALL_ANGLE:
            half = 0.5 - theta * theta / 48.0
        else:
            half = math.sin(theta / 2.0) / theta
        return cls(np.concatenate([[math.cos(theta / 2.0)], half * omega]))

    @classmethod
    def about_axis(cls, axis, angle) -> "Rotation":
        axis = np.asarray(axis, dtype=float)
        return cls.from_rotvec(axis / np.linalg.norm(axis) * angle)

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def as_rotvec(self) -> np.ndarray:
        w = self.quat[0]
        v = self.quat[1:]
        s = float(np.linalg.norm(v))
        if s < 1e-12:
            # w ~ 1: atan2(s, w) / s -> 1/w
            return 2.0 * v / w
        return 2.0 * math.atan2(s, w) / s * v

    def angle(self) -> float:
        return float(np.linalg.norm(self.as_rotvec()))

    def inverse(self) -> "Rotation":
        q = self.quat
        return Rotation(np.array([q[0], -q[1], -q[2], -q[3]]))

    def __matmul__(self, other):
        if isinstance(other, Rotation):
            a, b = self.quat, other.quat
            w = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
            x = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
            y = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
            z = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
            return Rotation(np.array([w, x, y, z]))
        return np.asarray(other, dtype=float) @ self._matrix.T

    def angle_to(self, other: "Rotation") -> float:
        """Geodesic distance in radians."""
        return (self.inverse() @ other).angle()

    def __repr__(self):
        return f"Rotation(quat={np.array2string(self.quat, precision=6)})"


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``p_target = R p_source + t``.

    ``source`` / ``target`` frame tags are optional; when both operands of
    :func:`compose` are tagged the frames must chain.
    """

    rotation: Rotation
    translation: np.ndarray
    source: Optional[Frame] = None
    target: Optional[Frame] = None

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, source=None, target=None) -> "Pose":
        return cls(Rotation.identity(), np.zeros(3), source, target)

    @classmethod
    def from_matrix(cls, R, t, source=None, target=None) -> "Pose":
        return cls(Rotation.from_matrix(R), t, source, target)

    @classmethod
    def from_homogeneous(cls, T, source=None, target=None) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls.from_matrix(T[:3, :3], T[:3, 3], source, target)

    @property
    def R(self) -> np.ndarray:
        return self.rotation.matrix

    @property
    def t(self) -> np.ndarray:
        return self.translation

    def homogeneous(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def inverse(self) -> "Pose":
        return inverse(self)

    def __matmul__(self, other):
        if isinstance(other, Pose):
            return compose(self, other)
        return apply(self, other)

    def with_frames(self, source=None, target=None) -> "Pose":
        return Pose(self.rotation, self.translation, source, target)

    def __repr__(self):
        frames = ""
        if self.source is not None or self.target is not None:
            frames = f", {self.source} -> {self.target}"
        return f"Pose(q={np.array2string(self.rotation.quat, precision=6)}, t={np.array2string(self.t, precision=6)}{frames})"


def compose(a: Pose, b: Pose) -> Pose:
    """``a @ b``: apply ``b`` first, then ``a``."""
    if a.source is not None and b.target is not None and a.source != b.target:
        raise FrameMismatch(f"cannot compose {a.source}->{a.target} after {b.source}->{b.target}")
    return Pose(a.rotation @ b.rotation, a.R @ b.t + a.t, b.source, a.target)


def inverse(p: Pose) -> Pose:
    rinv = p.rotation.inverse()
    return Pose(rinv, -(rinv.matrix @ p.t), p.target, p.source)


def apply(p: Pose, pts) -> np.ndarray:
    """Transform a point (3,) or an array of points (N, 3)."""
    pts = np.asarray(pts, dtype=float)
    return pts @ p.R.T + p.t


def pose_exp(tangent) -> Pose:
    """SE(3) exponential of ``(omega, rho)``."""
    v = np.asarray(tangent, dtype=float).reshape(6)
    omega, rho = v[:3], v[3:]
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    b, c = _left_jacobian_coeffs(theta)
    V = np.eye(3) + b * W + c * (W @ W)
    return Pose(Rotation.from_rotvec(omega), V @ rho)


def pose_log(p: Pose) -> np.ndarray:
    """Inverse of :func:`pose_exp`; rotation angle must be below pi."""
    omega = p.rotation.as_rotvec()
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        e = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        e = (1.0 - theta * math.sin(theta) / (2.0 * (1.0 - math.cos(theta)))) / (theta * theta)
    Vinv = np.eye(3) - 0.5 * W + e * (W @ W)
    return np.concatenate([omega, Vinv @ p.t])


def retract(R, t, delta):
    """Left-perturb a raw (R, t) pair by ``exp(delta)``; used by the solvers."""
    E = pose_exp(delta)
    return E.R @ R, E.R @ t + E.t


def retract_batch(Rs, ts, deltas):
    """Vectorised :func:`retract` over stacks (K,3,3), (K,3), (K,6)."""
    deltas = np.asarray(deltas, dtype=float).reshape(-1, 6)
    omega, rho = deltas[:, :3], deltas[:, 3:]
    theta = np.linalg.norm(omega, axis=1)
    t2 = theta * theta
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    s2 = safe * safe
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(safe)) / s2)
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0, (safe - np.sin(safe)) / (s2 * safe))
    W = skew(omega)
    W2 = W @ W
    eye = np.eye(3)
    E = eye + a[:, None, None] * W + b[:, None, None] * W2
    V = eye + b[:, None, None] * W + c[:, None, None] * W2
    Rn = E @ Rs
    tn = np.einsum("kij,kj->ki", E, ts) + np.einsum("kij,kj->ki", V, rho)
    return Rn, tn


# ---------------------------------------------------------------------------
# Rotation fitting


def rotation_from_direction_pairs(src, dst, tol: float = 1e-6) -> Rotation:
    """Proper rotation ``R`` minimising ``sum |dst_i - R src_i|^2``.

    Raises :class:`DegenerateDirections` when every source direction is
    parallel (or anti-parallel) to the first within ``tol`` radians.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("src and dst must have the same length")
    if len(src) < 2:
        raise DegenerateDirections("need at least two direction pairs")
    su = src / np.linalg.norm(src, axis=1, keepdims=True)
    sines = np.linalg.norm(np.cross(su[0], su), axis=1)
    if np.max(sines) < math.sin(tol):
        raise DegenerateDirections("all source directions are parallel; rotation about them is unobservable")
    M = dst.T @ src
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    return Rotation.from_matrix(U @ D @ Vt)


# ---------------------------------------------------------------------------
# Planes


@dataclass(frozen=True, eq=False)
class Plane:
    """``{p : normal . p + offset = 0}`` in canonical sign."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.array(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if norm == 0 or not np.isfinite(norm):
            raise ValueError("plane normal must be finite and non-zero")
        n, d = n / norm, float(self.offset) / norm
        flip = d > 0
        if d == 0:
            k = int(np.argmax(np.abs(n)))
            flip = n[k] < 0
        if flip:
            n, d = -n, -d
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", d)

    def signed_distance(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ self.normal + self.offset

    def transformed(self, pose: Pose) -> "Plane":
        n = pose.R @ self.normal
        return Plane(n, self.offset - n @ pose.t)

    def oriented_toward_origin(self):
        """Normal and offset flipped so the frame origin lies on the positive side."""
        return -self.normal, -self.offset

    def __repr__(self):
        return f"Plane(normal={np.array2string(self.normal, precision=6)}, offset={self.offset:.6g})"


def fit_plane(points, rel_tol: float = 1e-9):
    """Total-least-squares plane through ``points``.

    Returns ``(plane, rms)`` where ``rms`` is the root-mean-square
    point-to-plane distance.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(P) < 3:
        raise DegenerateGeometry("need at least three points to fit a plane")
    c = P.mean(axis=0)
    _, s, Vt = np.linalg.svd(P - c, full_matrices=False)
    if s[0] == 0 or s[1] < rel_tol * s[0]:
        raise DegenerateGeometry("points are collinear")
    n = Vt[2]
    plane = Plane(n, -float(n @ c))
    rms = float(np.sqrt(np.mean(plane.signed_distance(P) ** 2)))
    return plane, rms


def plane_angle(a: Plane, b: Plane) -> float:
    """Unsigned angle between plane normals, ignoring orientation."""
    c = abs(float(np.clip(a.normal @ b.normal, -1.0, 1.0)))
    return math.acos(min(1.0, c))


def random_rotation(rng: np.random.Generator) -> Rotation:
    q = rng.normal(size=4)
    return Rotation(q)


def random_pose(rng: np.random.Generator, scale: float = 1.0) -> Pose:
    return Pose(random_rotation(rng), rng.normal(scale=scale, size=3))


def stack_points(points: Sequence) -> np.ndarray:
    return np.asarray(points, dtype=float).reshape(-1, 3)
